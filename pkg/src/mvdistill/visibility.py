"""Hidden point removal: per-view visible anchor subsets.

A point is visible from a viewpoint when its spherically flipped image
q * (2R/d - 1) lies on the convex hull of the flipped set plus the
viewpoint itself. Degenerate sets (affine rank < 3) fall back to marking
every anchor visible rather than dropping anchors from the distillation
signal.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DegenerateHull,
    PointAtViewpoint,
    RadiusTooSmall,
    TruncatedFile,
    UnsupportedVersion,
)
from .geometry import PointCloud, ViewRig, camera_position
from .hull import convex_hull3

# R = flip_factor * max distance; large values approach the limit visibility
# operator of the flipping construction.
DEFAULT_FLIP_FACTOR = 100.0

_MASK_MAGIC = b"MVMK"
_MASK_VERSION = 1


@dataclass(frozen=True)
class VisibilityMask:
    """Sorted anchor indices visible from one rig view."""

    view_index: int
    visible: np.ndarray  # strictly increasing indices into the anchor set
    num_anchors: int

    def __post_init__(self):
        idx = np.asarray(self.visible, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("visible must be a flat index array")
        if len(idx) and (np.diff(idx) <= 0).any():
            raise ValueError("visible indices must be strictly increasing")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.num_anchors):
            raise ValueError("visible indices out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "visible", idx)

    def __len__(self) -> int:
        return len(self.visible)


def spherical_flip(points, viewpoint, radius: float) -> np.ndarray:
    """Reflect points about the sphere of the given radius at the viewpoint.

    Each q = p - viewpoint maps to q * (2R/d - 1), so distances along every
    ray are inverted: the nearest point lands farthest out.
    """
    pts = np.asarray(points, dtype=np.float64)
    vp = np.asarray(viewpoint, dtype=np.float64)
    q = pts - vp
    d = np.sqrt((q * q).sum(axis=1))
    if (d <= 1e-9).any():
        raise PointAtViewpoint(f"{int((d <= 1e-9).sum())} point(s) coincide with the viewpoint")
    dmax = float(d.max())
    if radius < dmax:
        raise RadiusTooSmall(f"radius {radius} < max point distance {dmax}")
    return q * (2.0 * radius / d - 1.0)[:, None]


def hpr_visible(
    anchors: PointCloud,
    viewpoint,
    flip_factor: float = DEFAULT_FLIP_FACTOR,
    view_index: int = 0,
) -> VisibilityMask:
    """Visible-anchor mask for one viewpoint via hidden point removal."""
    pts = anchors.points
    vp = np.asarray(viewpoint, dtype=np.float64)
    q = pts - vp
    d = np.sqrt((q * q).sum(axis=1))
    if (d <= 1e-9).any():
        raise PointAtViewpoint("anchor at the viewpoint")
    radius = flip_factor * float(d.max())
    flipped = q * (2.0 * radius / d - 1.0)[:, None]
    # the viewpoint joins the hull input as the origin of the flipped frame
    hull_input = np.concatenate([flipped, np.zeros((1, 3))])
    try:
        hull = convex_hull3(hull_input)
    except DegenerateHull:
        # rank-deficient sets (<= 3 points, collinear or coplanar): keep all
        visible = np.arange(anchors.n_points, dtype=np.int64)
        return VisibilityMask(view_index, visible, anchors.n_points)
    on_hull = hull.vertex_indices[hull.vertex_indices < anchors.n_points]
    if len(on_hull) == 0:
        visible = np.zeros(0, dtype=np.int64)
        return VisibilityMask(view_index, visible, anchors.n_points)
    # exact duplicates of a hull vertex share its visibility
    keys = flipped.view([("x", np.float64), ("y", np.float64), ("z", np.float64)]).ravel()
    visible_keys = np.unique(keys[on_hull])
    visible = np.nonzero(np.isin(keys, visible_keys))[0].astype(np.int64)
    return VisibilityMask(view_index, visible, anchors.n_points)


def compute_rig_masks(
    anchors: PointCloud,
    rig: ViewRig,
    flip_factor: float = DEFAULT_FLIP_FACTOR,
    bounding_radius: float = 1.0,
) -> list[VisibilityMask]:
    """One mask per rig view, ordered by view index."""
    masks = []
    for k, pose in enumerate(rig):
        vp = camera_position(pose, bounding_radius)
        try:
            mask = hpr_visible(anchors, vp, flip_factor, view_index=k)
        except (PointAtViewpoint, RadiusTooSmall) as exc:
            raise type(exc)(f"view {k}: {exc}") from exc
        masks.append(mask)
    return masks


# ---------------------------------------------------------------------------
# Mask file (binary, little-endian): MVMK, version, K, N_a, then per view
# count + indices, all u32.
# ---------------------------------------------------------------------------

def write_masks(masks: list[VisibilityMask], path) -> None:
    if not masks:
        raise ValueError("no masks to write")
    n_a = masks[0].num_anchors
    parts = [_MASK_MAGIC, struct.pack("<III", _MASK_VERSION, len(masks), n_a)]
    for mask in masks:
        parts.append(struct.pack("<I", len(mask)))
        parts.append(mask.visible.astype("<u4").tobytes())
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"wanted {n} bytes, got {len(buf)}")
    return buf


def read_masks(path) -> list[VisibilityMask]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != _MASK_MAGIC:
            raise BadMagic(f"expected {_MASK_MAGIC!r}, got {magic!r}")
        version, k, n_a = struct.unpack("<III", _read_exact(fh, 12))
        if version != _MASK_VERSION:
            raise UnsupportedVersion(f"mask file version {version}")
        masks = []
        for view in range(k):
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            idx = np.frombuffer(_read_exact(fh, 4 * count), dtype="<u4").astype(np.int64)
            masks.append(VisibilityMask(view, idx, n_a))
    return masks
