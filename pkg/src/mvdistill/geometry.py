"""Point-cloud container, normalization, camera poses, and view-rig presets.

Coordinate convention: right-handed, +z up, elevation measured from the
xy-plane. A camera pose is (azimuth, elevation, distance_factor) where the
distance factor is a multiple of the cloud bounding radius; after
normalization the bounding radius is 1, so the camera sits at
distance_factor from the origin.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateCloud, ParseError, UnsupportedCount

# Camera distance in bounding-radius units shared by every rig preset.
# Must stay > 1 so the viewpoint is strictly outside the unit sphere.
DEFAULT_DISTANCE_FACTOR = 2.2


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    """N x 3 coordinates plus an optional class label."""

    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must be N x 3 with N >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain NaN or Inf")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def bounding_radius(self) -> float:
        rel = self.points - self.centroid()
        return float(np.sqrt((rel * rel).sum(axis=1)).max())


@dataclass(frozen=True)
class CameraPose:
    """Viewpoint direction (radians) and distance in bounding-radius units."""

    azimuth: float
    elevation: float
    distance_factor: float = DEFAULT_DISTANCE_FACTOR

    def __post_init__(self):
        if not (-math.pi / 2 < self.elevation < math.pi / 2):
            raise ValueError(f"elevation must lie in (-pi/2, pi/2), got {self.elevation}")
        if not self.distance_factor > 1.0:
            raise ValueError(f"distance_factor must exceed 1, got {self.distance_factor}")


@dataclass(frozen=True)
class ViewRig:
    """Ordered set of K pairwise-distinct camera poses."""

    poses: tuple[CameraPose, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 1:
            raise ValueError("a rig needs at least one pose")
        if len(set(poses)) != len(poses):
            raise ValueError("rig poses must be pairwise distinct")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center the cloud at the origin and scale the farthest point to norm 1."""
    pts = cloud.points - cloud.points.mean(axis=0)
    norms = np.sqrt((pts * pts).sum(axis=1))
    scale = norms.max()
    if scale <= 1e-12:
        raise DegenerateCloud("all points coincide")
    pts = pts / scale
    # One corrective pass: per-component rounding can leave the max norm
    # a few ulps above 1, violating the unit-ball contract.
    over = np.sqrt((pts * pts).sum(axis=1)).max()
    if over > 1.0:
        pts = pts / over
    return PointCloud(pts, cloud.label)


def camera_position(pose: CameraPose, bounding_radius: float = 1.0) -> np.ndarray:
    """World position of the camera for a cloud centered at the origin."""
    d = pose.distance_factor * bounding_radius
    ce = math.cos(pose.elevation)
    return np.array(
        [
            d * ce * math.cos(pose.azimuth),
            d * ce * math.sin(pose.azimuth),
            d * math.sin(pose.elevation),
        ]
    )


def _ring(k_total: int, step: float, elevation: float, distance_factor: float):
    # k runs 1..K; the wraparound pose (k == K when K*step == 2*pi) stores
    # azimuth 0 so rational multiples of pi stay exact.
    return [
        CameraPose((k % k_total) * step, elevation, distance_factor)
        for k in range(1, k_total + 1)
    ]


def make_classification_rig(distance_factor: float = DEFAULT_DISTANCE_FACTOR) -> ViewRig:
    """12 views: azimuths k*pi/6 (k=1..12), elevation pi/6."""
    return ViewRig(tuple(_ring(12, math.pi / 6, math.pi / 6, distance_factor)))


def make_segmentation_rig(distance_factor: float = DEFAULT_DISTANCE_FACTOR) -> ViewRig:
    """16 views: azimuths k*pi/4 (k=1..8) crossed with elevations +/- pi/6."""
    upper = _ring(8, math.pi / 4, math.pi / 6, distance_factor)
    lower = _ring(8, math.pi / 4, -math.pi / 6, distance_factor)
    return ViewRig(tuple(upper + lower))


def make_reduced_rig(k: int, distance_factor: float = DEFAULT_DISTANCE_FACTOR) -> ViewRig:
    """Reduced view schedules: 6 views at pi/3 steps or 4 views at pi/2 steps."""
    if k == 6:
        return ViewRig(tuple(_ring(6, math.pi / 3, math.pi / 6, distance_factor)))
    if k == 4:
        return ViewRig(tuple(_ring(4, math.pi / 2, math.pi / 6, distance_factor)))
    raise UnsupportedCount(f"reduced rig supports k in {{6, 4}}, got {k}")


def sample_random_view(rig: ViewRig, rng: np.random.Generator) -> int:
    """Uniform view index; deterministic for a fixed generator state."""
    return int(rng.integers(0, len(rig)))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_rig(rig: ViewRig, path) -> None:
    """One pose per line: azimuth elevation distance_factor (17 sig digits)."""
    lines = ["# azimuth_rad elevation_rad distance_factor"]
    for pose in rig:
        lines.append(f"{pose.azimuth:.17g} {pose.elevation:.17g} {pose.distance_factor:.17g}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_rig(path) -> ViewRig:
    poses = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 3 fields, got {len(parts)}")
            try:
                az, el, df = (float(p) for p in parts)
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric pose fields: {line!r}")
            poses.append(CameraPose(az, el, df))
    if not poses:
        raise ParseError(path, 0, "rig file contains no poses")
    return ViewRig(tuple(poses))


def write_xyz(cloud: PointCloud, path) -> None:
    """Plain-text cloud: optional '# label <int>' header, then x y z lines."""
    lines = []
    if cloud.label is not None:
        lines.append(f"# label {cloud.label}")
    for x, y, z in cloud.points:
        lines.append(f"{x:.17g} {y:.17g} {z:.17g}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_xyz(path) -> PointCloud:
    label = None
    rows = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "label":
                    try:
                        label = int(parts[1])
                    except ValueError:
                        raise ParseError(path, line_no, f"bad label: {parts[1]!r}")
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric coordinates: {line!r}")
    if not rows:
        raise ParseError(path, 0, "cloud file contains no points")
    return PointCloud(np.array(rows), label)
