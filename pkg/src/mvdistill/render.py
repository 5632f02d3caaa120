"""Z-buffered point-splat renderer with a fixed pinhole camera.

The camera looks at the origin with +z as the up reference (+x when the
pose is near a pole). Rasterization is strictly ordered: points splat in
ascending index order and a strictly-nearer depth wins, so identical inputs
produce byte-identical images on any platform.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import BadMagic, ParseError
from .geometry import CameraPose, PointCloud, camera_position
from .visibility import VisibilityMask


class Shading(Enum):
    CONSTANT = "constant"
    DEPTH = "depth"


@dataclass(frozen=True)
class SplatConfig:
    image_size: int = 224
    splat_radius: int = 2
    field_of_view: float = 0.6
    background: int = 255
    shading: Shading = Shading.DEPTH
    # intensity of every splat under constant shading
    foreground: int = 0

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.splat_radius < 1:
            raise ValueError("splat_radius must be at least 1")
        if not 0.0 < self.field_of_view < math.pi:
            raise ValueError("field_of_view must lie in (0, pi)")
        if not 0 <= self.background <= 255:
            raise ValueError("background must be an 8-bit intensity")


@dataclass
class ImageBuffer:
    width: int
    height: int
    pixels: np.ndarray  # row-major uint8, shape (height, width)

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("images must be at least 16 x 16")
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise ValueError(f"pixel buffer shape {px.shape} != {(self.height, self.width)}")
        self.pixels = px


def camera_basis(camera: np.ndarray, target: np.ndarray, up: np.ndarray):
    """Right/up/forward unit vectors for a camera looking at the target.

    The cross-product norm equals the sine of the angle between the view
    axis and the up reference; below sin(1e-3) (elevation within 1e-3 of a
    pole) the basis switches to the +x reference.
    """
    forward = target - camera
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up / np.linalg.norm(up))
    norm = np.linalg.norm(right)
    if norm < 1e-3:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        norm = np.linalg.norm(right)
    right = right / norm
    true_up = np.cross(right, forward)
    return right, true_up, forward


def project_points(points, camera, target, config: SplatConfig, up=(0.0, 0.0, 1.0)):
    """Perspective projection to float pixel coordinates.

    Returns (indices, px, py, depth) for points in front of the near plane;
    depth is the distance along the viewing axis. Pixel coordinates may fall
    outside the image; the rasterizer clips them.
    """
    pts = np.asarray(points, dtype=np.float64)
    camera = np.asarray(camera, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    right, true_up, forward = camera_basis(camera, target, np.asarray(up, dtype=np.float64))
    rel = pts - camera
    x = rel @ right
    y = rel @ true_up
    z = rel @ forward
    keep = np.flatnonzero(z > 1e-6)
    x, y, z = x[keep], y[keep], z[keep]
    half = math.tan(config.field_of_view / 2.0)
    u = x / (z * half)
    v = y / (z * half)
    size = config.image_size
    px = (u + 1.0) * 0.5 * size
    py = (1.0 - v) * 0.5 * size
    return keep, px, py, z


def project(points, pose: CameraPose, config: SplatConfig):
    """Projection for a normalized cloud observed from a rig pose.

    Returns a sequence of (pixel x, pixel y, depth) triples in point order,
    omitting culled points.
    """
    camera = camera_position(pose, 1.0)
    _, px, py, depth = project_points(points, camera, np.zeros(3), config)
    return np.stack([px, py, depth], axis=1)


def _splat_offsets(radius: int):
    offs = [
        (dx, dy)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dx * dx + dy * dy <= radius * radius
    ]
    return np.array(offs, dtype=np.int64)


def render_splat_at(
    points,
    camera,
    target,
    config: SplatConfig,
    point_indices: Optional[np.ndarray] = None,
) -> ImageBuffer:
    """Rasterize disc splats with a per-pixel strictly-nearer depth test."""
    size = config.image_size
    pixels = np.full((size, size), config.background, dtype=np.uint8)
    pts = np.asarray(points, dtype=np.float64)
    if point_indices is not None:
        pts = pts[np.asarray(point_indices, dtype=np.int64)]
    if len(pts) == 0:
        return ImageBuffer(size, size, pixels)

    _, px, py, depth = project_points(pts, camera, target, config)
    if len(px) == 0:
        return ImageBuffer(size, size, pixels)

    if config.shading is Shading.DEPTH:
        # fixed range: a normalized cloud spans [dist-1, dist+1] along the
        # viewing axis, so shading does not wobble with the sampled depths
        dist = float(np.linalg.norm(np.asarray(camera, dtype=np.float64) - np.asarray(target, dtype=np.float64)))
        shades = np.rint(32.0 + np.clip(depth - (dist - 1.0), 0.0, 2.0) * 96.0).astype(np.uint8)
    else:
        shades = np.full(len(px), config.foreground, dtype=np.uint8)

    # expand every point into its disc, then resolve the depth test per pixel:
    # minimum depth wins and depth ties go to the lowest point index, exactly
    # matching an ascending-order rasterization with a strict-less test
    cx = np.floor(px).astype(np.int64)
    cy = np.floor(py).astype(np.int64)
    offsets = _splat_offsets(config.splat_radius)
    xs = (cx[:, None] + offsets[None, :, 0]).ravel()
    ys = (cy[:, None] + offsets[None, :, 1]).ravel()
    order = np.repeat(np.arange(len(cx)), len(offsets))
    ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
    xs, ys, order = xs[ok], ys[ok], order[ok]
    if len(xs) == 0:
        return ImageBuffer(size, size, pixels)
    flat = ys * size + xs
    zbuf = np.full(size * size, np.inf)
    np.minimum.at(zbuf, flat, depth[order])
    tied = depth[order] == zbuf[flat]
    winner = np.full(size * size, len(cx), dtype=np.int64)
    np.minimum.at(winner, flat[tied], order[tied])
    touched = np.flatnonzero(winner < len(cx))
    out = pixels.reshape(-1)
    out[touched] = shades[winner[touched]]
    return ImageBuffer(size, size, pixels)


def render_splat(
    cloud: PointCloud,
    pose: CameraPose,
    config: SplatConfig,
    visible_only: bool = False,
    mask: Optional[VisibilityMask] = None,
) -> ImageBuffer:
    """Render a normalized cloud from a rig pose, optionally masked by HPR."""
    if visible_only:
        if mask is None:
            raise ValueError("visible_only rendering requires a mask")
        indices = mask.visible
    else:
        indices = None
    camera = camera_position(pose, 1.0)
    return render_splat_at(cloud.points, camera, np.zeros(3), config, indices)


# ---------------------------------------------------------------------------
# Binary PPM (P6), grayscale replicated across the three channels
# ---------------------------------------------------------------------------

def write_ppm(image: ImageBuffer, path) -> None:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    rgb = np.repeat(image.pixels[:, :, None], 3, axis=2)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header + rgb.tobytes())
    os.replace(tmp, path)


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise BadMagic(f"not a binary PPM: {path}")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise ParseError(path, 0, "malformed PPM header")
    if maxval != 255:
        raise ParseError(path, 0, f"unsupported maxval {maxval}")
    if len(data) - pos < width * height * 3:
        raise ParseError(path, 0, "truncated PPM payload")
    payload = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    gray = payload.reshape(height, width, 3)[:, :, 0].copy()
    return ImageBuffer(width, height, gray)


def downsample_box(image: ImageBuffer, out_size: int) -> np.ndarray:
    """Box-average the image down to out_size x out_size, as floats in [0, 1]."""
    if image.width % out_size or image.height % out_size:
        raise ValueError(f"{image.width}x{image.height} not divisible by {out_size}")
    bw = image.width // out_size
    bh = image.height // out_size
    px = image.pixels.astype(np.float64) / 255.0
    return px.reshape(out_size, bh, out_size, bw).mean(axis=(1, 3))
