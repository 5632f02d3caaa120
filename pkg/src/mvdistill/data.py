"""Dataset manifests, synthetic shape generation, and the procedural teacher.

The procedural teacher stands in for a pretrained 2D backbone: render the
visible points of each view, box-downsample to 16x16, and push the flattened
image through a fixed seeded sign projection. It is deterministic, cheap,
and still view-discriminative, which is all the distillation loss needs at
desk scale.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ParseError,
    TruncatedFile,
    UnsupportedVersion,
)
from .geometry import PointCloud, ViewRig, write_xyz
from .render import SplatConfig, downsample_box, render_splat
from .visibility import VisibilityMask, compute_rig_masks

SYNTHETIC_CLASSES = ("sphere", "cube", "cylinder", "cone")

_TKD_MAGIC = b"MVTK"
_TKD_VERSION = 1

TEACHER_IMAGE_SIDE = 16  # downsampled teacher input, 16 x 16 = 256 values

# Teacher rendering differs from the plain renderer defaults: the wider fov
# frames the whole unit ball at rig distance (fov 0.6 at distance 2.2 would
# overflow the image), and fat splats close the gaps between surface samples
# so the image reads as a filled silhouette. Both make the descriptors far
# more sensitive to shape identity than to sampling jitter.
def teacher_splat_config() -> "SplatConfig":
    return SplatConfig(image_size=112, splat_radius=6, field_of_view=1.0)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    entries: list[tuple[str, int]]  # (relative cloud path, label)
    class_names: list[str]

    def __post_init__(self):
        seen = set()
        for path, label in self.entries:
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"label {label} out of range for {path}")
            if path in seen:
                raise ValueError(f"duplicate manifest path {path}")
            seen.add(path)

    def __len__(self):
        return len(self.entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["# classes: " + ",".join(manifest.class_names)]
    for rel, label in manifest.entries:
        lines.append(f"{rel}\t{label}")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_manifest(path) -> DatasetManifest:
    class_names = None
    entries = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("classes:"):
                    names = [c.strip() for c in body[len("classes:"):].split(",")]
                    class_names = [c for c in names if c]
                continue
            if class_names is None:
                raise ParseError(path, line_no, "entry before '# classes:' header")
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, line_no, "expected 'path<TAB>label'")
            try:
                label = int(parts[1])
            except ValueError:
                raise ParseError(path, line_no, f"bad label {parts[1]!r}")
            if not 0 <= label < len(class_names):
                raise ParseError(path, line_no, f"label {label} out of range")
            entries.append((parts[0], label))
    if class_names is None:
        raise ParseError(path, 0, "missing '# classes:' header")
    return DatasetManifest(entries, class_names)


# ---------------------------------------------------------------------------
# Synthetic shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[str, ...] = SYNTHETIC_CLASSES
    per_class: int = 200
    points: int = 256
    jitter: float = 0.01
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.classes) - set(SYNTHETIC_CLASSES)
        if unknown:
            raise ValueError(f"unknown classes {sorted(unknown)}")
        if self.points < 32:
            raise ValueError("need at least 32 points per cloud")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")


def _sample_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cube(rng: np.random.Generator, n: int) -> np.ndarray:
    # six equal-area faces of the cube [-s, s]^3 with s = 1/sqrt(3)
    s = 1.0 / math.sqrt(3.0)
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-s, s, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -s, s)
    for i in range(n):
        a = axis[i]
        others = [j for j in range(3) if j != a]
        pts[i, a] = sign[i]
        pts[i, others[0]] = uv[i, 0]
        pts[i, others[1]] = uv[i, 1]
    return pts


def _sample_cylinder(rng: np.random.Generator, n: int) -> np.ndarray:
    # radius/height chosen so the surface fits the unit ball exactly
    r = 0.5 / math.sqrt(1.25)
    h = 1.0 / math.sqrt(1.25)  # half-height
    side_area = 2.0 * math.pi * r * 2.0 * h
    cap_area = math.pi * r * r
    p_side = side_area / (side_area + 2.0 * cap_area)
    u = rng.uniform(size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pick = rng.uniform(size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if pick[i] < p_side:
            pts[i] = (r * math.cos(theta[i]), r * math.sin(theta[i]), h * (2.0 * u[i] - 1.0))
        else:
            rr = r * math.sqrt(u[i])
            z = h if pick[i] < p_side + (1.0 - p_side) / 2.0 else -h
            pts[i] = (rr * math.cos(theta[i]), rr * math.sin(theta[i]), z)
    return pts


def _sample_cone(rng: np.random.Generator, n: int) -> np.ndarray:
    # apex up, flat base down; z-extent [-0.5, 1] and base radius sized so the
    # area centroid sits near the origin and the shape fits the unit ball
    r = 0.7
    z_apex = 1.0
    z_base = -0.5
    height = z_apex - z_base
    slant = math.sqrt(height * height + r * r)
    lateral = math.pi * r * slant
    base = math.pi * r * r
    p_lateral = lateral / (lateral + base)
    u = rng.uniform(size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pick = rng.uniform(size=n)
    pts = np.empty((n, 3))
    scale = 1.0 / max(z_apex, math.sqrt(z_base * z_base + r * r))
    for i in range(n):
        if pick[i] < p_lateral:
            t = math.sqrt(u[i])  # density grows with radius toward the base
            rr = t * r
            z = z_apex - t * height
        else:
            rr = r * math.sqrt(u[i])
            z = z_base
        pts[i] = (rr * math.cos(theta[i]) * scale, rr * math.sin(theta[i]) * scale, z * scale)
    return pts


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
}


def synth_cloud(class_name: str, n: int, jitter: float, rng: np.random.Generator, label: int) -> PointCloud:
    """One synthetic shape: surface samples, z-rotation, Gaussian jitter."""
    pts = _SAMPLERS[class_name](rng, n)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = pts @ rot.T
    if jitter > 0:
        pts = pts + rng.normal(scale=jitter, size=pts.shape)
    return PointCloud(pts, label)


def gen_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write clouds/*.xyz plus manifest.txt; byte-identical for a fixed seed."""
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(3,)))
    entries = []
    for label, cls in enumerate(spec.classes):
        for i in range(spec.per_class):
            cloud = synth_cloud(cls, spec.points, spec.jitter, rng, label)
            rel = f"clouds/{cls}_{i:04d}.xyz"
            write_xyz(cloud, out / rel)
            entries.append((rel, label))
    manifest = DatasetManifest(entries, list(spec.classes))
    write_manifest(manifest, out / "manifest.txt")
    return manifest


# ---------------------------------------------------------------------------
# Teacher knowledge (.tkd)
# ---------------------------------------------------------------------------

@dataclass
class TeacherKnowledge:
    shape_id: str
    descriptors: np.ndarray  # K x C_t
    global_feature: np.ndarray | None = None  # 1 x C_g
    logits: np.ndarray | None = None  # 1 x num_classes

    def __post_init__(self):
        self.descriptors = np.atleast_2d(np.asarray(self.descriptors, dtype=np.float64))
        if not np.isfinite(self.descriptors).all():
            raise ValueError("teacher descriptors must be finite")
        if self.global_feature is not None:
            self.global_feature = np.atleast_2d(np.asarray(self.global_feature, dtype=np.float64))
        if self.logits is not None:
            self.logits = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))

    @property
    def num_views(self) -> int:
        return self.descriptors.shape[0]

    @property
    def channels(self) -> int:
        return self.descriptors.shape[1]


def write_tkd(tk: TeacherKnowledge, path) -> None:
    sid = tk.shape_id.encode("utf-8")
    k, ct = tk.descriptors.shape
    parts = [
        _TKD_MAGIC,
        struct.pack("<I", _TKD_VERSION),
        struct.pack("<H", len(sid)),
        sid,
        struct.pack("<II", k, ct),
        tk.descriptors.astype("<f4").tobytes(),
    ]
    if tk.global_feature is not None:
        cg = tk.global_feature.shape[1]
        parts.append(struct.pack("<BI", 1, cg))
        parts.append(tk.global_feature.astype("<f4").tobytes())
    else:
        parts.append(struct.pack("<B", 0))
    if tk.logits is not None:
        c = tk.logits.shape[1]
        parts.append(struct.pack("<BI", 1, c))
        parts.append(tk.logits.astype("<f4").tobytes())
    else:
        parts.append(struct.pack("<B", 0))
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"wanted {n} bytes, got {len(buf)}")
    return buf


def read_tkd(path) -> TeacherKnowledge:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != _TKD_MAGIC:
            raise BadMagic(f"expected {_TKD_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _TKD_VERSION:
            raise UnsupportedVersion(f"tkd version {version}")
        (sid_len,) = struct.unpack("<H", _read_exact(fh, 2))
        sid = _read_exact(fh, sid_len).decode("utf-8")
        k, ct = struct.unpack("<II", _read_exact(fh, 8))
        desc = np.frombuffer(_read_exact(fh, 4 * k * ct), dtype="<f4").astype(np.float64)
        desc = desc.reshape(k, ct)
        (has_global,) = struct.unpack("<B", _read_exact(fh, 1))
        global_feature = None
        if has_global:
            (cg,) = struct.unpack("<I", _read_exact(fh, 4))
            global_feature = (
                np.frombuffer(_read_exact(fh, 4 * cg), dtype="<f4").astype(np.float64).reshape(1, cg)
            )
        (has_logits,) = struct.unpack("<B", _read_exact(fh, 1))
        logits = None
        if has_logits:
            (c,) = struct.unpack("<I", _read_exact(fh, 4))
            logits = np.frombuffer(_read_exact(fh, 4 * c), dtype="<f4").astype(np.float64).reshape(1, c)
    return TeacherKnowledge(sid, desc, global_feature, logits)


# ---------------------------------------------------------------------------
# Procedural teacher
# ---------------------------------------------------------------------------

def teacher_projection(c_t: int, seed: int) -> np.ndarray:
    """Fixed sign projection (entries +-1/sqrt(256)) shared by a whole run."""
    n = TEACHER_IMAGE_SIDE * TEACHER_IMAGE_SIDE
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    signs = rng.integers(0, 2, size=(n, c_t)) * 2 - 1
    return signs / math.sqrt(n)


def logits_projection(c_t: int, num_classes: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    signs = rng.integers(0, 2, size=(c_t, num_classes)) * 2 - 1
    return signs / math.sqrt(c_t)


def procedural_teacher(
    cloud: PointCloud,
    rig: ViewRig,
    c_t: int,
    seed: int,
    splat_config: SplatConfig | None = None,
    shape_id: str = "",
    masks: list[VisibilityMask] | None = None,
    with_global: bool = True,
    logits_classes: int | None = None,
    projection: np.ndarray | None = None,
) -> TeacherKnowledge:
    """Deterministic teacher descriptors from masked renders of each view."""
    config = splat_config or teacher_splat_config()
    if config.image_size % TEACHER_IMAGE_SIDE:
        raise ValueError("teacher image size must divide the render size")
    if projection is None:
        projection = teacher_projection(c_t, seed)
    if masks is None:
        masks = compute_rig_masks(cloud, rig)
    rows = np.empty((len(rig), c_t))
    for k, pose in enumerate(rig):
        image = render_splat(cloud, pose, config, visible_only=True, mask=masks[k])
        flat = downsample_box(image, TEACHER_IMAGE_SIDE).reshape(1, -1)
        rows[k] = flat @ projection
    mean_row = rows.mean(axis=0, keepdims=True)
    global_feature = mean_row if with_global else None
    logits = None
    if logits_classes is not None:
        logits = mean_row @ logits_projection(c_t, logits_classes, seed)
    return TeacherKnowledge(shape_id, rows, global_feature, logits)


def ordered_map(fn, items, threads: int = 1):
    """Map preserving input order; threads > 1 fans out per-item work."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
