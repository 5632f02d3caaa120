"""Visibility-aware feature projection, distillation losses, and training.

Per view k, the embeddings of the anchors visible from that view are
max-pooled channel-wise and mapped through one shared FC layer to a
view-specific geometric descriptor g_k; the distillation loss is the L1
distance between g_k and the teacher's view descriptor v_k, summed over
active views. The overall objective weights the task loss by omega_task
(default 0.1) and the distillation term by omega_dist (default 1/K).

The task head never receives distillation gradients: the distill term is
built only from encoder embeddings and the alignment layer, so backward
reaches exactly the encoder and alignment parameters.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    TeacherKnowledge,
    read_tkd,
)
from .encoder import (
    EncoderConfig,
    encode,
    global_descriptor,
    head_logits,
    init_encoder_params,
    xavier_uniform,
)
from .errors import (
    MissingTeacher,
    MissingTeacherField,
    NonFiniteLoss,
    ShapeMismatch,
)
from .geometry import ViewRig, normalize_cloud, read_xyz, sample_random_view
from .tape import (
    ParamStore,
    Tape,
    Value,
    adam_step,
    channelwise_max,
    concat_rows,
    gather_rows,
    l1_loss,
    l2_normalize_rows,
    linear,
    softmax_cross_entropy,
    weighted_sum,
)
from .visibility import VisibilityMask, compute_rig_masks, read_masks


class DistillMode(str, Enum):
    VAFP = "vafp"
    FEATURE = "feature"
    LOGIT = "logit"
    NONE = "none"


class ViewSchedule(str, Enum):
    ALL = "all"
    RAND1 = "rand1"


class EmptyViewPolicy(str, Enum):
    SKIP_RENORMALIZE = "skip_renormalize"
    GLOBAL_FALLBACK = "global_fallback"


@dataclass(frozen=True)
class DistillConfig:
    mode: DistillMode = DistillMode.VAFP
    omega_task: float = 0.1
    omega_dist: float | None = None  # None resolves to 1/K
    view_schedule: ViewSchedule = ViewSchedule.ALL
    empty_view_policy: EmptyViewPolicy = EmptyViewPolicy.SKIP_RENORMALIZE
    normalize_descriptors: bool = False

    def __post_init__(self):
        if self.omega_task < 0 or (self.omega_dist is not None and self.omega_dist < 0):
            raise ValueError("loss weights must be non-negative")

    def resolved_omega_dist(self, num_views: int) -> float:
        return 1.0 / num_views if self.omega_dist is None else self.omega_dist


@dataclass
class AlignLayer:
    """The shared FC layer mapping pooled embeddings into teacher space."""

    weight: Value  # C_s x C_t
    bias: Value  # 1 x C_t

    @classmethod
    def from_store(cls, store: ParamStore) -> "AlignLayer":
        return cls(store["align.w"], store["align.b"])


def init_align_params(store: ParamStore, c_s: int, c_t: int, seed: int) -> None:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    store.add("align.w", xavier_uniform(rng, c_s, c_t))
    store.add("align.b", np.zeros((1, c_t)))


def vafp_group(tape: Tape, embeddings: Value, masks: list[VisibilityMask]) -> list[Value]:
    """Per-view sub-matrices of the embedding rows selected by each mask."""
    return [gather_rows(tape, embeddings, m.visible) for m in masks]


def vafp_project(
    tape: Tape,
    embeddings: Value,
    masks: list[VisibilityMask],
    align: AlignLayer,
    policy: EmptyViewPolicy = EmptyViewPolicy.SKIP_RENORMALIZE,
) -> tuple[Value | None, list[int]]:
    """View descriptors g_k = align(max-pool(visible rows)).

    Returns the stacked descriptors (one row per active view, in view order)
    plus the active view indices. Under SKIP_RENORMALIZE an empty mask drops
    its view from the active set; under GLOBAL_FALLBACK it pools over the
    whole embedding matrix instead.
    """
    pooled = []
    active = []
    for k, mask in enumerate(masks):
        if len(mask) == 0:
            if policy is EmptyViewPolicy.SKIP_RENORMALIZE:
                continue
            pooled.append(channelwise_max(tape, embeddings))
        else:
            rows = gather_rows(tape, embeddings, mask.visible)
            pooled.append(channelwise_max(tape, rows))
        active.append(mask.view_index if mask.view_index is not None else k)
    if not pooled:
        return None, []
    stacked = concat_rows(tape, pooled) if len(pooled) > 1 else pooled[0]
    return linear(tape, stacked, align.weight, align.bias), active


def distill_loss(
    tape: Tape,
    cfg: DistillConfig,
    num_views: int,
    teacher: TeacherKnowledge | None,
    *,
    projected: Value | None = None,
    active_views: list[int] | None = None,
    global_desc: Value | None = None,
    student_logits: Value | None = None,
    align: AlignLayer | None = None,
) -> Value:
    """Mode-dependent distillation term for one shape.

    vafp sums L1 over active views and rescales by K/|active| so the
    1/K weight in the overall objective keeps its expected scale when
    views are skipped or sampled.
    """
    if cfg.mode is DistillMode.NONE:
        return Value(np.zeros((1, 1)))
    if teacher is None:
        raise MissingTeacher("distillation requires teacher knowledge")

    if cfg.mode is DistillMode.VAFP:
        if active_views is None:
            raise ValueError("vafp mode needs active_views")
        if not active_views:
            print("warning: no active views; distillation term is 0", file=sys.stderr)
            return Value(np.zeros((1, 1)))
        if projected is None:
            raise ValueError("vafp mode needs projected descriptors")
        target = teacher.descriptors[np.asarray(active_views)]
        if target.shape != projected.data.shape:
            raise ShapeMismatch(
                f"teacher rows {target.shape} vs student rows {projected.data.shape}"
            )
        student = projected
        target_v = Value(target)
        if cfg.normalize_descriptors:
            student = l2_normalize_rows(tape, student)
            target_v = l2_normalize_rows(tape, target_v)
        raw = l1_loss(tape, target_v, student)
        scale = num_views / len(active_views)
        return weighted_sum(tape, [raw], [scale]) if scale != 1.0 else raw

    if cfg.mode is DistillMode.FEATURE:
        if teacher.global_feature is None:
            raise MissingTeacherField("feature mode needs a teacher global feature")
        if global_desc is None or align is None:
            raise ValueError("feature mode needs global_desc and align")
        student = linear(tape, global_desc, align.weight, align.bias)
        target_v = Value(teacher.global_feature)
        if cfg.normalize_descriptors:
            student = l2_normalize_rows(tape, student)
            target_v = l2_normalize_rows(tape, target_v)
        return l1_loss(tape, target_v, student)

    if cfg.mode is DistillMode.LOGIT:
        if teacher.logits is None:
            raise MissingTeacherField("logit mode needs teacher logits")
        if student_logits is None:
            raise ValueError("logit mode needs student_logits")
        return l1_loss(tape, Value(teacher.logits), student_logits)

    raise ValueError(f"unknown mode {cfg.mode}")


def overall_loss(
    tape: Tape, task: Value, dist: Value, cfg: DistillConfig, num_views: int
) -> Value:
    """omega_task * task + omega_dist * dist."""
    return weighted_sum(
        tape, [task, dist], [cfg.omega_task, cfg.resolved_omega_dist(num_views)]
    )


# ---------------------------------------------------------------------------
# Dataset loading and the training loop
# ---------------------------------------------------------------------------

@dataclass
class LoadedShape:
    shape_id: str
    points: np.ndarray  # normalized N x 3
    label: int
    teacher: TeacherKnowledge | None = None
    masks: list[VisibilityMask] | None = None


def load_dataset(
    manifest: DatasetManifest,
    data_root,
    rig: ViewRig | None = None,
    teacher_dir=None,
    need_teacher: bool = False,
    need_masks: bool = False,
    flip_factor: float = 100.0,
) -> list[LoadedShape]:
    """Load, normalize, and attach teacher knowledge and visibility masks.

    Masks come from <teacher_dir>/<shape_id>.mvmk when present (the teacher
    export writes them), otherwise they are recomputed from the rig.
    """
    root = Path(data_root)
    tdir = Path(teacher_dir) if teacher_dir is not None else None
    shapes = []
    for rel, label in manifest.entries:
        cloud = normalize_cloud(read_xyz(root / rel))
        sid = Path(rel).stem
        teacher = None
        if need_teacher:
            if tdir is None:
                raise MissingTeacher("no teacher directory given")
            tpath = tdir / f"{sid}.tkd"
            if not tpath.exists():
                raise MissingTeacher(f"missing teacher file {tpath}")
            teacher = read_tkd(tpath)
        masks = None
        if need_masks:
            if rig is None:
                raise ValueError("masks require a rig")
            mpath = tdir / f"{sid}.mvmk" if tdir is not None else None
            if mpath is not None and mpath.exists():
                masks = read_masks(mpath)
                if masks[0].num_anchors != cloud.n_points or len(masks) != len(rig):
                    raise ShapeMismatch(f"mask file {mpath} does not match {sid}")
            else:
                masks = compute_rig_masks(cloud, rig, flip_factor)
        shapes.append(LoadedShape(sid, cloud.points, label, teacher, masks))
    return shapes


@dataclass
class EpochMetrics:
    epoch: int
    task_loss: float
    dist_loss: float
    train_acc: float


def write_metrics(metrics: list[EpochMetrics], path) -> None:
    lines = ["# epoch\ttask_loss\tdist_loss\ttrain_acc"]
    for m in metrics:
        lines.append(f"{m.epoch}\t{m.task_loss:.6f}\t{m.dist_loss:.6f}\t{m.train_acc:.6f}")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


@dataclass
class TrainResult:
    store: ParamStore
    metrics: list[EpochMetrics]
    encoder_cfg: EncoderConfig


def _batch_forward(
    tape: Tape,
    store: ParamStore,
    cfg: DistillConfig,
    shapes: list[LoadedShape],
    num_views: int,
    scheduled: list[int] | None,
):
    """Forward pass over one batch; returns (task, dist, logits, labels)."""
    stacked = Value(np.concatenate([s.points for s in shapes], axis=0))
    all_embed = encode(tape, store, stacked)
    offsets = np.cumsum([0] + [len(s.points) for s in shapes])
    align = AlignLayer.from_store(store) if "align.w" in store else None

    pooled = []
    dist_terms = []
    for i, shape in enumerate(shapes):
        lo, hi = offsets[i], offsets[i + 1]
        rows = gather_rows(tape, all_embed, np.arange(lo, hi))
        g_desc = global_descriptor(tape, rows)
        pooled.append(g_desc)

        if cfg.mode is DistillMode.VAFP:
            view_masks = shape.masks if scheduled is None else [shape.masks[k] for k in scheduled]
            projected, active = vafp_project(
                tape, rows, view_masks, align, cfg.empty_view_policy
            )
            dist_terms.append(
                distill_loss(
                    tape, cfg, num_views, shape.teacher,
                    projected=projected, active_views=active,
                )
            )
        elif cfg.mode is DistillMode.FEATURE:
            dist_terms.append(
                distill_loss(
                    tape, cfg, num_views, shape.teacher,
                    global_desc=g_desc, align=align,
                )
            )

    logits = head_logits(tape, store, concat_rows(tape, pooled))
    labels = np.array([s.label for s in shapes], dtype=np.int64)

    if cfg.mode is DistillMode.LOGIT:
        for i, shape in enumerate(shapes):
            row = gather_rows(tape, logits, np.array([i]))
            dist_terms.append(
                distill_loss(tape, cfg, num_views, shape.teacher, student_logits=row)
            )

    task = softmax_cross_entropy(tape, logits, labels)
    if dist_terms:
        dist = weighted_sum(tape, dist_terms, [1.0 / len(dist_terms)] * len(dist_terms))
    else:
        dist = Value(np.zeros((1, 1)))
    return task, dist, logits, labels


def train(
    shapes: list[LoadedShape],
    rig: ViewRig,
    cfg: DistillConfig,
    *,
    num_classes: int,
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 7,
    encoder_cfg: EncoderConfig | None = None,
    log=None,
) -> TrainResult:
    """Seeded, single-threaded training; identical seeds give identical logs."""
    if encoder_cfg is None:
        encoder_cfg = EncoderConfig(num_classes=num_classes, seed=seed)
    else:
        encoder_cfg = replace(encoder_cfg, num_classes=num_classes, seed=seed)
    store = init_encoder_params(encoder_cfg)

    num_views = len(rig)
    if cfg.mode in (DistillMode.VAFP, DistillMode.FEATURE):
        widths = set()
        for s in shapes:
            if s.teacher is None:
                raise MissingTeacher(f"{s.shape_id}: no teacher knowledge loaded")
            if cfg.mode is DistillMode.VAFP:
                widths.add(s.teacher.channels)
            else:
                if s.teacher.global_feature is None:
                    raise MissingTeacherField(f"{s.shape_id}: teacher lacks a global feature")
                widths.add(s.teacher.global_feature.shape[1])
        if len(widths) != 1:
            raise ShapeMismatch(f"teacher widths differ across shapes: {sorted(widths)}")
        init_align_params(store, encoder_cfg.embed_dim, widths.pop(), seed)
    if cfg.mode is DistillMode.VAFP:
        for s in shapes:
            if s.teacher.num_views != num_views:
                raise ShapeMismatch(
                    f"{s.shape_id}: teacher has {s.teacher.num_views} views, rig has {num_views}"
                )
            if s.masks is None:
                raise ValueError(f"{s.shape_id}: vafp training needs masks")

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    view_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))

    metrics = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(shapes))
        task_sum = 0.0
        dist_sum = 0.0
        correct = 0
        for start in range(0, len(order), batch_size):
            batch = [shapes[i] for i in order[start : start + batch_size]]
            scheduled = None
            if cfg.mode is DistillMode.VAFP and cfg.view_schedule is ViewSchedule.RAND1:
                scheduled = [sample_random_view(rig, view_rng)]
            tape = Tape()
            try:
                task, dist, logits, labels = _batch_forward(
                    tape, store, cfg, batch, num_views, scheduled
                )
                total = overall_loss(tape, task, dist, cfg, num_views)
                tape.backward(total)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(
                    f"epoch {epoch}, batch {start // batch_size}: {exc}"
                ) from exc
            step += 1
            adam_step(store, lr=lr, t=step)
            task_sum += task.item() * len(batch)
            dist_sum += dist.item() * len(batch)
            correct += int((np.argmax(logits.data, axis=1) == labels).sum())
        n = len(shapes)
        m = EpochMetrics(epoch, task_sum / n, dist_sum / n, correct / n)
        metrics.append(m)
        if log is not None:
            print(
                f"epoch {m.epoch}: task={m.task_loss:.6f} dist={m.dist_loss:.6f} "
                f"acc={m.train_acc:.4f}",
                file=log,
            )
    return TrainResult(store, metrics, encoder_cfg)


def evaluate(store: ParamStore, shapes: list[LoadedShape]) -> float:
    """Single-pass argmax accuracy, no voting or augmentation."""
    if not shapes:
        raise ValueError("empty evaluation set")
    correct = 0
    for shape in shapes:
        tape = Tape()
        emb = encode(tape, store, shape.points)
        logits = head_logits(tape, store, global_descriptor(tape, emb))
        if int(np.argmax(logits.data[0])) == shape.label:
            correct += 1
    return correct / len(shapes)


def train_manifest(
    manifest: DatasetManifest,
    data_root,
    teacher_dir,
    rig: ViewRig,
    cfg: DistillConfig,
    *,
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 7,
    encoder_cfg: EncoderConfig | None = None,
    flip_factor: float = 100.0,
    log=None,
) -> TrainResult:
    """Load everything named by the manifest, then train."""
    shapes = load_dataset(
        manifest,
        data_root,
        rig,
        teacher_dir,
        need_teacher=cfg.mode is not DistillMode.NONE,
        need_masks=cfg.mode is DistillMode.VAFP,
        flip_factor=flip_factor,
    )
    return train(
        shapes,
        rig,
        cfg,
        num_classes=len(manifest.class_names),
        epochs=epochs,
        batch_size=batch_size,
        lr=lr,
        seed=seed,
        encoder_cfg=encoder_cfg,
        log=log,
    )


def make_pipeline_loss(
    seed: int = 7,
    n_clouds: int = 4,
    n_points: int = 64,
    num_classes: int = 4,
    k_views: int = 4,
    c_t: int = 16,
):
    """Seeded full-pipeline loss for finite-difference verification.

    Builds a tiny batch (synthetic clouds, mini rig, procedural teacher) and
    returns (loss_fn, store) where loss_fn rebuilds the whole forward pass:
    encode, VAFP projection, L1 distillation, cross-entropy, and the weighted
    combination. Masks and teacher data are fixed; only parameters vary.
    """
    from .data import SYNTHETIC_CLASSES, procedural_teacher, synth_cloud
    from .geometry import make_classification_rig, make_reduced_rig

    if k_views in (4, 6):
        rig = make_reduced_rig(k_views)
    elif k_views == 12:
        rig = make_classification_rig()
    else:
        raise ValueError(f"no mini-rig preset with {k_views} views")

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(6,)))
    shapes = []
    for i in range(n_clouds):
        label = i % num_classes
        cls = SYNTHETIC_CLASSES[label % len(SYNTHETIC_CLASSES)]
        cloud = normalize_cloud(synth_cloud(cls, n_points, 0.02, rng, label))
        masks = compute_rig_masks(cloud, rig)
        teacher = procedural_teacher(
            cloud, rig, c_t, seed, shape_id=f"check_{i}", masks=masks
        )
        shapes.append(LoadedShape(f"check_{i}", cloud.points, label, teacher, masks))

    encoder_cfg = EncoderConfig(num_classes=num_classes, seed=seed)
    store = init_encoder_params(encoder_cfg)
    init_align_params(store, encoder_cfg.embed_dim, c_t, seed)
    cfg = DistillConfig()

    def loss_fn():
        tape = Tape()
        task, dist, _, _ = _batch_forward(tape, store, cfg, shapes, len(rig), None)
        total = overall_loss(tape, task, dist, cfg, len(rig))
        return tape, total

    return loss_fn, store
