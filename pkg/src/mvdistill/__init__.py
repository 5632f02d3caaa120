"""Multi-view cross-modal distillation for 3D point cloud encoders.

Pipeline: render or ingest multi-view teacher knowledge, compute per-view
point visibility via hidden point removal, aggregate point embeddings into
view-specific descriptors, and train a small point encoder under a combined
task + distillation objective.
"""

from .data import (
    DatasetManifest,
    SyntheticSpec,
    TeacherKnowledge,
    gen_synthetic,
    procedural_teacher,
    read_manifest,
    read_tkd,
    write_manifest,
    write_tkd,
)
from .distill import (
    AlignLayer,
    DistillConfig,
    DistillMode,
    EmptyViewPolicy,
    ViewSchedule,
    distill_loss,
    evaluate,
    load_dataset,
    overall_loss,
    train,
    train_manifest,
    vafp_group,
    vafp_project,
)
from .encoder import EncoderConfig, classify, encode, global_descriptor
from .errors import MvdError
from .geometry import (
    CameraPose,
    PointCloud,
    ViewRig,
    camera_position,
    make_classification_rig,
    make_reduced_rig,
    make_segmentation_rig,
    normalize_cloud,
    read_rig,
    read_xyz,
    sample_random_view,
    write_rig,
    write_xyz,
)
from .hull import ConvexHull3, convex_hull3
from .render import ImageBuffer, Shading, SplatConfig, project, read_ppm, render_splat, write_ppm
from .tape import ParamStore, Tape, Value, adam_step, grad_check, load_checkpoint, save_checkpoint
from .visibility import VisibilityMask, compute_rig_masks, hpr_visible, spherical_flip

__version__ = "0.1.0"
