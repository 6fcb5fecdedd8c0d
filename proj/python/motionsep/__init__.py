"""Miniature video-diffusion motion customization lab.

The heavy lifting lives in the compiled extension; this package re-exports
its surface: configuration, the noise schedule, the U-Net and adapter plans,
clip utilities, and the pipeline commands (synth / pretrain / customize /
sample / probe / ablate).
"""

from motionsep._motionsep import (  # noqa: F401
    CUSTOM_MOTION_ID,
    NUM_MOTIONS,
    CondLabels,
    ConfigError,
    DependencyError,
    FileFormatError,
    InjectionPlan,
    MetricGateError,
    MotionLabel,
    NoiseSchedule,
    PlanError,
    RunConfig,
    ShapeError,
    ShapeKind,
    TrainingDivergedError,
    UNet,
    VocabError,
    ablate_suites,
    add_noise,
    derive_seed,
    detect_artifact,
    export_gif,
    load_plan,
    load_tensor,
    run_ablate,
    run_customize,
    run_pretrain,
    run_probe,
    run_sample,
    run_synth,
    sample_clip,
    save_tensor,
)

__all__ = [
    "CUSTOM_MOTION_ID",
    "NUM_MOTIONS",
    "CondLabels",
    "ConfigError",
    "DependencyError",
    "FileFormatError",
    "InjectionPlan",
    "MetricGateError",
    "MotionLabel",
    "NoiseSchedule",
    "PlanError",
    "RunConfig",
    "ShapeError",
    "ShapeKind",
    "TrainingDivergedError",
    "UNet",
    "VocabError",
    "ablate_suites",
    "add_noise",
    "derive_seed",
    "detect_artifact",
    "export_gif",
    "load_plan",
    "load_tensor",
    "run_ablate",
    "run_customize",
    "run_pretrain",
    "run_probe",
    "run_sample",
    "run_synth",
    "sample_clip",
    "save_tensor",
]
