"""Per-joint inflammation detection on hand images.

Stage functions take a config (None for defaults, a dict, or a path to a JSON
file), a list of "a.b=value" overrides and an optional run root, and return
{"dir": Path, "summary": dict}.
"""

from ._rahand import (
    RahandError,
    ablate,
    confusion,
    crossval,
    evaluate,
    finetune,
    focal_loss,
    joint_names,
    load_manifest,
    make_folds,
    metrics,
    pretrain,
    resolve_config,
    sha256_file,
    synth,
)

__all__ = [
    "RahandError",
    "ablate",
    "confusion",
    "crossval",
    "evaluate",
    "finetune",
    "focal_loss",
    "joint_names",
    "load_manifest",
    "make_folds",
    "metrics",
    "pretrain",
    "resolve_config",
    "sha256_file",
    "synth",
]
