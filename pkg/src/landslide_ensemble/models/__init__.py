"""Registry of segmentation architectures, weight I/O and tiled inference."""
from .archs import ARCHITECTURES, SegNet
from .zoo import (
    ArchSpec,
    Model,
    ModelError,
    arch_names,
    build_model,
    forward,
    load_weights,
    predict_scene,
    predict_stack,
    save_weights,
    spec_from_sidecar,
)

__all__ = [
    "ARCHITECTURES",
    "ArchSpec",
    "Model",
    "ModelError",
    "SegNet",
    "arch_names",
    "build_model",
    "forward",
    "load_weights",
    "predict_scene",
    "predict_stack",
    "save_weights",
    "spec_from_sidecar",
]
