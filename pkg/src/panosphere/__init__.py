"""Spherical neural light field engine.

Fits a single-layer light sphere to a handheld panoramic capture: camera
poses are refined jointly with a view-dependent color-on-a-sphere model,
which can then be rendered from novel viewpoints at expanded FOV.

The pieces, in pipeline order: dataio loads and synthesizes capture
bundles, model holds the network and its hand-written gradients, trainer
runs the two-stage fit, renderer turns a fitted model into images,
checkpoint serializes it, service streams interactive renders, and
report draws figures from the training log.
"""

from .model import AblationFlags, LightSphereModel, ModelConfig
from .trainer import TrainConfig, evaluate, fit
from .renderer import VirtualCamera, render_equirect, render_view
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "LightSphereModel", "ModelConfig",
    "TrainConfig", "evaluate", "fit",
    "VirtualCamera", "render_equirect", "render_view",
    "load_checkpoint", "save_checkpoint",
    "__version__",
]
