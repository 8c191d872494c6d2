from .bundle import BundleError, CaptureBundle, FrameRecord, load_bundle, save_bundle
from .raw import IngestionError, demosaic_bilinear, raw_to_linear, render_color
from .sampler import EpochSampler, sample_batch
from .synthetic import (GroundTruthScene, ScenePatch, SyntheticSceneSpec,
                        band_limited_texture, parallax_path, render_synthetic,
                        rotation_path, sample_equirect)

__all__ = [
    "BundleError", "CaptureBundle", "FrameRecord", "load_bundle",
    "save_bundle", "IngestionError", "demosaic_bilinear", "raw_to_linear",
    "render_color", "EpochSampler", "sample_batch", "GroundTruthScene",
    "ScenePatch", "SyntheticSceneSpec", "band_limited_texture",
    "parallax_path", "render_synthetic", "rotation_path", "sample_equirect",
]
