"""Pixel-to-ray batching for training.

Every sensor pixel of every training frame is one ray.  An epoch is a
fresh permutation of those pixels, sliced into batches; the cap on
batches per epoch trades coverage for wall clock on big captures.
Holdout is frame-granular so evaluation frames are never touched.
"""

import numpy as np

from .. import geometry
from ..model import RayBatch


class EpochSampler:
    def __init__(self, bundle, batch_size, batches_per_epoch=None,
                 holdout_frames=()):
        self.bundle = bundle
        self.batch_size = int(batch_size)
        self.batches_per_epoch = batches_per_epoch
        self.width = bundle.sensor_w
        self.height = bundle.sensor_h
        self.pixels = bundle.pixel_stack()
        self.skew = np.array([f.rs_skew_s for f in bundle.frames])
        held = sorted({int(i) for i in holdout_frames})
        if held and not all(0 <= i < bundle.n_frames for i in held):
            raise ValueError("holdout frame index out of range")
        kept = [i for i in range(bundle.n_frames) if i not in held]
        if not kept:
            raise ValueError("holdout excludes every frame")
        per = self.height * self.width
        self.holdout_frames = held
        self.train_idx = np.concatenate(
            [np.arange(i * per, (i + 1) * per, dtype=np.int64) for i in kept])
        self.holdout_idx = (np.concatenate(
            [np.arange(i * per, (i + 1) * per, dtype=np.int64)
             for i in held]) if held else np.empty(0, dtype=np.int64))
        self._grid_cache = {}
        self.cam_dirs = [self._grid_for(f) for f in bundle.frames]

    def _grid_for(self, frame):
        """Camera-frame direction per pixel, shared across frames with the
        same intrinsics and distortion."""
        key = (frame.intrinsics.tobytes(),
               np.asarray(frame.distortion).tobytes())
        if key not in self._grid_cache:
            fx, fy, cx, cy = frame.intrinsics
            ys, xs = np.meshgrid(
                np.arange(self.height, dtype=np.float64) + 0.5,
                np.arange(self.width, dtype=np.float64) + 0.5,
                indexing="ij")
            px = np.stack([xs.ravel(), ys.ravel()], axis=-1)
            kappa = np.asarray(frame.distortion)
            if np.any(kappa):
                intr = geometry.CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
                px = geometry.undistort(
                    px, geometry.LensDistortion(kappa=tuple(kappa)), intr)
            d0 = np.stack([(px[:, 0] - cx) / fx, (px[:, 1] - cy) / fy,
                           np.ones(len(px))], axis=-1)
            self._grid_cache[key] = d0.astype(np.float32)
        return self._grid_cache[key]

    @property
    def n_train(self):
        return len(self.train_idx)

    @property
    def n_holdout(self):
        return len(self.holdout_idx)

    def batches_in_epoch(self):
        full = -(-self.n_train // self.batch_size)
        if self.batches_per_epoch is None:
            return full
        return min(full, self.batches_per_epoch)

    def epoch(self, rng):
        """Yield RayBatch objects covering a fresh permutation of the
        training pixels, the last batch possibly short."""
        order = rng.permutation(self.train_idx)
        for b in range(self.batches_in_epoch()):
            sl = order[b * self.batch_size:(b + 1) * self.batch_size]
            yield self.build_batch(sl)

    def holdout_batch(self, max_rays=None, rng=None):
        if not len(self.holdout_idx):
            raise ValueError("sampler was built without holdout frames")
        idx = self.holdout_idx
        if max_rays is not None and len(idx) > max_rays:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(idx, size=max_rays, replace=False)
        return self.build_batch(idx)

    def build_batch(self, flat_idx):
        per = self.height * self.width
        fi = flat_idx // per
        rest = flat_idx % per
        py = rest // self.width
        px = rest % self.width
        cam_dir = np.empty((len(flat_idx), 3), dtype=np.float32)
        for f in np.unique(fi):
            sel = fi == f
            cam_dir[sel] = self.cam_dirs[f][rest[sel]]
        image_xy = np.stack([(px + 0.5) / self.width,
                             (py + 0.5) / self.height],
                            axis=-1).astype(np.float32)
        frame = geometry.rolling_shutter_frame(
            fi.astype(np.float64), py, self.skew[fi], self.height,
            self.bundle.frame_dt_s)
        target = self.pixels[fi, py, px]
        return RayBatch(cam_dir=cam_dir, image_xy=image_xy, frame=frame,
                        target=target)


def sample_batch(bundle, batch_size, rng, model=None):
    """One random batch without epoch bookkeeping.  With a model, the
    world-space rays at its current pose are filled in."""
    sampler = EpochSampler(bundle, batch_size)
    idx = rng.choice(sampler.train_idx, size=batch_size, replace=False)
    batch = sampler.build_batch(idx)
    if model is not None:
        G, r_off, t_off, _, _, _ = model._pose_at(batch.frame)
        g = np.einsum("bij,bj->bi", G, batch.cam_dir.astype(np.float64))
        d = g + model.cfg.eta_r * np.cross(r_off, g)
        batch.dir = d / np.linalg.norm(d, axis=-1, keepdims=True)
        batch.origin = np.asarray(t_off, dtype=np.float64)
    return batch
