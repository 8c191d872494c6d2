"""Epoch sampling: exact coverage, holdout separation, bit-exact targets."""

import numpy as np
import pytest

from panosphere import geometry
from panosphere.dataio import bundle as bnd
from panosphere.dataio.sampler import EpochSampler, sample_batch
from panosphere.model import LightSphereModel, ModelConfig


def toy_bundle(rng, n=4, h=64, w=64, skew=0.0):
    frames = [bnd.FrameRecord(
        pixels=rng.uniform(size=(h, w, 3)).astype(np.float32),
        timestamp_s=i / 30.0,
        intrinsics=np.array([40.0, 40.0, w / 2, h / 2]),
        gyro=geometry.rot_y(0.05 * i),
        rs_skew_s=skew,
    ) for i in range(n)]
    return bnd.CaptureBundle(frames=frames, sensor_w=w, sensor_h=h,
                             frame_dt_s=1 / 30.0)


def flat_indices(batch, w, h):
    px = np.round(batch.image_xy[:, 0].astype(np.float64) * w - 0.5)
    py = np.round(batch.image_xy[:, 1].astype(np.float64) * h - 0.5)
    fi = np.round(batch.frame)
    return (fi * h * w + py * w + px).astype(np.int64)


class TestEpochCoverage:
    def test_every_pixel_exactly_once(self):
        rng = np.random.default_rng(0)
        b = toy_bundle(rng)
        s = EpochSampler(b, batch_size=4096)
        assert s.n_train == 4 * 64 * 64
        assert s.batches_in_epoch() == 4     # 16384 rays, 4 full batches
        seen = []
        for batch in s.epoch(np.random.default_rng(1)):
            assert len(batch) == 4096
            seen.append(flat_indices(batch, 64, 64))
        seen = np.concatenate(seen)
        assert np.array_equal(np.sort(seen), np.arange(4 * 64 * 64))

    def test_short_final_batch(self):
        rng = np.random.default_rng(1)
        b = toy_bundle(rng, h=16, w=16)
        s = EpochSampler(b, batch_size=300)
        sizes = [len(x) for x in s.epoch(np.random.default_rng(2))]
        assert sum(sizes) == 4 * 16 * 16
        assert all(n == 300 for n in sizes[:-1])

    def test_holdout_frames_never_sampled(self):
        rng = np.random.default_rng(2)
        b = toy_bundle(rng, h=16, w=16)
        s = EpochSampler(b, batch_size=256, holdout_frames=[3])
        assert s.n_train == 3 * 256 and s.n_holdout == 256
        for batch in s.epoch(np.random.default_rng(3)):
            assert not np.any(np.round(batch.frame) == 3)
        held = s.holdout_batch()
        assert np.all(np.round(held.frame) == 3)
        assert len(held) == 256

    def test_holdout_validation(self):
        rng = np.random.default_rng(3)
        b = toy_bundle(rng, h=8, w=8)
        with pytest.raises(ValueError):
            EpochSampler(b, 64, holdout_frames=[9])
        with pytest.raises(ValueError):
            EpochSampler(b, 64, holdout_frames=range(4))
        with pytest.raises(ValueError):
            EpochSampler(b, 64).holdout_batch()

    def test_batch_cap(self):
        rng = np.random.default_rng(4)
        b = toy_bundle(rng, h=32, w=32)
        s = EpochSampler(b, batch_size=512, batches_per_epoch=2)
        batches = list(s.epoch(np.random.default_rng(5)))
        assert len(batches) == 2
        assert all(len(x) == 512 for x in batches)

    def test_fresh_permutation_each_epoch(self):
        rng = np.random.default_rng(6)
        b = toy_bundle(rng, h=16, w=16)
        s = EpochSampler(b, batch_size=128)
        e1 = next(iter(s.epoch(np.random.default_rng(7))))
        e2 = next(iter(s.epoch(np.random.default_rng(8))))
        assert not np.array_equal(e1.image_xy, e2.image_xy)

    def test_deterministic_given_rng(self):
        rng = np.random.default_rng(9)
        b = toy_bundle(rng, h=16, w=16)
        s = EpochSampler(b, batch_size=128)
        a = [x for x in s.epoch(np.random.default_rng(10))]
        c = [x for x in s.epoch(np.random.default_rng(10))]
        for x, y in zip(a, c):
            assert np.array_equal(x.cam_dir, y.cam_dir)
            assert np.array_equal(x.target, y.target)
            assert np.array_equal(x.frame, y.frame)


class TestBatchContents:
    def test_targets_bit_exact(self):
        rng = np.random.default_rng(11)
        b = toy_bundle(rng, h=16, w=16)
        s = EpochSampler(b, batch_size=300)
        stack = b.pixel_stack()
        for batch in s.epoch(np.random.default_rng(12)):
            g = flat_indices(batch, 16, 16)
            fi, rest = g // 256, g % 256
            assert np.array_equal(batch.target, stack[fi, rest // 16,
                                                      rest % 16])

    def test_cam_dir_matches_intrinsics(self):
        rng = np.random.default_rng(13)
        b = toy_bundle(rng, h=8, w=8)
        s = EpochSampler(b, batch_size=64)
        batch = s.build_batch(np.arange(8))   # frame 0, row 0, cols 0..7
        fx, fy, cx, cy = b.frames[0].intrinsics
        want = np.stack([(np.arange(8) + 0.5 - cx) / fx,
                         np.full(8, (0.5 - cy) / fy),
                         np.ones(8)], axis=-1).astype(np.float32)
        assert np.array_equal(batch.cam_dir, want)

    def test_grid_shared_across_identical_frames(self):
        rng = np.random.default_rng(14)
        b = toy_bundle(rng, h=8, w=8)
        s = EpochSampler(b, batch_size=64)
        assert s.cam_dirs[0] is s.cam_dirs[1]

    def test_rolling_shutter_fractional_frames(self):
        rng = np.random.default_rng(15)
        skew = 0.004
        b = toy_bundle(rng, h=16, w=16, skew=skew)
        s = EpochSampler(b, batch_size=64)
        batch = s.build_batch(np.array([0, 5 * 16 + 2, 256 + 9 * 16]))
        rows = np.array([0, 5, 9])
        frames = np.array([0.0, 0.0, 1.0])
        want = frames + rows * skew / 16 / b.frame_dt_s
        assert np.allclose(batch.frame, want, atol=1e-12)

    def test_zero_skew_gives_integral_frames(self):
        rng = np.random.default_rng(16)
        b = toy_bundle(rng, h=8, w=8)
        s = EpochSampler(b, batch_size=64, holdout_frames=[2])
        batch = s.holdout_batch()
        assert np.array_equal(batch.frame, np.full(64, 2.0))


class TestSampleBatch:
    def test_fills_world_rays_with_model(self):
        rng = np.random.default_rng(17)
        b = toy_bundle(rng, h=8, w=8)
        cfg = ModelConfig.desk_scale(n_frames=b.n_frames)
        model = LightSphereModel(cfg, gyro=b.gyro_stack(),
                                 intrinsics=b.intrinsics_stack(),
                                 rng=np.random.default_rng(0))
        batch = sample_batch(b, 32, np.random.default_rng(18), model=model)
        assert batch.origin.shape == (32, 3)
        assert np.allclose(np.linalg.norm(batch.dir, axis=-1), 1.0,
                           atol=1e-12)
        # zero pose state: dir is just the gyro-rotated camera direction
        fi = np.round(batch.frame).astype(int)
        want = np.einsum("bij,bj->bi", b.gyro_stack()[fi],
                         batch.cam_dir.astype(np.float64))
        want /= np.linalg.norm(want, axis=-1, keepdims=True)
        assert np.allclose(batch.dir, want, atol=1e-12)

    def test_without_model(self):
        rng = np.random.default_rng(19)
        b = toy_bundle(rng, h=8, w=8)
        batch = sample_batch(b, 16, np.random.default_rng(20))
        assert batch.origin is None and batch.dir is None
        assert len(batch) == 16
