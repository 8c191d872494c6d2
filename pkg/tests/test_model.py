"""Full-pipeline oracles for the light sphere model.

The compositional oracle replays the forward pass one ray at a time with the
already-tested geometry and network pieces.  The finite-difference harness
re-runs the whole graph in float64 and compares every touched parameter
block against central differences.
"""

import zlib

import numpy as np
import pytest

from panosphere import geometry as geo
from panosphere import model as lsm
from panosphere.encoding import HashGridConfig


def tiny_config(variant="rotation", n_frames=5):
    return lsm.ModelConfig(
        n_frames=n_frames,
        offset_variant=variant,
        gamma2=HashGridConfig(dims=3, levels=4, base_res=4, growth=2.0,
                              table_size_log2=12),
        gamma1_point=HashGridConfig(dims=3, levels=3, base_res=4, growth=2.0,
                                    table_size_log2=10),
        gamma1_image=HashGridConfig(dims=2, levels=3, base_res=4, growth=2.0,
                                    table_size_log2=8),
        hidden_dim=16,
        num_layers=3,
    )


def build_model(variant="rotation", seed=0, bump=False, n_frames=5):
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-0.4, 0.4, size=(n_frames, 2))
    gyro = np.stack([geo.rot_y(a) @ geo.rot_x(b) for a, b in angles])
    m = lsm.LightSphereModel(
        tiny_config(variant, n_frames), gyro,
        intrinsics=np.array([120.0, 118.0, 31.5, 31.5]),
        rng=np.random.default_rng(seed + 1), dtype=np.float64)
    m.store.values["pose_t"] += 0.08 * rng.standard_normal((n_frames, 3))
    m.store.values["pose_r"] += 0.5 * rng.standard_normal((n_frames, 3))
    # trained-model feature magnitudes: fresh tables sit at ~1e-4, which
    # parks every first-layer pre-activation within an FD step of the ReLU
    # kink; grown tables move the state to generic smooth points
    for key in ("gamma2", "gamma1_point", "gamma1_image"):
        tab = m.store.values[key]
        tab[:] = rng.uniform(-0.3, 0.3, size=tab.shape)
    if bump:
        # wake the zero-initialized offset/view heads so every branch of the
        # graph carries signal
        for name in ("h_R", "h_D"):
            last = max(int(k.split(".w")[1]) for k in m.store.values
                       if k.startswith(f"{name}.w"))
            w = m.store.values[f"{name}.w{last}"]
            w += 0.05 * np.random.default_rng(seed + 2).standard_normal(
                w.shape)
    return m


def make_batch(n_frames=5, size=16, seed=3, fractional=False):
    rng = np.random.default_rng(seed)
    frame = rng.integers(0, n_frames, size).astype(np.float64)
    if fractional:
        frame = np.clip(frame + rng.uniform(0, 0.9, size), 0, n_frames - 1)
    return lsm.RayBatch(
        cam_dir=np.concatenate(
            [rng.uniform(-0.25, 0.25, (size, 2)), np.ones((size, 1))],
            axis=1),
        image_xy=rng.uniform(0.05, 0.95, (size, 2)),
        frame=frame,
        target=rng.random((size, 3)))


class TestForwardBasics:
    def test_output_shape_and_finite(self):
        m = build_model(bump=True)
        c = m.forward(make_batch())
        assert c.shape == (16, 3)
        assert np.isfinite(c).all()

    def test_zero_init_matches_ablated_bitwise(self):
        m = build_model(bump=False)  # offset/view heads still zero
        batch = make_batch()
        plain = m.forward(batch)
        ablated = m.forward(batch, flags=lsm.AblationFlags(
            zero_ray_offset=True, zero_view_color=True))
        np.testing.assert_array_equal(plain, ablated)

    def test_ablated_color_is_function_of_surface_point(self):
        # two rays that reach the same sphere point from different frames
        # and image coordinates must agree when both branches are ablated
        m = build_model(seed=5, bump=True)
        flags = lsm.AblationFlags(zero_ray_offset=True, zero_view_color=True)
        m.store.values["pose_t"][:] = 0
        d_world = np.array([0.2, -0.1, 0.97])
        cam_dirs, frames = [], []
        for n in (0, 3):
            # the linearized frame rotation is not exactly orthogonal, so
            # invert it properly rather than transposing
            R = m.frame_rotation(n)
            cam_dirs.append(np.linalg.solve(R, d_world))
            frames.append(float(n))
        batch = lsm.RayBatch(
            cam_dir=np.array(cam_dirs),
            image_xy=np.array([[0.1, 0.2], [0.8, 0.9]]),
            frame=np.array(frames),
            target=np.zeros((2, 3)))
        c = m.forward(batch, flags=flags)
        # the rotation round-trip leaves ~1e-16 in the surface point, which
        # the finest grid level scales up by its resolution
        np.testing.assert_allclose(c[0], c[1], atol=1e-8)

    def test_second_intersection_stays_on_sphere(self):
        for variant in ("rotation", "depth", "multiplicative"):
            m = build_model(variant=variant, seed=7, bump=True)
            _, ctx = m.forward(make_batch(seed=8), want_ctx=True)
            assert not ctx["skipped"]
            norms = np.linalg.norm(ctx["Pstar"], axis=-1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_offset_bounded(self):
        m = build_model(bump=True, seed=9)
        rng = np.random.default_rng(10)
        p = rng.standard_normal((512, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        off = lsm.eval_ray_offset(p, rng.random((512, 2)), m)
        assert np.abs(off).max() <= m.cfg.max_offset

    def test_flagged_offset_is_zero(self):
        m = build_model(bump=True)
        off = lsm.eval_ray_offset(
            np.array([[0.0, 0.0, 1.0]]), np.array([[0.5, 0.5]]), m,
            flags=lsm.AblationFlags(zero_ray_offset=True))
        np.testing.assert_array_equal(off, 0)

    def test_color_collapses_to_bias_with_zero_features(self):
        m = build_model()
        m.store.values["h_P.w2"][:] = 0
        m.store.values["h_P.b2"][:] = 0
        c = lsm.eval_color(np.array([[0.0, 0.0, 1.0]]),
                           np.array([[0.5, 0.5]]), m)
        np.testing.assert_allclose(c[0], m.store.values["h_C.b0"],
                                   atol=1e-15)

    def test_invalid_origin_dropped_and_reported(self):
        m = build_model()
        m.store.values["pose_t"][0] = [1.5, 0.0, 0.0]  # outside the sphere
        batch = make_batch()
        batch.frame[:] = 0
        batch.frame[3:] = 1
        c, ctx = m.forward(batch, want_ctx=True)
        assert ctx["dropped"] == 3
        np.testing.assert_array_equal(c[:3], 0)
        assert np.isfinite(c).all()
        m.store.zero_grad()
        m.backward(ctx, np.ones_like(c))
        np.testing.assert_array_equal(m.store.grads["pose_t"][0], 0)
        assert np.abs(m.store.grads["pose_t"][1]).sum() > 0

    def test_backward_before_forward_raises(self):
        m = build_model()
        with pytest.raises(RuntimeError, match="backward before forward"):
            m.backward({}, np.zeros((4, 3)))


class TestCompositionalOracle:
    def test_rotation_forward_matches_step_by_step(self):
        m = build_model(variant="rotation", seed=11, bump=True)
        batch = make_batch(seed=12, size=8)
        got = m.forward(batch)
        for i in range(8):
            n = int(batch.frame[i])
            pose = geo.FramePose(gyro=m.gyro[n],
                                 r_offset=m.store.values["pose_r"][n],
                                 eta_r=m.cfg.eta_r)
            R = geo.frame_rotation(pose)
            d = geo.normalize(R @ batch.cam_dir[i])
            o = m.store.values["pose_t"][n]
            hit = geo.intersect_unit_sphere(geo.Ray(origin=o, dir=d,
                                                    image_xy=batch.image_xy[i]))
            pn = geo.normalize(hit.point)
            off = lsm.eval_ray_offset(pn, batch.image_xy[i][None], m)[0]
            d2 = geo.apply_offset_rotation(d, off)
            hit2 = geo.intersect_unit_sphere(geo.Ray(origin=o, dir=d2,
                                                     image_xy=batch.image_xy[i]))
            pstar = geo.normalize(hit2.point)
            c = lsm.eval_color(pstar, batch.image_xy[i][None], m)[0]
            np.testing.assert_allclose(got[i], c, atol=1e-12)

    def test_depth_variant_matches_geometry_op(self):
        m = build_model(variant="depth", seed=13, bump=True)
        batch = make_batch(seed=14, size=8)
        _, ctx = m.forward(batch, want_ctx=True)
        for i in range(8):
            n = int(batch.frame[i])
            pose = geo.FramePose(gyro=m.gyro[n],
                                 r_offset=m.store.values["pose_r"][n],
                                 eta_r=m.cfg.eta_r)
            d = geo.normalize(geo.frame_rotation(pose) @ batch.cam_dir[i])
            o = m.store.values["pose_t"][n]
            ray = geo.Ray(origin=o, dir=d, image_xy=batch.image_xy[i])
            pn = geo.normalize(geo.intersect_unit_sphere(ray).point)
            delta = lsm.eval_ray_offset(pn, batch.image_xy[i][None], m)[0, 0]
            hit2 = geo.apply_offset_depth(ray, delta)
            np.testing.assert_allclose(ctx["Pstar"][i], hit2.point,
                                       atol=1e-12)


def fd_check(m, batch, flags=None, h=1e-5, tol=1e-4, per_block=8, seed=0):
    c, ctx = m.forward(batch, flags=flags, want_ctx=True)
    U = np.random.default_rng(seed).standard_normal(c.shape)
    m.store.zero_grad()
    m.backward(ctx, U)

    def loss():
        return float((m.forward(batch, flags=flags) * U).sum())

    report = []
    for name, val in m.store.values.items():
        g = m.store.grads[name].reshape(-1)
        nz = np.nonzero(np.abs(g) > 1e-12)[0]
        if len(nz) == 0:
            continue
        rng = np.random.default_rng(seed + (zlib.crc32(name.encode()) & 0xFFFF))
        pick = rng.choice(nz, size=min(per_block, len(nz)), replace=False)
        flat = val.reshape(-1)
        for idx in pick:
            an = g[idx]
            rel = None
            # a probe that straddles a ReLU or grid-cell kink produces a
            # spurious mismatch that shrinks with the step; a wrong gradient
            # does not, so re-probe smaller before declaring failure
            for step in (h, h / 16, h / 256):
                orig = flat[idx]
                flat[idx] = orig + step
                plus = loss()
                flat[idx] = orig - step
                minus = loss()
                flat[idx] = orig
                fd = (plus - minus) / (2 * step)
                if abs(fd) < 1e-12 and abs(an) < 1e-12:
                    rel = 0.0
                    break
                rel = abs(fd - an) / max(abs(fd), abs(an))
                if rel <= tol:
                    break
            report.append((rel, name, int(idx)))
    worst = max(report, key=lambda r: r[0])
    assert worst[0] <= tol, f"grad mismatch {worst}"
    return len(report)


class TestFiniteDifferences:
    @pytest.mark.parametrize("variant", ["rotation", "depth",
                                         "multiplicative", "none"])
    def test_full_graph_bumped(self, variant):
        m = build_model(variant=variant, seed=17, bump=True)
        n = fd_check(m, make_batch(seed=18), seed=19)
        assert n > 50

    def test_full_graph_zero_offset_heads(self):
        # the offset head sits exactly at zero: the skip path must still
        # hand the head its true gradient
        m = build_model(variant="rotation", seed=20, bump=False)
        n = fd_check(m, make_batch(seed=21), seed=22)
        assert n > 50

    def test_fractional_frames(self):
        m = build_model(variant="rotation", seed=23, bump=True)
        batch = make_batch(seed=24, fractional=True)
        fd_check(m, batch, seed=25)

    def test_view_color_ablated(self):
        m = build_model(variant="rotation", seed=26, bump=True)
        flags = lsm.AblationFlags(zero_view_color=True)
        fd_check(m, make_batch(seed=27), flags=flags, seed=28)


class TestRaysForFrame:
    def test_principal_ray_points_along_gyro_z(self):
        m = build_model(seed=29)
        m.store.values["pose_r"][:] = 0
        m.store.values["pose_t"][:] = 0
        origin, dirs, X, px = m.rays_for_frame(2, width=64, height=64)
        center = np.argmin(np.abs(px - 32.0).sum(axis=1))
        d = dirs[center] / np.linalg.norm(dirs[center])
        np.testing.assert_allclose(d, m.gyro[2] @ [0, 0, 1], atol=2e-2)
        assert X.min() >= 0 and X.max() <= 1
        np.testing.assert_array_equal(origin, 0)

    def test_strided_grid_size(self):
        m = build_model()
        origin, dirs, X, px = m.rays_for_frame(0, width=64, height=32,
                                               stride=4)
        assert len(dirs) == 16 * 8
