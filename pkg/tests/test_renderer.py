"""Rendering oracles against the analytic scene.

The ground-truth scene drops straight into every render entry point, so
camera ray construction, FOV expansion, and the equirect convention are
all checked against closed-form resampling with no training anywhere.
"""

import json

import numpy as np
import pytest

from panosphere import geometry, renderer
from panosphere.dataio import raw, synthetic as syn
from panosphere.model import LightSphereModel, ModelConfig
from panosphere.renderer import (CameraError, ColorPipeline, VirtualCamera,
                                 camera_rays, coverage_mask, equirect_dirs,
                                 orbit_path, render_equirect, render_path,
                                 render_view, save_image)


def scene_and_bundle(rng, n=3, size=32, sweep=30.0, patches=()):
    scene = syn.GroundTruthScene(syn.band_limited_texture(128, 256, rng),
                                 patches=patches)
    R, T = syn.rotation_path(n, sweep)
    spec = syn.SyntheticSceneSpec(scene=scene, rotations=R, translations=T,
                                  width=size, height=size)
    bundle, truth = syn.render_synthetic(spec)
    return scene, bundle, truth, spec


def cam_for(spec, rotation, fov_scale=1.0, translation=(0, 0, 0)):
    return VirtualCamera(intrinsics=spec.intrinsics, rotation=rotation,
                         translation=np.asarray(translation, float),
                         width=spec.width, height=spec.height,
                         fov_scale=fov_scale)


class TestVirtualCamera:
    def test_invariants(self):
        ok = VirtualCamera(intrinsics=[40, 40, 16, 16], rotation=np.eye(3),
                           translation=[0, 0, 0], width=32, height=32)
        assert ok.fov_scale == 1.0
        with pytest.raises(CameraError):
            VirtualCamera(intrinsics=[40, 40, 16, 16], rotation=np.eye(3),
                          translation=[0, 0, 0], width=32, height=32,
                          fov_scale=0.5)
        with pytest.raises(CameraError):
            VirtualCamera(intrinsics=[40, 40, 16, 16], rotation=np.eye(3),
                          translation=[1.0, 0, 0], width=32, height=32)

    def test_fov_scale_widens_rays(self):
        base = VirtualCamera(intrinsics=[40, 40, 16, 16],
                             rotation=np.eye(3), translation=[0, 0, 0],
                             width=32, height=32)
        wide = VirtualCamera(intrinsics=[40, 40, 16, 16],
                             rotation=np.eye(3), translation=[0, 0, 0],
                             width=32, height=32, fov_scale=3.0)
        _, d1, _ = camera_rays(base)
        _, d3, _ = camera_rays(wide)
        # corner ray tangent triples with the scale
        assert np.allclose(d3[0][:2], 3 * d1[0][:2], atol=1e-12)


class TestRenderView:
    def test_reproduces_training_frame(self):
        rng = np.random.default_rng(0)
        scene, bundle, truth, spec = scene_and_bundle(rng)
        cam = cam_for(spec, truth["rotations"][1])
        img = render_view(scene, cam)
        assert np.abs(img - bundle.frames[1].pixels).max() < 1e-6

    def test_fov3_center_matches_fov1(self):
        rng = np.random.default_rng(1)
        scene, bundle, truth, spec = scene_and_bundle(rng, size=64)
        narrow = render_view(scene, cam_for(spec, np.eye(3)))
        wide = render_view(scene, cam_for(spec, np.eye(3), fov_scale=3.0))
        # scale-1 pixel p appears at cx + (p - cx)/3 in the wide render
        cx = spec.intrinsics[2]
        cy = spec.intrinsics[3]
        ys, xs = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5,
                             indexing="ij")
        u = (cx + (xs - cx) / 3) / 64
        v = (cy + (ys - cy) / 3) / 64
        resampled = syn.sample_bilinear(wide, u, v)
        err = np.abs(resampled - narrow)
        assert err.mean() < 0.01 and err.max() < 0.06

    def test_pipeline_identity_bit_exact(self):
        rng = np.random.default_rng(2)
        scene, _, truth, spec = scene_and_bundle(rng, size=16)
        cam = cam_for(spec, truth["rotations"][0])
        plain = render_view(scene, cam)
        piped = render_view(scene, cam, pipeline=ColorPipeline())
        disabled = render_view(scene, cam,
                               pipeline=ColorPipeline(enabled=False))
        assert np.array_equal(plain, piped)
        assert np.array_equal(plain, disabled)

    def test_pipeline_applies_ccm(self):
        rng = np.random.default_rng(3)
        scene, _, truth, spec = scene_and_bundle(rng, size=16)
        cam = cam_for(spec, truth["rotations"][0])
        ccm = np.array([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1], [0.0, 0.1, 0.9]])
        plain = render_view(scene, cam)
        piped = render_view(scene, cam, pipeline=ColorPipeline(ccm=ccm))
        assert np.allclose(piped, np.clip(plain @ ccm.T, 0, 1), atol=1e-12)

    def test_tonemap_must_be_monotone(self):
        curve = raw.identity_tonemap()
        curve[100, 1] = 0.0
        with pytest.raises(ValueError):
            ColorPipeline(tonemap=curve)

    def test_revalidates_mutated_camera(self):
        rng = np.random.default_rng(4)
        scene, _, truth, spec = scene_and_bundle(rng, size=8)
        cam = cam_for(spec, truth["rotations"][0])
        cam.translation = np.array([2.0, 0.0, 0.0])
        with pytest.raises(CameraError):
            render_view(scene, cam)

    def test_works_on_untrained_model(self):
        rng = np.random.default_rng(5)
        scene, bundle, truth, spec = scene_and_bundle(rng, size=16)
        cfg = ModelConfig.desk_scale(n_frames=bundle.n_frames)
        model = LightSphereModel(cfg, gyro=bundle.gyro_stack(),
                                 intrinsics=bundle.intrinsics_stack(),
                                 rng=np.random.default_rng(0))
        cam = VirtualCamera.from_frame(model, 0, 16, 16)
        img = render_view(model, cam)
        assert img.shape == (16, 16, 3)
        assert np.all((img >= 0) & (img <= 1))


class TestEquirect:
    def test_dirs_are_unit_and_oriented(self):
        d = equirect_dirs(8)
        assert d.shape == (8, 16, 3)
        assert np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)
        assert d[0, 0, 1] < -0.9          # top row looks up (+y is down)
        assert d[-1, 0, 1] > 0.9
        mid = d[4, 8]                     # just past center: near +z
        assert mid[2] > 0.9

    def test_round_trips_source_texture(self):
        # rendering the ground-truth scene at the texture's own resolution
        # lands every texel center back on itself
        rng = np.random.default_rng(6)
        scene = syn.GroundTruthScene(syn.band_limited_texture(64, 128, rng))
        pano = render_equirect(scene, 64)
        assert pano.shape == (64, 128, 3)
        assert np.abs(pano - scene.env).max() < 1e-9

    def test_constant_scene_constant_pano(self):
        scene = syn.GroundTruthScene(np.full((16, 32, 3), 0.4))
        pano = render_equirect(scene, 8, width=24)
        assert pano.shape == (8, 24, 3)
        assert np.allclose(pano, 0.4, atol=1e-12)


class TestCoverage:
    def test_rotation_sweep_band(self):
        rng = np.random.default_rng(7)
        scene, bundle, truth, spec = scene_and_bundle(rng, n=5, sweep=60.0)
        cfg = ModelConfig.desk_scale(n_frames=bundle.n_frames)
        model = LightSphereModel(cfg, gyro=bundle.gyro_stack(),
                                 intrinsics=bundle.intrinsics_stack(),
                                 rng=np.random.default_rng(0))
        mask = coverage_mask(model, bundle.sensor_w, bundle.sensor_h,
                             height=32, stride=1)
        assert mask.shape == (32, 64)
        assert mask.any() and not mask.all()
        # forward band covered, the antipode never observed
        assert mask[16, 32]
        assert not mask[16, 0]
        # covered fraction tracks the swept solid angle, loosely
        frac = mask.mean()
        assert 0.03 < frac < 0.5


class TestRenderPath:
    def test_single_camera_matches_render_view(self):
        rng = np.random.default_rng(8)
        scene, _, truth, spec = scene_and_bundle(rng, size=16)
        cam = cam_for(spec, truth["rotations"][0])
        frames, stats = render_path(scene, [cam])
        assert len(frames) == 1
        assert np.array_equal(frames[0], render_view(scene, cam))
        assert stats["frames"] == 1 and len(stats["per_frame_ms"]) == 1

    def test_deterministic_and_stats(self):
        rng = np.random.default_rng(9)
        scene, _, truth, spec = scene_and_bundle(rng, size=16)
        base = cam_for(spec, np.eye(3))
        cams = orbit_path(6, base)
        f1, s1 = render_path(scene, cams)
        f2, _ = render_path(scene, cams)
        for a, b in zip(f1, f2):
            assert np.array_equal(a, b)
        assert s1["fps"] > 0

    def test_directory_sink(self, tmp_path):
        rng = np.random.default_rng(10)
        scene, _, truth, spec = scene_and_bundle(rng, size=16)
        cams = orbit_path(3, cam_for(spec, np.eye(3)))
        frames, _ = render_path(scene, cams, sink=tmp_path / "orbit")
        files = sorted((tmp_path / "orbit").glob("view_*.png"))
        assert len(files) == 3
        manifest = json.loads((tmp_path / "orbit" / "manifest.json")
                              .read_text())
        assert manifest["frames"] == 3

    def test_callable_sink(self):
        rng = np.random.default_rng(11)
        scene, _, truth, spec = scene_and_bundle(rng, size=8)
        got = []
        render_path(scene, [cam_for(spec, np.eye(3))],
                    sink=lambda i, img: got.append((i, img.shape)))
        assert got == [(0, (8, 8, 3))]

    def test_empty_path_refused(self):
        rng = np.random.default_rng(12)
        scene, _, _, _ = scene_and_bundle(rng, size=8)
        with pytest.raises(ValueError):
            render_path(scene, [])


class TestSaveImage:
    def test_round_trip_16_bit(self, tmp_path):
        rng = np.random.default_rng(13)
        img = np.round(rng.uniform(size=(6, 6, 3)) * 65535) / 65535
        save_image(tmp_path / "x.png", img, bits=16)
        import cv2
        back = cv2.cvtColor(cv2.imread(str(tmp_path / "x.png"),
                                       cv2.IMREAD_UNCHANGED),
                            cv2.COLOR_BGR2RGB)
        assert back.dtype == np.uint16
        assert np.array_equal(back, np.round(img * 65535).astype(np.uint16))

    def test_8_bit_and_bad_depth(self, tmp_path):
        save_image(tmp_path / "y.png", np.full((4, 4, 3), 0.5), bits=8)
        import cv2
        back = cv2.imread(str(tmp_path / "y.png"), cv2.IMREAD_UNCHANGED)
        assert back.dtype == np.uint8
        with pytest.raises(renderer.RenderError):
            save_image(tmp_path / "z.png", np.zeros((2, 2, 3)), bits=12)
