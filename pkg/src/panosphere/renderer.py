"""Novel-view rendering from a fitted sphere model.

Virtual cameras are ideal (no distortion); widening the field of view
divides the focal lengths about the principal point while the pixel count
stays put.  Everything renders tape-free in chunks, so memory is flat in
the image size and the model is never mutated.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import geometry
from .dataio import raw as rawpipe
from .model import AblationFlags

STATIC_STITCH = AblationFlags(zero_ray_offset=True, zero_view_color=True)


class CameraError(ValueError):
    """Virtual camera violates its invariants."""


class RenderError(RuntimeError):
    """Frame export failed."""


@dataclass
class VirtualCamera:
    intrinsics: np.ndarray        # [fx, fy, cx, cy] at fov_scale 1
    rotation: np.ndarray          # (3, 3) world-from-camera
    translation: np.ndarray       # (3,), inside the sphere
    width: int
    height: int
    fov_scale: float = 1.0

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.fov_scale < 1:
            raise CameraError("fov_scale must be >= 1")
        if np.linalg.norm(self.translation) > geometry.ORIGIN_NORM_MAX:
            raise CameraError("camera must stay inside the sphere")
        if self.width < 1 or self.height < 1:
            raise CameraError("image size must be positive")

    @classmethod
    def from_frame(cls, model, idx, width, height, fov_scale=1.0):
        """Virtual camera at a recorded frame's current refined pose."""
        return cls(intrinsics=model.intrinsics[idx],
                   rotation=model.frame_rotation(idx),
                   translation=model.frame_origin(idx),
                   width=width, height=height, fov_scale=fov_scale)


@dataclass
class ColorPipeline:
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    tonemap: np.ndarray = field(default_factory=rawpipe.identity_tonemap)
    enabled: bool = True

    def __post_init__(self):
        curve = np.asarray(self.tonemap, dtype=np.float64)
        if np.any(np.diff(curve[:, 1]) < 0):
            raise ValueError("tonemap must be monotone nondecreasing")

    def apply(self, image):
        if not self.enabled:
            return np.clip(image, 0.0, 1.0)
        return rawpipe.render_color(image, ccm=self.ccm, tonemap=self.tonemap)


def camera_rays(cam):
    """World rays through every pixel center, fov_scale applied."""
    fx, fy, cx, cy = cam.intrinsics
    fx = fx / cam.fov_scale
    fy = fy / cam.fov_scale
    ys, xs = np.meshgrid(np.arange(cam.height, dtype=np.float64) + 0.5,
                         np.arange(cam.width, dtype=np.float64) + 0.5,
                         indexing="ij")
    d0 = np.stack([(xs.ravel() - cx) / fx, (ys.ravel() - cy) / fy,
                   np.ones(xs.size)], axis=-1)
    dirs = d0 @ cam.rotation.T
    origin = np.broadcast_to(cam.translation, dirs.shape)
    X = np.stack([xs.ravel() / cam.width, ys.ravel() / cam.height], axis=-1)
    return origin, dirs, X


def render_view(model, cam, flags=None, pipeline=None, chunk=1 << 14,
                image_feats=None):
    """One image through a virtual camera; full forward pass with no
    perturbation, colors clamped to [0,1] after the optional pipeline.
    image_feats: optional model.encode_image_xy output for this camera's
    pixel grid (it only depends on width and height)."""
    cam.validate()
    origin, dirs, X = camera_rays(cam)
    colors = np.empty((len(dirs), 3))
    for lo in range(0, len(dirs), chunk):
        sl = slice(lo, lo + chunk)
        if image_feats is None:
            # keyword omitted so any object with color_for_rays renders
            c, _ = model.color_for_rays(origin[sl], dirs[sl], X[sl], flags)
        else:
            c, _ = model.color_for_rays(origin[sl], dirs[sl], X[sl], flags,
                                        image_feats=image_feats[sl])
        colors[sl] = c
    image = colors.reshape(cam.height, cam.width, 3)
    if pipeline is not None:
        return pipeline.apply(image)
    return np.clip(image, 0.0, 1.0)


def equirect_dirs(height, width=None):
    """Unit directions through every texel center of a lon/lat panorama."""
    if width is None:
        width = 2 * height
    jj, ii = np.meshgrid(np.arange(width, dtype=np.float64) + 0.5,
                         np.arange(height, dtype=np.float64) + 0.5,
                         indexing="xy")
    lon = jj / width * 2 * np.pi - np.pi
    lat = np.pi / 2 - ii / height * np.pi
    x = np.cos(lat) * np.sin(lon)
    y = -np.sin(lat)
    z = np.cos(lat) * np.cos(lon)
    return np.stack([x, y, z], axis=-1)


def render_equirect(model, height, width=None, flags=STATIC_STITCH,
                    ref_xy=(0.5, 0.5), chunk=1 << 14):
    """Panorama of the sphere surface seen from the center.  From the
    origin the first intersection is the direction itself, so with the
    static-stitch flags this is a direct readout of the stored sphere;
    pass other flags plus a reference image point to bake a view."""
    dirs = equirect_dirs(height, width).reshape(-1, 3)
    origin = np.zeros_like(dirs)
    X = np.broadcast_to(np.asarray(ref_xy, dtype=np.float64), dirs.shape[:1]
                        + (2,))
    colors = np.empty((len(dirs), 3))
    for lo in range(0, len(dirs), chunk):
        sl = slice(lo, lo + chunk)
        c, _ = model.color_for_rays(origin[sl], dirs[sl], X[sl], flags)
        colors[sl] = c
    w = width if width is not None else 2 * height
    return np.clip(colors.reshape(height, w, 3), 0.0, 1.0)


def coverage_mask(model, sensor_w, sensor_h, height, width=None, stride=4):
    """Which panorama texels at least one training ray lands in, using the
    model's current poses.  Extrapolated regions show up as False."""
    if width is None:
        width = 2 * height
    counts = np.zeros(height * width, dtype=np.int64)
    for idx in range(len(model.gyro)):
        origin, dirs, _, _ = model.rays_for_frame(idx, sensor_w, sensor_h,
                                                  stride=stride)
        hit = geometry.intersect_unit_sphere(
            geometry.Ray(origin=origin, dir=geometry.normalize(dirs),
                         image_xy=None))
        p = hit.point
        lon = np.arctan2(p[:, 0], p[:, 2])
        lat = np.arcsin(np.clip(-p[:, 1], -1.0, 1.0))
        jj = np.floor((lon + np.pi) / (2 * np.pi) * width).astype(np.int64)
        ii = np.floor((np.pi / 2 - lat) / np.pi * height).astype(np.int64)
        jj = np.clip(jj, 0, width - 1)
        ii = np.clip(ii, 0, height - 1)
        counts += np.bincount(ii * width + jj, minlength=height * width)
    return (counts >= 1).reshape(height, width)


def orbit_path(n, base, sweep=2 * np.pi):
    """n cameras panning about the vertical axis from the base pose."""
    cams = []
    for k in range(n):
        R = geometry.rot_y(sweep * k / n) @ base.rotation
        cams.append(VirtualCamera(intrinsics=base.intrinsics, rotation=R,
                                  translation=base.translation,
                                  width=base.width, height=base.height,
                                  fov_scale=base.fov_scale))
    return cams


def save_image(path, image, bits=8):
    """PNG export, 8- or 16-bit, RGB in [0,1]."""
    if bits not in (8, 16):
        raise RenderError("bits must be 8 or 16")
    scale = 255.0 if bits == 8 else 65535.0
    dtype = np.uint8 if bits == 8 else np.uint16
    arr = np.round(np.clip(image, 0.0, 1.0) * scale).astype(dtype)
    if not cv2.imwrite(str(path), cv2.cvtColor(arr, cv2.COLOR_RGB2BGR)):
        raise RenderError(f"could not write {path}")


def render_path(model, cams, sink=None, flags=None, pipeline=None):
    """Frames for a camera path, in order.  sink may be a directory (8-bit
    PNGs plus a timing manifest) or a callable(frame_index, image).
    Returns (frames, stats) with per-frame milliseconds and overall FPS."""
    if not len(cams):
        raise ValueError("empty camera path")
    out_dir = None
    if sink is not None and not callable(sink):
        out_dir = Path(sink)
        out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    per_ms = []
    for i, cam in enumerate(cams):
        t0 = time.perf_counter()
        img = render_view(model, cam, flags=flags, pipeline=pipeline)
        per_ms.append((time.perf_counter() - t0) * 1000.0)
        frames.append(img)
        if out_dir is not None:
            save_image(out_dir / f"view_{i:04d}.png", img)
        elif sink is not None:
            sink(i, img)
    total_s = sum(per_ms) / 1000.0
    stats = {"frames": len(frames), "per_frame_ms": per_ms,
             "fps": len(frames) / total_s if total_s > 0 else float("inf")}
    if out_dir is not None:
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(stats, fh, indent=1)
    return frames, stats
