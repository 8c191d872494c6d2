"""Capture bundle on disk: one manifest plus one 16-bit PNG per frame.

The manifest embeds every frame's calibration record.  pixel_format says
whether the PNGs hold post-pipeline linear RGB ("linear16") or the raw
sensor mosaic ("raw16"); loading a raw bundle runs the mosaic pipeline so
callers always see linear RGB in [0, gain_max].
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import raw as rawpipe

BUNDLE_VERSION = 1
PIXEL_FORMATS = ("linear16", "raw16")
GYRO_ORTHO_TOL = 1e-3

REQUIRED_FRAME_FIELDS = (
    "file", "timestamp_s", "intrinsics", "gyro", "black_level",
    "white_level", "cfa", "gains", "ccm", "tonemap", "shade_map",
    "distortion", "rs_skew_s", "iso", "exposure_s",
)


class BundleError(ValueError):
    """Manifest or frame data violates the bundle contract."""


@dataclass
class FrameRecord:
    pixels: np.ndarray          # (H, W, 3) linear RGB after loading
    timestamp_s: float
    intrinsics: np.ndarray      # [fx, fy, cx, cy]
    gyro: np.ndarray            # (3, 3) world-from-camera rotation
    black_level: float = 0.0
    white_level: float = 1.0
    cfa: str = "BGGR"
    gains: np.ndarray = field(default_factory=lambda: np.ones(4))
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    tonemap: np.ndarray = field(default_factory=rawpipe.identity_tonemap)
    shade_map: np.ndarray = field(default_factory=lambda: np.ones((1, 1)))
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))
    rs_skew_s: float = 0.0
    iso: int = 100
    exposure_s: float = 0.01


@dataclass
class CaptureBundle:
    frames: list
    sensor_w: int
    sensor_h: int
    frame_dt_s: float

    @property
    def n_frames(self):
        return len(self.frames)

    def gyro_stack(self):
        return np.stack([f.gyro for f in self.frames])

    def intrinsics_stack(self):
        return np.stack([f.intrinsics for f in self.frames])

    def distortion_stack(self):
        return np.stack([f.distortion for f in self.frames])

    def pixel_stack(self):
        return np.stack([f.pixels for f in self.frames])


def _write_png16(path, image):
    scaled = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if scaled.ndim == 3:
        scaled = cv2.cvtColor(scaled, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), scaled):
        raise BundleError(f"could not write {path}")


def _read_png16(path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise BundleError(f"could not read {path}")
    if img.dtype != np.uint16:
        raise BundleError(f"{path} is not 16-bit")
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img.astype(np.float32) / 65535.0


def _orthonormalize_gyro(g, where):
    g = np.asarray(g, dtype=np.float64)
    u, _, vt = np.linalg.svd(g)
    nearest = u @ vt
    if np.abs(nearest - g).max() > GYRO_ORTHO_TOL:
        raise BundleError(f"{where}: gyro rotation departs from orthonormal "
                          f"by more than {GYRO_ORTHO_TOL}")
    return nearest


def save_bundle(bundle, path, pixel_format="linear16"):
    """Writes manifest.json plus frame_NNN.png files; returns the path."""
    if pixel_format not in PIXEL_FORMATS:
        raise BundleError(f"unknown pixel format {pixel_format!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames_meta = []
    for i, f in enumerate(bundle.frames):
        name = f"frame_{i:04d}.png"
        if pixel_format == "raw16":
            # pixels hold sensor counts; store them verbatim
            mosaic = np.round(np.asarray(f.pixels)).astype(np.uint16)
            if not cv2.imwrite(str(path / name), mosaic):
                raise BundleError(f"could not write {path / name}")
        else:
            _write_png16(path / name, f.pixels)
        frames_meta.append({
            "file": name,
            "timestamp_s": float(f.timestamp_s),
            "intrinsics": {k: float(v) for k, v in
                           zip(("fx", "fy", "cx", "cy"), f.intrinsics)},
            "gyro": np.asarray(f.gyro, dtype=np.float64).ravel().tolist(),
            "black_level": float(f.black_level),
            "white_level": float(f.white_level),
            "cfa": f.cfa,
            "gains": np.asarray(f.gains, dtype=np.float64).tolist(),
            "ccm": np.asarray(f.ccm, dtype=np.float64).ravel().tolist(),
            "tonemap": np.asarray(f.tonemap, dtype=np.float64).tolist(),
            "shade_map": {
                "w": int(np.asarray(f.shade_map).shape[1]),
                "h": int(np.asarray(f.shade_map).shape[0]),
                "data": np.asarray(f.shade_map,
                                   dtype=np.float64).ravel().tolist(),
            },
            "distortion": np.asarray(f.distortion,
                                     dtype=np.float64).tolist(),
            "rs_skew_s": float(f.rs_skew_s),
            "iso": int(f.iso),
            "exposure_s": float(f.exposure_s),
        })
    manifest = {
        "version": BUNDLE_VERSION,
        "pixel_format": pixel_format,
        "camera": {
            "sensor_w": int(bundle.sensor_w),
            "sensor_h": int(bundle.sensor_h),
            "frame_dt_s": float(bundle.frame_dt_s),
        },
        "frames": frames_meta,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_bundle(path):
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"no manifest.json under {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("version", "camera", "frames"):
        if key not in manifest:
            raise BundleError(f"manifest missing {key!r}")
    cam = manifest["camera"]
    for key in ("sensor_w", "sensor_h", "frame_dt_s"):
        if key not in cam:
            raise BundleError(f"camera block missing {key!r}")
    pixel_format = manifest.get("pixel_format", "linear16")
    if pixel_format not in PIXEL_FORMATS:
        raise BundleError(f"unknown pixel format {pixel_format!r}")
    entries = manifest["frames"]
    if len(entries) < 2:
        raise BundleError("a bundle needs at least 2 frames")

    frames = []
    for i, meta in enumerate(entries):
        where = f"frame {i}"
        for key in REQUIRED_FRAME_FIELDS:
            if key not in meta:
                raise BundleError(f"{where}: missing field {key!r}")
        img_path = path / meta["file"]
        if not img_path.exists():
            raise BundleError(f"{where}: image file {meta['file']} not found")
        intr = meta["intrinsics"]
        for key in ("fx", "fy", "cx", "cy"):
            if key not in intr:
                raise BundleError(f"{where}: intrinsics missing {key!r}")
        gyro = _orthonormalize_gyro(
            np.asarray(meta["gyro"], dtype=np.float64).reshape(3, 3), where)
        shade = meta["shade_map"]
        shade_map = np.asarray(shade["data"], dtype=np.float64).reshape(
            shade["h"], shade["w"])
        tonemap = np.asarray(meta["tonemap"], dtype=np.float64)
        if tonemap.shape != (256, 2):
            raise BundleError(f"{where}: tonemap must be 256 (in,out) pairs")

        if pixel_format == "raw16":
            mosaic = cv2.imread(str(img_path), cv2.IMREAD_UNCHANGED)
            if mosaic is None or mosaic.dtype != np.uint16 or mosaic.ndim != 2:
                raise BundleError(f"{where}: raw16 frames must be single "
                                  "channel 16-bit")
            pixels = rawpipe.raw_to_linear(
                mosaic,
                black_level=meta["black_level"],
                white_level=meta["white_level"],
                cfa=meta["cfa"], gains=meta["gains"],
                shade_map=shade_map).astype(np.float32)
        else:
            pixels = _read_png16(img_path)
            if pixels.ndim != 3:
                raise BundleError(f"{where}: linear16 frames must be RGB")

        frames.append(FrameRecord(
            pixels=pixels,
            timestamp_s=float(meta["timestamp_s"]),
            intrinsics=np.array([intr["fx"], intr["fy"], intr["cx"],
                                 intr["cy"]], dtype=np.float64),
            gyro=gyro,
            black_level=float(meta["black_level"]),
            white_level=float(meta["white_level"]),
            cfa=meta["cfa"],
            gains=np.asarray(meta["gains"], dtype=np.float64),
            ccm=np.asarray(meta["ccm"], dtype=np.float64).reshape(3, 3),
            tonemap=tonemap,
            shade_map=shade_map,
            distortion=np.asarray(meta["distortion"], dtype=np.float64),
            rs_skew_s=float(meta["rs_skew_s"]),
            iso=int(meta["iso"]),
            exposure_s=float(meta["exposure_s"]),
        ))

    order = np.argsort([f.timestamp_s for f in frames], kind="stable")
    frames = [frames[i] for i in order]
    stamps = [f.timestamp_s for f in frames]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise BundleError("timestamps must be strictly increasing")
    return CaptureBundle(frames=frames, sensor_w=cam["sensor_w"],
                         sensor_h=cam["sensor_h"],
                         frame_dt_s=cam["frame_dt_s"])
