"""Ground-truth scenes for desk-scale experiments.

A scene is an equirectangular environment texture on the unit sphere plus
optional textured patches floating at radius < 1, so lateral camera motion
produces true parallax.  GroundTruthScene implements the same
color_for_rays protocol as the trained model, which makes it directly
renderable and usable as an oracle.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .. import geometry
from .bundle import CaptureBundle, FrameRecord


def band_limited_texture(h, w, rng, lo=0.15, hi=0.85, detail=3.0):
    """Smooth random texture with values held inside [lo, hi] so additive
    noise studies stay clear of the [0,1] clamp.  Quantized to 8-bit steps
    to give reprojection tests an exact tolerance unit."""
    base = rng.standard_normal((h, w, 3))
    tex = np.stack([gaussian_filter(base[..., c], sigma=detail,
                                    mode="wrap") for c in range(3)], axis=-1)
    tex -= tex.min()
    tex /= max(tex.max(), 1e-9)
    tex = lo + (hi - lo) * tex
    return np.round(tex * 255.0) / 255.0


@dataclass
class ScenePatch:
    """Spherical-cap billboard at radius < 1 carrying its own texture."""
    center: np.ndarray           # unit direction to the cap center
    angular_radius: float        # radians
    distance: float              # radial position of the cap surface
    texture: np.ndarray          # (th, tw, 3)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.center = self.center / np.linalg.norm(self.center)
        if not 0 < self.distance < 1:
            raise ValueError("patch must sit strictly inside the sphere")


class GroundTruthScene:
    """Analytic scene: env texture at radius 1, patches nearer in."""

    def __init__(self, env_texture, patches=()):
        self.env = np.asarray(env_texture, dtype=np.float64)
        self.patches = list(patches)

    def sample_env(self, dirs):
        return sample_equirect(self.env, dirs)

    def color_for_rays(self, origin, dirs, image_xy=None, flags=None):
        origin = np.atleast_2d(np.asarray(origin, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        dn = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        valid = (origin * origin).sum(-1) < 1.0
        colors = self.sample_env(_sphere_points(origin, dn, 1.0))
        # nearer patches overwrite the backdrop; iterate close-to-far so the
        # closest surface wins
        for patch in sorted(self.patches, key=lambda p: p.distance):
            hit, point = _cap_hit(origin, dn, patch)
            if hit.any():
                colors[hit] = _sample_cap(patch, point[hit])
        colors[~valid] = 0
        return colors, valid


def _sphere_points(origin, dn, radius):
    u = (origin * dn).sum(-1)
    q = (origin * origin).sum(-1) - radius * radius
    disc = np.maximum(u * u - q, 0.0)
    t = -u + np.sqrt(disc)
    return origin + t[:, None] * dn


def _cap_hit(origin, dn, patch):
    """Forward ray hit on the patch shell inside its angular footprint."""
    u = (origin * dn).sum(-1)
    q = (origin * origin).sum(-1) - patch.distance**2
    disc = u * u - q
    ok = disc > 0
    t = -u + np.sqrt(np.maximum(disc, 0.0))
    ok &= t > 1e-9
    point = origin + t[:, None] * dn
    radial = point / np.maximum(np.linalg.norm(point, axis=-1, keepdims=True),
                                1e-12)
    cosang = radial @ patch.center
    ok &= cosang >= np.cos(patch.angular_radius)
    return ok, point


def _sample_cap(patch, points):
    """Orthographic chart over the cap: project onto the two tangent axes."""
    c = patch.center
    helper = np.array([0.0, 1.0, 0.0])
    if abs(c @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    ax = np.cross(helper, c)
    ax /= np.linalg.norm(ax)
    ay = np.cross(c, ax)
    radial = points / np.linalg.norm(points, axis=-1, keepdims=True)
    extent = np.sin(patch.angular_radius)
    uu = (radial @ ax) / extent * 0.5 + 0.5
    vv = (radial @ ay) / extent * 0.5 + 0.5
    return sample_bilinear(patch.texture, uu, vv)


def sample_equirect(texture, dirs):
    """Bilinear lookup of unit directions in an equirectangular texture.
    Longitude wraps; latitude clamps at the poles.  +y is down, so the top
    texture row maps to straight up."""
    dn = np.asarray(dirs, dtype=np.float64)
    dn = dn / np.linalg.norm(dn, axis=-1, keepdims=True)
    lon = np.arctan2(dn[..., 0], dn[..., 2])
    lat = np.arcsin(np.clip(-dn[..., 1], -1.0, 1.0))
    h, w = texture.shape[:2]
    uu = (lon + np.pi) / (2 * np.pi)
    vv = (np.pi / 2 - lat) / np.pi
    x = uu * w - 0.5
    y = np.clip(vv * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x0w = x0 % w
    x1w = (x0 + 1) % w
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    c00 = texture[y0c, x0w]
    c01 = texture[y0c, x1w]
    c10 = texture[y1c, x0w]
    c11 = texture[y1c, x1w]
    top = c00 * (1 - fx[..., None]) + c01 * fx[..., None]
    bot = c10 * (1 - fx[..., None]) + c11 * fx[..., None]
    return top * (1 - fy[..., None]) + bot * fy[..., None]


def sample_bilinear(texture, uu, vv):
    h, w = texture.shape[:2]
    x = np.clip(uu * w - 0.5, 0.0, w - 1.0)
    y = np.clip(vv * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    top = texture[y0, x0] * (1 - fx) + texture[y0, x1] * fx
    bot = texture[y1, x0] * (1 - fx) + texture[y1, x1] * fx
    return top * (1 - fy) + bot * fy


@dataclass
class SyntheticSceneSpec:
    scene: GroundTruthScene
    rotations: np.ndarray        # (N, 3, 3) world-from-camera per frame
    translations: np.ndarray     # (N, 3) camera centers, inside the sphere
    width: int = 128
    height: int = 128
    fov_deg: float = 60.0
    noise_sigma: float = 0.0
    gyro_noise_deg: float = 0.0
    frame_dt_s: float = 1.0 / 30.0
    seed: int = 0

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        if np.any(np.linalg.norm(self.translations, axis=-1) >= 1):
            raise ValueError("camera path must stay inside the sphere")

    @property
    def intrinsics(self):
        f = 0.5 * self.width / np.tan(np.radians(self.fov_deg) / 2)
        return np.array([f, f, self.width / 2.0, self.height / 2.0])


def rotation_path(n_frames, sweep_deg, axis="y"):
    """Pure panning rotation, evenly spaced over the sweep."""
    rot = {"x": geometry.rot_x, "y": geometry.rot_y, "z": geometry.rot_z}[axis]
    angles = np.radians(np.linspace(-sweep_deg / 2, sweep_deg / 2, n_frames))
    R = np.stack([rot(a) for a in angles])
    return R, np.zeros((n_frames, 3))


def parallax_path(n_frames, sweep_deg, lateral):
    """Panning sweep with a correlated lateral slide, the capture pattern
    that makes nearby content shift against the backdrop."""
    R, _ = rotation_path(n_frames, sweep_deg)
    x = np.linspace(-lateral, lateral, n_frames)
    T = np.stack([x, np.zeros(n_frames), np.zeros(n_frames)], axis=-1)
    return R, T


def render_synthetic(spec):
    """Bundle + ground truth from an analytic scene.  Frames are rendered
    with the same back-projection geometry the model trains with; poses and
    the scene object ride along for oracle use."""
    rng = np.random.default_rng(spec.seed)
    n = len(spec.rotations)
    fx, fy, cx, cy = spec.intrinsics
    ys, xs = np.meshgrid(np.arange(spec.height, dtype=np.float64) + 0.5,
                         np.arange(spec.width, dtype=np.float64) + 0.5,
                         indexing="ij")
    d0 = np.stack([(xs.ravel() - cx) / fx, (ys.ravel() - cy) / fy,
                   np.ones(xs.size)], axis=-1)

    gyro_true = spec.rotations
    gyro_recorded = gyro_true.copy()
    if spec.gyro_noise_deg > 0:
        angle = np.radians(spec.gyro_noise_deg)
        for i in range(n):
            ax = rng.standard_normal(3)
            ax /= np.linalg.norm(ax)
            gyro_recorded[i] = _axis_angle(ax, angle) @ gyro_true[i]

    frames = []
    for i in range(n):
        dirs = d0 @ gyro_true[i].T
        origin = np.broadcast_to(spec.translations[i], dirs.shape)
        colors, _ = spec.scene.color_for_rays(origin, dirs)
        img = colors.reshape(spec.height, spec.width, 3)
        if spec.noise_sigma > 0:
            img = img + spec.noise_sigma * rng.standard_normal(img.shape)
        img = np.clip(img, 0.0, 1.0)
        frames.append(FrameRecord(
            pixels=img.astype(np.float32),
            timestamp_s=i * spec.frame_dt_s,
            intrinsics=spec.intrinsics.copy(),
            gyro=gyro_recorded[i],
        ))
    bundle = CaptureBundle(frames=frames, sensor_w=spec.width,
                           sensor_h=spec.height, frame_dt_s=spec.frame_dt_s)
    truth = {
        "rotations": gyro_true,
        "translations": spec.translations.copy(),
        "scene": spec.scene,
    }
    return bundle, truth


def _axis_angle(axis, angle):
    k = geometry.skew(np.asarray(axis, dtype=np.float64))
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
