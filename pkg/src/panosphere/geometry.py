"""Closed-form camera and sphere geometry.

Back-projection, unit-sphere intersection, small-angle rotations, lens
distortion, rolling shutter, and the three ray-offset application rules.
All functions are vectorized over leading axes: a Vec3 is any (..., 3)
array, a Mat3 any (..., 3, 3) array.  Scene units are sphere radii.

Camera convention: +x right, +y down, +z forward; image coordinates
(u, v) are normalized to [0, 1]^2 with u along width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ETA_R_DEFAULT = 1e-3   # learning-rate weight on the rotation offset R_n
ORIGIN_NORM_MAX = 0.99  # pose clamp; keeps the intersection discriminant positive


class GeometryError(ValueError):
    """Raised when a geometric precondition is violated."""


@dataclass
class CameraIntrinsics:
    """Pinhole K in normalized-image units (cx, cy in [0,1])."""

    fx: float
    fy: float
    cx: float
    cy: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass
class LensDistortion:
    """Radial polynomial distortion, kappa = (k1..k5); all-zero is identity."""

    kappa: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        if self.kappa.shape != (5,):
            raise GeometryError("distortion needs exactly 5 coefficients")


@dataclass
class FramePose:
    """Device rotation G_n plus the learned offsets (T_n, R_n), both init 0.

    The effective rotation is rot(eta_r * r_offset) @ gyro and the effective
    origin is t_offset; ``‖t_offset‖ <= 0.99`` is maintained by the trainer's
    post-step clamp.
    """

    gyro: np.ndarray
    t_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta_r: float = ETA_R_DEFAULT


@dataclass
class Ray:
    """A ray with its originating image coordinate and (fractional) frame."""

    origin: np.ndarray    # (..., 3), ‖origin‖ < 1
    dir: np.ndarray       # (..., 3), unit
    image_xy: np.ndarray  # (..., 2) in [0,1]^2
    frame: np.ndarray | float = 0.0


@dataclass
class SphereHit:
    """Ray-sphere intersection: parameter t >= 0 and unit point."""

    t: np.ndarray | float
    point: np.ndarray


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit vectors along the last axis."""
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def skew(r: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(r) @ v == r x v."""
    r = np.asarray(r)
    out = np.zeros(r.shape[:-1] + (3, 3), dtype=r.dtype)
    rx, ry, rz = r[..., 0], r[..., 1], r[..., 2]
    out[..., 0, 1] = -rz
    out[..., 0, 2] = ry
    out[..., 1, 0] = rz
    out[..., 1, 2] = -rx
    out[..., 2, 0] = -ry
    out[..., 2, 1] = rx
    return out


def small_angle_rot(r: np.ndarray) -> np.ndarray:
    """Linearized rotation I + skew(r).

    Exactly the printed small-angle matrix
    [[1, -rz, ry], [rz, 1, -rx], [-ry, rx, 1]]; departs from orthogonality
    only at second order in ‖r‖.
    """
    r = np.asarray(r)
    out = skew(r)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 2] = 1.0
    return out


def frame_rotation(pose: FramePose) -> np.ndarray:
    """Effective camera-to-world rotation rot(eta_r * r_offset) @ gyro."""
    return small_angle_rot(pose.eta_r * np.asarray(pose.r_offset)) @ np.asarray(pose.gyro)


def backproject(xy: np.ndarray, intr: CameraIntrinsics, pose: FramePose,
                frame: np.ndarray | float = 0.0) -> Ray:
    """Image coordinates to a world ray: dir = normalize(R @ Kinv @ [u,v,1])."""
    if intr.fx == 0 or intr.fy == 0:
        raise GeometryError("invalid intrinsics: fx and fy must be nonzero")
    xy = np.asarray(xy, dtype=np.float64)
    d = np.empty(xy.shape[:-1] + (3,))
    d[..., 0] = (xy[..., 0] - intr.cx) / intr.fx
    d[..., 1] = (xy[..., 1] - intr.cy) / intr.fy
    d[..., 2] = 1.0
    world = d @ frame_rotation(pose).T
    origin = np.broadcast_to(np.asarray(pose.t_offset, dtype=np.float64),
                             world.shape).copy()
    return Ray(origin=origin, dir=normalize(world), image_xy=xy, frame=frame)


def sphere_crossing(origin: np.ndarray, dir: np.ndarray,
                    radius: float | np.ndarray = 1.0):
    """Raw intersection arithmetic t = -(O.D) + sqrt((O.D)^2 - (‖O‖^2 - rad^2)).

    No validation; returns (t, discriminant) so callers can mask failures.
    """
    b = np.sum(origin * dir, axis=-1)
    disc = b * b - np.sum(origin * origin, axis=-1) + np.square(radius)
    return -b + np.sqrt(np.maximum(disc, 0.0)), disc


def intersect_unit_sphere(ray: Ray) -> SphereHit:
    """Forward intersection with the unit sphere; origin must be inside."""
    onorm = np.linalg.norm(ray.origin, axis=-1)
    if np.any(onorm >= 1.0):
        raise GeometryError(
            "ray origin outside the unit sphere (‖O‖=%g); pose clamp violated"
            % np.max(onorm))
    t, _ = sphere_crossing(ray.origin, ray.dir)
    point = normalize(ray.origin + t[..., None] * ray.dir)
    return SphereHit(t=t, point=point)


def apply_offset_rotation(dir: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Bend a unit direction by the linearized rotation of `off`, renormalized."""
    return normalize(dir + np.cross(off, dir))


def apply_offset_depth(ray: Ray, delta: np.ndarray | float) -> SphereHit:
    """Re-intersect with a sphere of radius 1 + delta; point normalized to unit."""
    radius = 1.0 + np.asarray(delta)
    onorm = np.linalg.norm(ray.origin, axis=-1)
    if np.any(radius <= onorm):
        raise GeometryError("degenerate radius: 1+delta must exceed ‖origin‖")
    t, _ = sphere_crossing(ray.origin, ray.dir, radius)
    point = normalize(ray.origin + t[..., None] * ray.dir)
    return SphereHit(t=t, point=point)


def apply_offset_multiplicative(dir: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Scale a direction elementwise by (1 + m), renormalized."""
    out = (1.0 + m) * dir
    if np.any(np.linalg.norm(out, axis=-1) == 0.0):
        raise GeometryError("degenerate direction: (1+m) * dir has zero norm")
    return normalize(out)


def distort(xy: np.ndarray, d: LensDistortion, intr: CameraIntrinsics) -> np.ndarray:
    """Radial polynomial correction about the optical center.

    x_dist = x * (1 + k1 r^2 + k2 r^4 + k3 r^6 + k4 r^8 + k5 r^10) with r
    measured from (cx, cy); applied to sampled pixel coordinates before
    back-projection.
    """
    xy = np.asarray(xy, dtype=np.float64)
    dx = xy[..., 0] - intr.cx
    dy = xy[..., 1] - intr.cy
    r2 = dx * dx + dy * dy
    k = d.kappa
    factor = 1.0 + r2 * (k[0] + r2 * (k[1] + r2 * (k[2] + r2 * (k[3] + r2 * k[4]))))
    out = np.empty_like(xy)
    out[..., 0] = intr.cx + dx * factor
    out[..., 1] = intr.cy + dy * factor
    return out


def undistort(xy: np.ndarray, d: LensDistortion, intr: CameraIntrinsics,
              iters: int = 10) -> np.ndarray:
    """Invert distort() by fixed-point iteration on the radial factor.

    Converges for the mild barrel/pincushion profiles phone lenses produce;
    iters=10 reaches float64 round-trip accuracy for |factor - 1| < 0.5.
    """
    xy = np.asarray(xy, dtype=np.float64)
    c = np.array([intr.cx, intr.cy])
    offs = xy - c
    k = d.kappa
    undone = offs.copy()
    for _ in range(iters):
        r2 = (undone * undone).sum(axis=-1, keepdims=True)
        factor = 1.0 + r2 * (k[0] + r2 * (k[1] + r2 * (k[2] + r2 * (k[3] + r2 * k[4]))))
        undone = offs / factor
    return undone + c


def rolling_shutter_frame(n, row, skew_s: float, height: int,
                          frame_dt_s: float):
    """Fractional frame index after the per-row readout delay.

    Row r is exposed skew_s * r / height seconds after row 0, shifting the
    effective capture time by that fraction of the frame interval.
    """
    if frame_dt_s <= 0:
        raise GeometryError("frame_dt_s must be positive")
    return np.asarray(n) + (np.asarray(row) * skew_s / height) / frame_dt_s


def perturb_origin(origin: np.ndarray, eta_p: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Gaussian ray-origin perturbation O + eta_p * N(0,1); exact at eta_p=0."""
    if eta_p < 0:
        raise GeometryError("eta_p must be nonnegative")
    if eta_p == 0.0:
        return origin
    return origin + eta_p * rng.standard_normal(np.shape(origin))


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def ypr_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-world rotation from yaw (pan right), pitch (look up), roll.

    With +y down, positive yaw rotates the forward axis toward +x and
    positive pitch toward -y (upward).
    """
    return rot_y(yaw) @ rot_x(pitch) @ rot_z(roll)
