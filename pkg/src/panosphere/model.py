"""Single-layer spherical light field with view-dependent ray offsets.

Forward pipeline per ray: the camera-frame direction is rotated by the
gyro-seeded, jointly refined frame rotation, the ray is cast from the
refined camera position onto the unit sphere, an offset network bends the
ray (rotation, depth, or per-axis multiplicative variant), the bent ray is
re-intersected, and the final surface point plus the ray's image coordinate
drive the color networks:

    c = h_C( h_P(gamma2(P*)) + h_D(gamma1(X)) )

backward() replays the whole chain in reverse with hand-derived
vector-Jacobian products; gradients accumulate into the model's ParamStore.
The graph is fixed, so no general tape is needed: the forward context saves
exactly the intermediates the reverse pass consumes.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import geometry
from .encoding import HashGrid, HashGridConfig, gamma1_config, gamma2_config
from .nn import MLP, ParamStore

MAX_OFFSET = 0.2  # radians; keeps the linearized offset rotation valid

OFFSET_VARIANTS = ("rotation", "depth", "multiplicative", "none")


@dataclass
class AblationFlags:
    zero_ray_offset: bool = False
    zero_view_color: bool = False


@dataclass
class RayBatch:
    """Training rays.  cam_dir is the intrinsics-corrected direction in the
    camera frame (pre gyro/pose); origin/dir hold the world-space rays at
    the pose current when the batch was built, for inspection and for
    consumers that do not differentiate through the pose."""

    cam_dir: np.ndarray    # (B, 3)
    image_xy: np.ndarray   # (B, 2) in [0,1]^2
    frame: np.ndarray      # (B,) fractional frame index
    target: np.ndarray     # (B, 3) linear RGB
    origin: np.ndarray = None
    dir: np.ndarray = None

    def __len__(self):
        return len(self.cam_dir)


@dataclass
class ModelConfig:
    n_frames: int
    offset_variant: str = "rotation"
    gamma2: HashGridConfig = field(default_factory=gamma2_config)
    gamma1_point: HashGridConfig = field(
        default_factory=lambda: gamma1_config(dims=3))
    gamma1_image: HashGridConfig = field(
        default_factory=lambda: gamma1_config(dims=2, table_size_log2=14))
    hidden_dim: int = 128
    num_layers: int = 5
    feature_dim: int = 32
    max_offset: float = MAX_OFFSET
    eta_r: float = geometry.ETA_R_DEFAULT

    def __post_init__(self):
        if self.offset_variant not in OFFSET_VARIANTS:
            raise ValueError(f"unknown offset variant {self.offset_variant!r}")
        if self.n_frames < 1:
            raise ValueError("need at least one frame")

    @property
    def offset_dim(self):
        return 1 if self.offset_variant == "depth" else 3

    @classmethod
    def full_scale(cls, n_frames, offset_variant="rotation"):
        """Full-size grids; the serialized model lands near 80 MB."""
        return cls(n_frames=n_frames, offset_variant=offset_variant)

    @classmethod
    def desk_scale(cls, n_frames, offset_variant="rotation"):
        """Shrunk grids and networks sized for CPU-minutes training on
        small synthetic captures."""
        return cls(
            n_frames=n_frames,
            offset_variant=offset_variant,
            gamma2=HashGridConfig(dims=3, levels=10, base_res=4, growth=1.61,
                                  table_size_log2=16),
            gamma1_point=gamma1_config(dims=3, table_size_log2=14),
            gamma1_image=gamma1_config(dims=2, table_size_log2=12),
            hidden_dim=64,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("gamma2", "gamma1_point", "gamma1_image"):
            if isinstance(d.get(key), dict):
                d[key] = HashGridConfig(**d[key])
        return cls(**d)


def _mlp_sizes(in_dim, hidden, layers, out_dim):
    # `layers` counts affine layers; hidden activations sit between them
    return [in_dim] + [hidden] * (layers - 1) + [out_dim]


def _orthonormalize_rows(m):
    """Nearest-ish rotation by Gram-Schmidt on rows; good enough for the
    tiny interpolation residual between adjacent gyro samples."""
    r0 = m[..., 0, :]
    r0 = r0 / np.linalg.norm(r0, axis=-1, keepdims=True)
    r1 = m[..., 1, :]
    r1 = r1 - (r1 * r0).sum(-1, keepdims=True) * r0
    r1 = r1 / np.linalg.norm(r1, axis=-1, keepdims=True)
    r2 = np.cross(r0, r1)
    return np.stack([r0, r1, r2], axis=-2)


def _dot(a, b):
    return (a * b).sum(axis=-1)


def _normalize_vjp(upstream, unit, norm):
    # y = x / |x|  ->  dx = (g - y (y.g)) / |x|
    return (upstream - unit * _dot(unit, upstream)[..., None]) / norm[..., None]


class LightSphereModel:
    """Trainable artifact: pose track, hash grids, four networks."""

    def __init__(self, cfg, gyro, intrinsics, distortion=None, rng=None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        gyro = np.asarray(gyro, dtype=np.float64)
        if gyro.shape != (cfg.n_frames, 3, 3):
            raise ValueError(f"gyro shape {gyro.shape}, expected "
                             f"({cfg.n_frames}, 3, 3)")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.gyro = gyro
        self.intrinsics = np.asarray(intrinsics, dtype=np.float64)  # (N,4) or (4,)
        if self.intrinsics.ndim == 1:
            self.intrinsics = np.broadcast_to(
                self.intrinsics, (cfg.n_frames, 4)).copy()
        self.distortion = (np.zeros((cfg.n_frames, 5)) if distortion is None
                           else np.asarray(distortion, dtype=np.float64))
        if self.distortion.ndim == 1:
            self.distortion = np.broadcast_to(
                self.distortion, (cfg.n_frames, 5)).copy()

        store = ParamStore()
        self.gamma2 = HashGrid.create(cfg.gamma2, rng, dtype=self.dtype)
        self.gamma1_point = HashGrid.create(cfg.gamma1_point, rng,
                                            dtype=self.dtype)
        self.gamma1_image = HashGrid.create(cfg.gamma1_image, rng,
                                            dtype=self.dtype)
        store.add("gamma2", self.gamma2.table)
        store.add("gamma1_point", self.gamma1_point.table)
        store.add("gamma1_image", self.gamma1_image.table)

        g1p_dim = cfg.gamma1_point.out_dim
        g1i_dim = cfg.gamma1_image.out_dim
        self.h_R = MLP(store, "h_R",
                       _mlp_sizes(g1p_dim + g1i_dim, cfg.hidden_dim,
                                  cfg.num_layers, cfg.offset_dim),
                       rng, head="tanh", head_scale=cfg.max_offset,
                       zero_final=True, dtype=self.dtype)
        self.h_P = MLP(store, "h_P",
                       _mlp_sizes(cfg.gamma2.out_dim, cfg.hidden_dim,
                                  cfg.num_layers, cfg.feature_dim),
                       rng, dtype=self.dtype)
        self.h_D = MLP(store, "h_D",
                       _mlp_sizes(g1i_dim, cfg.hidden_dim, cfg.num_layers,
                                  cfg.feature_dim),
                       rng, zero_final=True, dtype=self.dtype)
        self.h_C = MLP(store, "h_C", [cfg.feature_dim, 3], rng,
                       dtype=self.dtype)
        store.add("pose_r", np.zeros((cfg.n_frames, 3), dtype=self.dtype))
        store.add("pose_t", np.zeros((cfg.n_frames, 3), dtype=self.dtype))
        self.store = store
        self.active_g1 = None  # level masks; None = all levels live
        self.active_g2 = None

    # -- pose track ---------------------------------------------------------

    def frame_rotation(self, idx):
        """Refined world-from-camera rotation of an integer frame."""
        r = self.cfg.eta_r * np.asarray(self.store.values["pose_r"][idx],
                                        dtype=np.float64)
        return geometry.small_angle_rot(r) @ self.gyro[idx]

    def frame_origin(self, idx):
        return np.asarray(self.store.values["pose_t"][idx], dtype=np.float64)

    def clamp_poses(self, max_norm=geometry.ORIGIN_NORM_MAX):
        t = self.store.values["pose_t"]
        norms = np.linalg.norm(t, axis=-1)
        over = norms > max_norm
        if over.any():
            t[over] *= (max_norm / norms[over])[:, None]

    def _pose_at(self, frame):
        """Per-ray pose gather with linear blending at fractional frames.
        Returns everything the backward scatter needs."""
        n = np.asarray(frame, dtype=np.float64)
        i0 = np.clip(np.floor(n).astype(np.int64), 0, self.cfg.n_frames - 1)
        i1 = np.minimum(i0 + 1, self.cfg.n_frames - 1)
        w = (n - i0).astype(self.dtype)
        w3 = w[:, None]
        pr = self.store.values["pose_r"]
        pt = self.store.values["pose_t"]
        r_off = (1 - w3) * pr[i0] + w3 * pr[i1]
        t_off = (1 - w3) * pt[i0] + w3 * pt[i1]
        if w.any():
            G = _orthonormalize_rows(
                (1 - w)[:, None, None] * self.gyro[i0]
                + w[:, None, None] * self.gyro[i1])
        else:
            G = self.gyro[i0]
        return G.astype(self.dtype), r_off, t_off, i0, i1, w

    def _scatter_pose_grad(self, name, per_ray, i0, i1, w):
        out = np.zeros((self.cfg.n_frames, 3), dtype=np.float64)
        for c in range(3):
            out[:, c] += np.bincount(
                i0, weights=(1 - w) * per_ray[:, c],
                minlength=self.cfg.n_frames)
            out[:, c] += np.bincount(
                i1, weights=w * per_ray[:, c], minlength=self.cfg.n_frames)
        self.store.accumulate(name, out.astype(self.dtype))

    # -- forward ------------------------------------------------------------

    def forward(self, batch, flags=None, eta_p=0.0, rng=None, want_ctx=False):
        """Predicted linear RGB for a training batch.  With want_ctx, also
        returns the saved-intermediate context consumed by backward();
        ctx["valid"] marks rays that survived the geometric guards and
        ctx["dropped"] counts those that did not."""
        flags = flags or AblationFlags()
        dt = self.dtype
        G, r_off, t_off, i0, i1, w = self._pose_at(batch.frame)
        d0 = np.asarray(batch.cam_dir, dtype=dt)
        g = np.einsum("bij,bj->bi", G, d0)
        eta_r = dt.type(self.cfg.eta_r)
        D = g + eta_r * np.cross(r_off, g)
        O = t_off
        if eta_p > 0:
            if rng is None:
                raise ValueError("origin perturbation needs an rng")
            O = O + (eta_p * rng.standard_normal(O.shape)).astype(dt)

        ctx = {"pose": (g, r_off, i0, i1, w), "flags": flags}
        color, tail = self._sphere_pipeline(O, D, batch.image_xy, flags,
                                            want_ctx=True)
        ctx.update(tail)
        if not want_ctx:
            return color
        return color, ctx

    def _sphere_pipeline(self, O, D, image_xy, flags, want_ctx=False,
                         image_feats=None):
        """Everything downstream of a world-space ray: first intersection,
        offset variant, second intersection, color."""
        dt = self.dtype

        # inference skips the saved backward state entirely
        def enc(grid, pts, lv):
            if want_ctx:
                return grid.encode(pts, active_levels=lv, want_ctx=True)
            return grid.encode(pts, active_levels=lv), None

        def fwd(net, x):
            if want_ctx:
                return net.forward(x, want_ctx=True)
            return net.forward(x), None

        O = np.ascontiguousarray(O, dtype=dt)
        D = np.ascontiguousarray(D, dtype=dt)
        X = np.ascontiguousarray(image_xy, dtype=dt)
        nO2 = _dot(O, O)
        normD = np.linalg.norm(D, axis=-1)
        valid = (nO2 < 1.0) & (normD > 1e-12)
        if not valid.all():
            # sanitized stand-ins keep the vectorized math finite; the rays
            # are excluded from the loss and their gradients are zeroed
            O = np.where(valid[:, None], O, 0)
            D = np.where(valid[:, None], D, np.array([0, 0, 1], dtype=dt))
            nO2 = _dot(O, O)
            normD = np.linalg.norm(D, axis=-1)
        Dn = D / normD[:, None]
        u = _dot(O, Dn)
        q = nO2 - 1
        s = np.sqrt(u * u - q)
        t = s - u
        P = O + t[:, None] * Dn
        normP = np.linalg.norm(P, axis=-1)
        Pn = P / normP[:, None]

        variant = self.cfg.offset_variant
        run_offset = variant != "none" and not flags.zero_ray_offset
        need_e1x = run_offset or not flags.zero_view_color

        e1x = ctx_e1x = None
        if need_e1x:
            if image_feats is not None and not want_ctx:
                e1x = image_feats
            else:
                e1x, ctx_e1x = enc(self.gamma1_image, X, self.active_g1)

        off = ctx_hr = ctx_e1p = None
        skipped = True
        D2 = Dn
        normD2 = None
        u2, s2, t2 = u, s, t
        P2, normP2, Pstar = P, normP, Pn
        if run_offset:
            e1p, ctx_e1p = enc(self.gamma1_point, (Pn + 1) * dt.type(0.5),
                               self.active_g1)
            off, ctx_hr = fwd(self.h_R,
                              np.concatenate([e1p, e1x], axis=-1))
            if off.any():
                skipped = False
                if variant == "rotation":
                    D2 = Dn + np.cross(off, Dn)
                elif variant == "multiplicative":
                    D2 = (1 + off) * Dn
                if variant in ("rotation", "multiplicative"):
                    normD2 = np.linalg.norm(D2, axis=-1)
                    D2n = D2 / normD2[:, None]
                    u2 = _dot(O, D2n)
                    s2 = np.sqrt(u2 * u2 - q)
                    t2 = s2 - u2
                    P2 = O + t2[:, None] * D2n
                else:  # depth: same ray, shifted shell radius
                    rho = 1 + off[:, 0]
                    q2 = nO2 - rho * rho
                    s2 = np.sqrt(np.maximum(u * u - q2, 0))
                    t2 = s2 - u
                    P2 = O + t2[:, None] * Dn
                    D2n = Dn
                normP2 = np.linalg.norm(P2, axis=-1)
                Pstar = P2 / normP2[:, None]
        if skipped:
            D2n = Dn

        e2, ctx_e2 = enc(self.gamma2, (Pstar + 1) * dt.type(0.5),
                         self.active_g2)
        fP, ctx_hp = fwd(self.h_P, e2)
        ctx_hd = None
        feat = fP
        if not flags.zero_view_color:
            fD, ctx_hd = fwd(self.h_D, e1x)
            feat = fP + fD
        color, ctx_hc = fwd(self.h_C, feat)
        if not valid.all():
            color = np.where(valid[:, None], color, 0)

        if not want_ctx:
            return color, valid
        ctx = {
            "valid": valid, "dropped": int((~valid).sum()),
            "O": O, "Dn": Dn, "normD": normD, "u": u, "s": s, "t": t,
            "normP": normP, "Pn": Pn,
            "run_offset": run_offset, "skipped": skipped, "off": off,
            "normD2": normD2, "D2n": D2n,
            "u2": u2, "s2": s2, "t2": t2,
            "normP2": normP2, "Pstar": Pstar,
            "e1x_ctx": ctx_e1x, "e1p_ctx": ctx_e1p, "e2_ctx": ctx_e2,
            "hr_ctx": ctx_hr, "hp_ctx": ctx_hp, "hd_ctx": ctx_hd,
            "hc_ctx": ctx_hc,
        }
        return color, ctx

    # -- backward -----------------------------------------------------------

    def backward(self, ctx, color_grad):
        """Reverse pass; accumulates into self.store.  Returns per-ray
        gradients wrt (origin, world dir) for completeness."""
        if "hc_ctx" not in ctx:
            raise RuntimeError("backward before forward: context is empty")
        dt = self.dtype
        flags = ctx["flags"] if "flags" in ctx else AblationFlags()
        valid = ctx["valid"]
        dc = np.asarray(color_grad, dtype=dt)
        if not valid.all():
            dc = dc * valid[:, None]

        dfeat = self.h_C.backward(ctx["hc_ctx"], dc)
        de1x = None
        if ctx["hd_ctx"] is not None:
            de1x = self.h_D.backward(ctx["hd_ctx"], dfeat)
        de2 = self.h_P.backward(ctx["hp_ctx"], dfeat)
        tg2, pg2 = self.gamma2.encode_backward(ctx["e2_ctx"], de2)
        self.store.accumulate("gamma2", tg2)
        dPstar = dt.type(0.5) * pg2

        O, Dn = ctx["O"], ctx["Dn"]
        u, s = ctx["u"], ctx["s"]
        dO = np.zeros_like(O)
        dDn = np.zeros_like(Dn)
        dPn = np.zeros_like(Dn)
        d_nO2 = np.zeros_like(u)
        dq = np.zeros_like(u)
        du = np.zeros_like(u)

        variant = self.cfg.offset_variant
        if not ctx["run_offset"]:
            dPn += dPstar
        else:
            # second intersection; when the offset was exactly zero the
            # saved values alias the first intersection and these formulas
            # reduce to the analytic zero-offset limit
            skipped = ctx["skipped"]
            normP2 = ctx["normP2"]
            Pstar, D2n = ctx["Pstar"], ctx["D2n"]
            u2, s2, t2 = ctx["u2"], ctx["s2"], ctx["t2"]
            off = ctx["off"]
            dP2 = _normalize_vjp(dPstar, Pstar, normP2)
            dO += dP2
            dt2 = _dot(D2n, dP2)
            dD2n = t2[:, None] * dP2
            ds2 = dt2
            if variant == "depth":
                # t2 = s2 - u with the shell radius folded into s2
                s2g = np.maximum(s2, 1e-12)
                du += -dt2 + ds2 * u / s2g
                d_nO2 += -ds2 / (2 * s2g)
                rho = 1 + off[:, 0]
                doff = (ds2 * rho / s2g)[:, None]
                dDn += dD2n
            else:
                du2 = -dt2 + ds2 * u2 / s2
                dq += -ds2 / (2 * s2)
                dO += du2[:, None] * D2n
                dD2n += du2[:, None] * O
                if skipped:
                    # zero-offset limit: |D2| = 1 exactly
                    dD2 = dD2n - D2n * _dot(D2n, dD2n)[:, None]
                else:
                    dD2 = _normalize_vjp(dD2n, D2n, ctx["normD2"])
                if variant == "rotation":
                    doff = np.cross(Dn, dD2)
                    dDn += dD2 + np.cross(dD2, off)
                else:  # multiplicative
                    doff = dD2 * Dn
                    dDn += dD2 * (1 + off)
            dhin = self.h_R.backward(ctx["hr_ctx"], doff)
            split = self.cfg.gamma1_point.out_dim
            de1p = dhin[:, :split]
            de1x_r = dhin[:, split:]
            de1x = de1x_r if de1x is None else de1x + de1x_r
            tg1p, pg1p = self.gamma1_point.encode_backward(
                ctx["e1p_ctx"], de1p)
            self.store.accumulate("gamma1_point", tg1p)
            dPn += dt.type(0.5) * pg1p

        if de1x is not None:
            tg1i, _ = self.gamma1_image.encode_backward(ctx["e1x_ctx"], de1x)
            self.store.accumulate("gamma1_image", tg1i)

        # first intersection
        dP = _normalize_vjp(dPn, ctx["Pn"], ctx["normP"])
        dO += dP
        dt1 = _dot(Dn, dP)
        dDn += ctx["t"][:, None] * dP
        ds = dt1
        du += -dt1 + ds * u / s
        dq += -ds / (2 * s)
        dO += du[:, None] * Dn
        dDn += du[:, None] * O
        d_nO2 += dq  # q = |O|^2 - 1
        dO += 2 * d_nO2[:, None] * O

        dD = _normalize_vjp(dDn, Dn, ctx["normD"])
        if "pose" in ctx:
            g, r_off, i0, i1, w = ctx["pose"]
            eta_r = dt.type(self.cfg.eta_r)
            dr = eta_r * np.cross(g, dD)
            self._scatter_pose_grad("pose_r", dr.astype(np.float64), i0, i1,
                                    w.astype(np.float64))
            self._scatter_pose_grad("pose_t", dO.astype(np.float64), i0, i1,
                                    w.astype(np.float64))
        return dO, dD

    # -- inference ----------------------------------------------------------

    def color_for_rays(self, origin, dirs, image_xy, flags=None,
                       image_feats=None):
        """Colors for explicit world rays (render path, no pose, no tape).
        Returns (colors, valid).  image_feats short-circuits the image-plane
        encoding with precomputed encode_image_xy output; the caller owns
        keeping it in sync with image_xy."""
        flags = flags or AblationFlags()
        return self._sphere_pipeline(origin, dirs, image_xy, flags,
                                     want_ctx=False, image_feats=image_feats)

    def encode_image_xy(self, image_xy):
        """Image-plane features at the current level mask.  Pose-independent,
        so rendering many views at one resolution can reuse them."""
        X = np.ascontiguousarray(image_xy, dtype=self.dtype)
        return self.gamma1_image.encode(X, active_levels=self.active_g1)

    def rays_for_frame(self, idx, width, height, stride=1, use_pose=True):
        """World rays through every (strided) pixel center of a recorded
        frame at its current refined pose.  Returns (origin, dirs, X,
        pixel_xy)."""
        ys, xs = np.meshgrid(np.arange(0, height, stride, dtype=np.float64),
                             np.arange(0, width, stride, dtype=np.float64),
                             indexing="ij")
        px = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=-1)
        fx, fy, cx, cy = self.intrinsics[idx]
        intr = geometry.CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
        kappa = self.distortion[idx]
        if np.any(kappa):
            ideal = geometry.undistort(
                px, geometry.LensDistortion(kappa=tuple(kappa)), intr)
        else:
            ideal = px
        d0 = np.stack([(ideal[:, 0] - cx) / fx,
                       (ideal[:, 1] - cy) / fy,
                       np.ones(len(ideal))], axis=-1)
        R = self.frame_rotation(idx) if use_pose else self.gyro[idx]
        dirs = d0 @ R.T
        origin = np.broadcast_to(
            self.frame_origin(idx) if use_pose else np.zeros(3),
            dirs.shape).copy()
        X = px / np.array([width, height], dtype=np.float64)
        return origin, dirs, X, px


# module-level entry points matching the rest of the package's style


def eval_ray_offset(p_hat, image_xy, model, flags=None):
    """Offset-head output for explicit surface points and image coords."""
    flags = flags or AblationFlags()
    p_hat = np.atleast_2d(np.asarray(p_hat, dtype=model.dtype))
    X = np.atleast_2d(np.asarray(image_xy, dtype=model.dtype))
    if flags.zero_ray_offset or model.cfg.offset_variant == "none":
        return np.zeros((len(p_hat), model.cfg.offset_dim), dtype=model.dtype)
    e1p = model.gamma1_point.encode((p_hat + 1) * model.dtype.type(0.5),
                                    active_levels=model.active_g1)
    e1x = model.gamma1_image.encode(X, active_levels=model.active_g1)
    return model.h_R.forward(np.concatenate([e1p, e1x], axis=-1))


def eval_color(p_star, image_xy, model, flags=None):
    """Color-head output for explicit (already offset) surface points."""
    flags = flags or AblationFlags()
    p_star = np.atleast_2d(np.asarray(p_star, dtype=model.dtype))
    X = np.atleast_2d(np.asarray(image_xy, dtype=model.dtype))
    e2 = model.gamma2.encode((p_star + 1) * model.dtype.type(0.5),
                             active_levels=model.active_g2)
    feat = model.h_P.forward(e2)
    if not flags.zero_view_color:
        e1x = model.gamma1_image.encode(X, active_levels=model.active_g1)
        feat = feat + model.h_D.forward(e1x)
    return model.h_C.forward(feat)


def forward(batch, model, flags=None, eta_p=0.0, rng=None):
    return model.forward(batch, flags=flags, eta_p=eta_p, rng=rng)
