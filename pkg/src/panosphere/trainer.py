"""Two-stage fitting.

Stage 1 (the first quarter of the epochs) trains poses and the static
sphere while the ray-offset and view-color networks stay frozen at their
zero initialization; the ray-origin perturbation decays linearly to zero
and the finer grid levels unlock one by one.  Stage 2 trains everything.
No regularization terms anywhere; L1 on linear RGB is the whole loss.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .dataio.bundle import CaptureBundle
from .dataio.sampler import EpochSampler
from .model import AblationFlags, LightSphereModel, ModelConfig


@dataclass
class TrainConfig:
    epochs: int = 100
    batches_per_epoch: int = 200
    batch_size: int = 1 << 18
    stage1_fraction: float = 0.25
    eta_p0: float = 0.05          # initial origin perturbation, sphere radii
    lr: float = 1e-3
    betas: tuple = (0.9, 0.99)
    eps: float = nn.ADAM_EPS
    weight_decay: float = nn.WEIGHT_DECAY
    mask_start_levels: int = 4
    preview: bool = False
    seed: int = 0
    holdout_every: int = 0        # 0 trains on every frame
    eval_every: int = 10          # epochs between holdout PSNR probes
    model: ModelConfig = None     # None = desk scale sized to the bundle
    ablate: AblationFlags = field(default_factory=AblationFlags)
    log_path: str = None          # optional JSONL destination

    def __post_init__(self):
        if not 0 < self.stage1_fraction < 1:
            raise ValueError("stage1_fraction must be in (0, 1)")
        if self.eta_p0 < 0:
            raise ValueError("eta_p0 must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @classmethod
    def desk_scale(cls, **over):
        over.setdefault("batch_size", 1 << 14)
        over.setdefault("batches_per_epoch", 50)
        return cls(**over)


def stage1_epochs(cfg, epochs=None):
    epochs = cfg.epochs if epochs is None else epochs
    return int(cfg.stage1_fraction * epochs + 0.5)


@dataclass
class StageState:
    freeze_hr: bool
    freeze_hd: bool
    eta_p: float
    active_g1: int
    active_g2: int


def stage_schedule(epoch, cfg, model_cfg, epochs=None):
    """Per-epoch knobs: freezes, perturbation magnitude, active grid levels.
    The level ramp starts at the coarsest 4 and reaches every level exactly
    when stage 1 ends; eta_p reaches exactly 0 at the same boundary."""
    epochs = cfg.epochs if epochs is None else epochs
    if not 0 <= epoch < epochs:
        raise ValueError("epoch outside the training range")
    s1 = stage1_epochs(cfg, epochs)
    stage1 = epoch < s1

    def ramp(levels):
        if not stage1:
            return levels
        lo = min(cfg.mask_start_levels, levels)
        return min(levels, lo + (levels - lo) * (epoch + 1) // s1)

    return StageState(
        freeze_hr=stage1,
        freeze_hd=stage1,
        eta_p=cfg.eta_p0 * (1 - epoch / s1) if stage1 else 0.0,
        active_g1=ramp(model_cfg.gamma1_point.levels),
        active_g2=ramp(model_cfg.gamma2.levels))


def l1_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    return float(np.abs(pred - np.asarray(target, dtype=np.float64)).mean())


def holdout_frames(n_frames, every):
    """Every `every`-th frame, counted from the start, reserved for eval."""
    if not every:
        return []
    return [i for i in range(n_frames) if i % every == every - 1]


def quarter_bundle(bundle, factor=4):
    """Preview input: box-filtered pixels and intrinsics scaled to match."""
    frames = []
    hq = bundle.sensor_h // factor
    wq = bundle.sensor_w // factor
    for f in bundle.frames:
        px = f.pixels[:hq * factor, :wq * factor].astype(np.float64)
        px = px.reshape(hq, factor, wq, factor, 3).mean(axis=(1, 3))
        frames.append(replace(f, pixels=px.astype(np.float32),
                              intrinsics=np.asarray(f.intrinsics) / factor))
    return CaptureBundle(frames=frames, sensor_w=wq, sensor_h=hq,
                         frame_dt_s=bundle.frame_dt_s)


def psnr(pred, target):
    """10 log10(1/MSE) over linear RGB, both sides clamped to [0,1]."""
    a = np.clip(np.asarray(pred, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(target, dtype=np.float64), 0.0, 1.0)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def evaluate(model, bundle, frames=None, chunk=1 << 15):
    """Render the listed frames at their recorded poses (no perturbation,
    nothing masked) and score against the bundle pixels.  Returns overall
    PSNR and the per-frame L1 list.  Anything exposing color_for_rays can
    stand in for the model; scenes without pose state are rendered from
    the recorded gyro rotations."""
    if frames is None:
        frames = list(range(bundle.n_frames))
    sq = 0.0
    n = 0
    per_frame = []
    for i in frames:
        if hasattr(model, "rays_for_frame"):
            origin, dirs, X, _ = model.rays_for_frame(
                i, bundle.sensor_w, bundle.sensor_h)
        else:
            origin, dirs, X = _recorded_rays(bundle, i)
        colors = np.empty((len(dirs), 3))
        for lo in range(0, len(dirs), chunk):
            sl = slice(lo, lo + chunk)
            c, _ = model.color_for_rays(origin[sl], dirs[sl], X[sl])
            colors[sl] = c
        pred = np.clip(colors, 0.0, 1.0)
        ref = np.clip(bundle.frames[i].pixels.reshape(-1, 3).astype(
            np.float64), 0.0, 1.0)
        per_frame.append(float(np.abs(pred - ref).mean()))
        sq += float(((pred - ref) ** 2).sum())
        n += pred.size
    mse = sq / max(n, 1)
    overall = float("inf") if mse == 0 else 10.0 * math.log10(1.0 / mse)
    return overall, per_frame


def _recorded_rays(bundle, i):
    from . import geometry
    f = bundle.frames[i]
    w, h = bundle.sensor_w, bundle.sensor_h
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64) + 0.5,
                         np.arange(w, dtype=np.float64) + 0.5, indexing="ij")
    px = np.stack([xs.ravel(), ys.ravel()], axis=-1)
    fx, fy, cx, cy = f.intrinsics
    kappa = np.asarray(f.distortion)
    ideal = px
    if np.any(kappa):
        ideal = geometry.undistort(
            px, geometry.LensDistortion(kappa=tuple(kappa)),
            geometry.CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy))
    d0 = np.stack([(ideal[:, 0] - cx) / fx, (ideal[:, 1] - cy) / fy,
                   np.ones(len(ideal))], axis=-1)
    dirs = d0 @ np.asarray(f.gyro).T
    return np.zeros_like(dirs), dirs, px / np.array([w, h])


def _apply_freeze(model, st):
    for name in model.store.values:
        if name.startswith("h_R."):
            model.store.trainable[name] = not st.freeze_hr
        elif name.startswith("h_D."):
            model.store.trainable[name] = not st.freeze_hd


def _center_poses(model, rows):
    """Pin the pose gauge: a shared drift of every trained offset is
    invisible to the loss (the field just counter-rotates), but it strands
    untrained frames in the original gauge.  Subtracting the mean keeps
    relative refinements and nothing else."""
    for name in ("pose_t", "pose_r"):
        block = model.store.values[name]
        block[rows] -= block[rows].mean(axis=0)


def _epoch_stream(sampler, rng, n_batches):
    """Exactly n_batches batches, chaining fresh permutation passes when
    the capture holds fewer pixels than the epoch budget."""
    while True:
        for batch in sampler.epoch(rng):
            yield batch
            n_batches -= 1
            if n_batches <= 0:
                return


def _snapshot(model, adam):
    return ({k: v.copy() for k, v in model.store.values.items()},
            {k: v.copy() for k, v in adam.m.items()},
            {k: v.copy() for k, v in adam.v.items()},
            adam.t)


def _restore(model, adam, snap):
    values, m, v, t = snap
    # copy into the existing arrays: the grids and MLPs hold references
    for k in model.store.values:
        model.store.values[k][...] = values[k]
        adam.m[k][...] = m[k]
        adam.v[k][...] = v[k]
    adam.t = t


def fit(bundle, cfg):
    """Sample -> forward -> L1 -> backward -> Adam, epochs x batches times,
    with the stage schedule applied each epoch and poses clamped after
    every step.  Returns (model, log); the log is the list of step records
    also streamed to cfg.log_path when set.  A non-finite loss aborts the
    run and restores the end of the last fully finite epoch."""
    rng = np.random.default_rng(cfg.seed)
    epochs = cfg.epochs
    batch_size = cfg.batch_size
    if cfg.preview:
        # quarter the images and the batch together so an epoch keeps its
        # step count; only the epoch budget shrinks
        bundle = quarter_bundle(bundle)
        epochs = max(1, cfg.epochs // 10)
        batch_size = max(1, cfg.batch_size // 4)
    model_cfg = cfg.model
    if model_cfg is None:
        model_cfg = ModelConfig.desk_scale(n_frames=bundle.n_frames)
    if model_cfg.n_frames != bundle.n_frames:
        raise ValueError("model config frame count does not match the bundle")
    held = holdout_frames(bundle.n_frames, cfg.holdout_every)
    sampler = EpochSampler(bundle, batch_size,
                           batches_per_epoch=cfg.batches_per_epoch,
                           holdout_frames=held)
    trained_rows = np.setdiff1d(np.arange(bundle.n_frames), held)
    per_epoch = sampler.batches_in_epoch()
    if cfg.preview and cfg.batches_per_epoch:
        per_epoch = cfg.batches_per_epoch
    model = LightSphereModel(model_cfg, gyro=bundle.gyro_stack(),
                             intrinsics=bundle.intrinsics_stack(),
                             distortion=bundle.distortion_stack(), rng=rng)
    adam = nn.AdamState(model.store, lr=cfg.lr, beta1=cfg.betas[0],
                        beta2=cfg.betas[1], eps=cfg.eps,
                        weight_decay=cfg.weight_decay)

    log = []
    sink = open(cfg.log_path, "w") if cfg.log_path else None

    def emit(rec):
        log.append(rec)
        if sink:
            sink.write(json.dumps(rec) + "\n")

    snap = _snapshot(model, adam)
    step = 0
    try:
        for epoch in range(epochs):
            st = stage_schedule(epoch, cfg, model_cfg, epochs)
            _apply_freeze(model, st)
            model.active_g1 = st.active_g1
            model.active_g2 = st.active_g2
            losses = []
            for batch in _epoch_stream(sampler, rng, per_epoch):
                pred, ctx = model.forward(batch, flags=cfg.ablate,
                                          eta_p=st.eta_p, rng=rng,
                                          want_ctx=True)
                valid = ctx["valid"]
                diff = pred.astype(np.float64) - batch.target
                if not valid.all():
                    diff *= valid[:, None]
                denom = 3 * max(int(valid.sum()), 1)
                loss = float(np.abs(diff).sum() / denom)
                if not math.isfinite(loss):
                    emit({"epoch": epoch, "step": step, "loss": None,
                          "eta_p": st.eta_p,
                          "active_levels": [st.active_g1, st.active_g2]})
                    _restore(model, adam, snap)
                    return model, log
                model.store.zero_grad()
                model.backward(ctx, np.sign(diff) / denom)
                nn.adam_step(adam, model.store)
                _center_poses(model, trained_rows)
                model.clamp_poses()
                emit({"epoch": epoch, "step": step, "loss": loss,
                      "eta_p": st.eta_p,
                      "active_levels": [st.active_g1, st.active_g2]})
                losses.append(loss)
                step += 1
            snap = _snapshot(model, adam)
            last = (epoch == epochs - 1)
            if held and cfg.eval_every and (last or (epoch + 1) %
                                            cfg.eval_every == 0):
                score, _ = evaluate(model, bundle, frames=held)
                emit({"epoch": epoch, "step": step - 1,
                      "loss": float(np.mean(losses)) if losses else None,
                      "eta_p": st.eta_p,
                      "active_levels": [st.active_g1, st.active_g2],
                      "psnr": score})
            if sink:
                sink.flush()
    finally:
        if sink:
            sink.close()
    return model, log
