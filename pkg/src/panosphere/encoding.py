"""Multi-resolution hash-grid positional encodings.

Two grids encode the model inputs: gamma1 (low resolution, for the image
coordinate X and the first sphere point P-hat) and gamma2 (high resolution,
for the re-intersected point).  Each level interpolates the 2^dims corner
features of the cell containing the query; levels whose dense corner lattice
fits in the backing table are indexed directly (collision-free), the rest
through an XOR-of-primes spatial hash.  A level mask supports the
coarse-to-fine schedule: masked levels output exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HASH_PRIMES = (1, 2654435761, 805459861)
TABLE_INIT_SCALE = 1e-4


@dataclass(frozen=True)
class HashGridConfig:
    dims: int
    levels: int
    base_res: int = 4
    growth: float = 1.61
    table_size_log2: int = 19
    features_per_level: int = 2

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if self.base_res < 1 or self.growth <= 1 or self.levels < 1:
            raise ValueError("need base_res >= 1, growth > 1, levels >= 1")

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    @property
    def resolutions(self) -> np.ndarray:
        """Per-level grid resolution round(base_res * growth^level)."""
        ls = np.arange(self.levels)
        return np.round(self.base_res * self.growth**ls).astype(np.int64)

    @property
    def out_dim(self) -> int:
        return self.levels * self.features_per_level


def gamma1_config(dims: int, table_size_log2: int = 18) -> HashGridConfig:
    """8 levels spanning resolutions 4 to 112 (growth fixed by the endpoints)."""
    return HashGridConfig(dims=dims, levels=8, base_res=4,
                          growth=(112 / 4) ** (1 / 7),
                          table_size_log2=table_size_log2)


def gamma2_config(dims: int = 3, table_size_log2: int = 19) -> HashGridConfig:
    """15 levels spanning resolutions 4 to 3145 by powers of 1.61."""
    return HashGridConfig(dims=dims, levels=15, base_res=4, growth=1.61,
                          table_size_log2=table_size_log2)


def hash_index(cell: np.ndarray, level: int, cfg: HashGridConfig) -> np.ndarray:
    """Slot index for integer cell coords: dense when the level fits, else hashed."""
    cell = np.asarray(cell)
    res = int(cfg.resolutions[level])
    if res**cfg.dims <= cfg.table_size:
        idx = cell[..., 0]
        for d in range(1, cfg.dims):
            idx = idx * res + cell[..., d]
        return idx
    h = cell[..., 0].astype(np.uint32) * np.uint32(HASH_PRIMES[0])
    for d in range(1, cfg.dims):
        h = h ^ cell[..., d].astype(np.uint32) * np.uint32(HASH_PRIMES[d])
    return (h & np.uint32(cfg.table_size - 1)).astype(np.int64)


def _corner_offsets(dims: int) -> np.ndarray:
    # (2^dims, dims) binary corner pattern: 0 -> 00..0, last -> 11..1
    n = 1 << dims
    return ((np.arange(n)[:, None] >> np.arange(dims - 1, -1, -1)) & 1).astype(np.int64)


class HashGrid:
    """A config plus its trainable table of shape (levels, table_size, F)."""

    def __init__(self, cfg: HashGridConfig, table: np.ndarray):
        if table.shape != (cfg.levels, cfg.table_size, cfg.features_per_level):
            raise ValueError("table shape does not match config")
        self.cfg = cfg
        self.table = table
        self._corners = _corner_offsets(cfg.dims)

    @classmethod
    def create(cls, cfg: HashGridConfig, rng: np.random.Generator,
               dtype=np.float32) -> "HashGrid":
        table = rng.uniform(-TABLE_INIT_SCALE, TABLE_INIT_SCALE,
                            size=(cfg.levels, cfg.table_size,
                                  cfg.features_per_level)).astype(dtype)
        return cls(cfg, table)

    def _corner_slots(self, i0: np.ndarray, res: int) -> np.ndarray:
        """Slots of the 2^dims corners of the cells at i0, shape (B, 2^dims).

        Same dense/hashed split as hash_index, but assembled from
        per-dimension partial indices so no (B, 2^dims, dims) coordinate
        block is ever materialized.
        """
        cfg = self.cfg
        corners = self._corners
        if res**cfg.dims <= cfg.table_size:
            base = i0[:, 0]
            off = corners[:, 0]
            for d in range(1, cfg.dims):
                base = base * res + i0[:, d]
                off = off * res + corners[:, d]
            return base[:, None] + off[None, :]
        h = None
        for d in range(cfg.dims):
            prime = np.uint32(HASH_PRIMES[d])
            at = i0[:, d].astype(np.uint32) * prime
            pair = np.stack([at, at + prime], axis=1)  # hashes of cell, cell+1
            hd = pair[:, corners[:, d]]
            h = hd if h is None else h ^ hd
        return (h & np.uint32(cfg.table_size - 1)).astype(np.int64)

    def encode(self, p: np.ndarray, active_levels: int | None = None,
               want_ctx: bool = False):
        """Features (B, levels*F) for points p (B, dims) in [0,1]^dims.

        Out-of-domain points are clamped to the boundary.  Levels at or above
        active_levels output exact zeros.  With want_ctx, also returns the
        saved interpolation state consumed by encode_backward.
        """
        cfg = self.cfg
        active = cfg.levels if active_levels is None else min(active_levels, cfg.levels)
        p = np.asarray(p)
        if p.ndim == 1:
            p = p[None]
        dtype = self.table.dtype
        in_domain = (p >= 0.0) & (p <= 1.0)
        pc = np.clip(p, 0.0, 1.0).astype(dtype)
        B = pc.shape[0]
        F = cfg.features_per_level
        out = np.zeros((B, cfg.out_dim), dtype=dtype)
        saved = []
        corners = self._corners
        res_all = cfg.resolutions
        for lvl in range(active):
            res = int(res_all[lvl])
            x = pc * np.asarray(res - 1, dtype=dtype)
            # x >= 0 after the clamp, so integer truncation is floor
            i0 = np.minimum(x.astype(np.int64), res - 2)
            i0 = np.maximum(i0, 0)
            frac = x - i0.astype(dtype)
            rem = 1.0 - frac
            # corner weight = product over dims of (frac if the corner steps
            # along d else 1 - frac); gathering per-dimension (rem, frac)
            # pairs beats forming the full factor cube
            weights = None
            for d in range(cfg.dims):
                pair = np.stack([rem[:, d], frac[:, d]], axis=1)
                wd = pair[:, corners[:, d]]
                weights = wd if weights is None else weights * wd
            slots = self._corner_slots(i0, res)    # (B, 2^dims)
            feats = self.table[lvl][slots]         # (B, 2^dims, F)
            out[:, lvl * F:(lvl + 1) * F] = np.einsum("bc,bcf->bf", weights, feats)
            if want_ctx:
                factors = np.where(corners[None] == 1,
                                   frac[:, None, :], rem[:, None, :])
                saved.append((slots, weights, factors, feats))
        if want_ctx:
            ctx = {"levels": active, "slots_weights": saved,
                   "in_domain": in_domain, "B": B}
            return out, ctx
        return out

    def encode_backward(self, ctx: dict, upstream: np.ndarray):
        """Gradients of a scalar loss wrt the table and the input points.

        upstream is (B, levels*F); masked levels contribute nothing. Returns
        (table_grad, point_grad) with point_grad zero for clamped coords.
        """
        cfg = self.cfg
        F = cfg.features_per_level
        dtype = self.table.dtype
        table_grad = np.zeros_like(self.table)
        B = ctx["B"]
        point_grad = np.zeros((B, cfg.dims), dtype=dtype)
        for lvl in range(ctx["levels"]):
            slots, weights, factors, feats = ctx["slots_weights"][lvl]
            up = upstream[:, lvl * F:(lvl + 1) * F]          # (B, F)
            contrib = weights[..., None] * up[:, None, :]    # (B, 2^dims, F)
            for f in range(F):
                table_grad[lvl, :, f] += np.bincount(
                    slots.ravel(), weights=contrib[..., f].ravel().astype(np.float64),
                    minlength=cfg.table_size).astype(dtype)
            # d weight / d p: per corner and dim, signed product of the other factors
            scale = np.asarray(cfg.resolutions[lvl] - 1, dtype=dtype)
            upfeat = (feats * up[:, None, :]).sum(axis=-1)   # (B, 2^dims)
            sign = np.where(self._corners[None] == 1, 1.0, -1.0).astype(dtype)
            for d in range(cfg.dims):
                others = np.ones_like(weights)
                for e in range(cfg.dims):
                    if e != d:
                        others = others * factors[..., e]
                point_grad[:, d] += scale * (upfeat * sign[..., d] * others).sum(axis=1)
        point_grad *= ctx["in_domain"]
        return table_grad, point_grad


def sphere_occupancy(res: int) -> int:
    """Exact count of res^3 cells of [-1,1]^3 touching the unit sphere surface.

    A cell intersects the surface iff its nearest corner-box distance to the
    origin is <= 1 and its farthest is >= 1.
    """
    if res < 1:
        raise ValueError("res must be >= 1")
    edges = -1.0 + 2.0 * np.arange(res + 1) / res
    lo, hi = edges[:-1], edges[1:]
    straddles = (lo < 0) & (hi > 0)
    minabs = np.where(straddles, 0.0, np.minimum(np.abs(lo), np.abs(hi)))
    maxabs = np.maximum(np.abs(lo), np.abs(hi))
    mn2, mx2 = minabs**2, maxabs**2
    min_d2 = mn2[:, None, None] + mn2[None, :, None] + mn2[None, None, :]
    max_d2 = mx2[:, None, None] + mx2[None, :, None] + mx2[None, None, :]
    return int(np.count_nonzero((min_d2 <= 1.0) & (max_d2 >= 1.0)))
