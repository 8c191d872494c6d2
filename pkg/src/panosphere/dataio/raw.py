"""Mosaic-to-linear-RGB processing for phone RAW captures.

Order matters and is fixed: rearrange the color filter array to BGGR,
normalize by black/white levels, apply per-channel color gains, divide out
the lens shading field, then fill the mosaic gaps by bilinear interpolation.
Color correction and tonemapping are display operations and live in
render_color(); training always consumes the linear output.
"""

import numpy as np
from scipy.ndimage import convolve, zoom

CFA_PATTERNS = ("BGGR", "RGGB", "GRBG", "GBRG")

# row/column roll that turns each pattern into BGGR
_CFA_SHIFT = {"BGGR": (0, 0), "RGGB": (1, 1), "GRBG": (1, 0), "GBRG": (0, 1)}

# 2x2 site layout after rearrangement: B Gb / Gr R, with gains recorded in
# [R, Gr, Gb, B] order
_BGGR_GAIN_SITE = {(0, 0): 3, (0, 1): 2, (1, 0): 1, (1, 1): 0}

_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4
_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4


class IngestionError(ValueError):
    """A capture record is missing or malformed."""


def rearrange_to_bggr(mosaic, cfa):
    if cfa not in _CFA_SHIFT:
        raise IngestionError(f"unknown CFA pattern {cfa!r}")
    di, dj = _CFA_SHIFT[cfa]
    if di == 0 and dj == 0:
        return np.asarray(mosaic)
    return np.roll(np.asarray(mosaic), (di, dj), axis=(0, 1))


def _site_masks(shape):
    h, w = shape
    ii, jj = np.meshgrid(np.arange(h) % 2, np.arange(w) % 2, indexing="ij")
    return {
        "R": (ii == 1) & (jj == 1),
        "G": ii != jj,
        "B": (ii == 0) & (jj == 0),
    }


def demosaic_bilinear(mosaic):
    """Fill CFA gaps with the classic 3x3 bilinear kernels.  Borders are
    handled by renormalizing against the in-bounds kernel mass, so any
    constant mosaic demosaics to the same constant."""
    mosaic = np.asarray(mosaic, dtype=np.float64)
    masks = _site_masks(mosaic.shape)
    out = np.empty(mosaic.shape + (3,), dtype=np.float64)
    for c, name in enumerate("RGB"):
        k = _KERNEL_G if name == "G" else _KERNEL_RB
        m = masks[name].astype(np.float64)
        numer = convolve(mosaic * m, k, mode="constant")
        denom = convolve(m, k, mode="constant")
        out[..., c] = numer / denom
    return out


def upsample_shade_map(shade, shape):
    """Low-res attenuation grid to full sensor resolution, bilinear."""
    shade = np.asarray(shade, dtype=np.float64)
    if shade.shape == shape:
        return shade
    zy = shape[0] / shade.shape[0]
    zx = shape[1] / shade.shape[1]
    up = zoom(shade, (zy, zx), order=1, grid_mode=True, mode="nearest")
    return up[:shape[0], :shape[1]]


def raw_to_linear(mosaic, *, black_level, white_level, cfa, gains,
                  shade_map=None):
    """Steps 1-5: rearrange, normalize, gain, un-shade, demosaic."""
    for name, value in (("black_level", black_level),
                        ("white_level", white_level), ("cfa", cfa),
                        ("gains", gains)):
        if value is None:
            raise IngestionError(f"missing calibration field {name!r}")
    if not white_level > black_level:
        raise IngestionError("white_level must exceed black_level")
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (4,):
        raise IngestionError("gains must hold 4 per-channel factors")

    m = rearrange_to_bggr(mosaic, cfa).astype(np.float64)
    m = (m - black_level) / (white_level - black_level)

    gain_field = np.empty_like(m)
    for (si, sj), gidx in _BGGR_GAIN_SITE.items():
        gain_field[si::2, sj::2] = gains[gidx]
    m = m * gain_field

    if shade_map is not None:
        m = m / upsample_shade_map(shade_map, m.shape)

    return demosaic_bilinear(m)


def render_color(rgb, ccm=None, tonemap=None):
    """Display transform: 3x3 color correction, then the sampled tone curve,
    then a final clamp to [0,1].  Identity inputs are skipped outright so a
    linear render of linear data is bit-exact."""
    rgb = np.asarray(rgb)
    if ccm is not None:
        ccm = np.asarray(ccm, dtype=np.float64).reshape(3, 3)
        if not np.array_equal(ccm, np.eye(3)):
            rgb = rgb @ ccm.T
    if tonemap is not None:
        curve = np.asarray(tonemap, dtype=np.float64)
        if curve.shape != (256, 2):
            raise IngestionError("tonemap must be 256 (in, out) pairs")
        if not np.array_equal(curve[:, 0], curve[:, 1]):
            rgb = np.interp(rgb, curve[:, 0], curve[:, 1])
    return np.clip(rgb, 0.0, 1.0)


def identity_tonemap():
    ramp = np.linspace(0.0, 1.0, 256)
    return np.stack([ramp, ramp], axis=1)
