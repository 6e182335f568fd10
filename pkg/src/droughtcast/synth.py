"""Deterministic synthetic PDSI fields.

The latent field follows z_t = ar_coeff * z_{t-1} + smooth(eps_t) with
i.i.d. Gaussian noise per cell smoothed by a truncated Gaussian kernel,
then maps to PDSI-like values via value_scale and a 12-month seasonal term.
Every draw comes from the counter RNG, so a (params, seed) pair fully
determines the output bytes.
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .cube import PDSI_SANITY_BOUND, PdsiCube


@dataclass(frozen=True)
class SynthParams:
    t_len: int = 600
    rows: int = 16
    cols: int = 16
    ar_coeff: float = 0.95
    spatial_sigma: float = 1.5
    seasonal_amp: float = 0.5
    noise_sd: float = 1.0
    value_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.t_len < 2:
            raise ValueError("t_len must be >= 2")
        if min(self.rows, self.cols) < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not abs(self.ar_coeff) < 1.0:
            raise ValueError("|ar_coeff| must be < 1")
        if self.spatial_sigma < 0.0:
            raise ValueError("spatial_sigma must be >= 0")
        if self.noise_sd < 0.0:
            raise ValueError("noise_sd must be >= 0")
        if self.value_scale < 0.0:
            raise ValueError("value_scale must be >= 0")


def gaussian_kernel(sigma):
    """1-D Gaussian taps truncated at 3*sigma, normalized to unit sum."""
    if sigma <= 0.0:
        return np.ones(1, dtype=np.float64)
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _smooth_axis(field, kernel, axis):
    # Zero-padded correlation with per-position renormalization, so edge
    # cells keep unit kernel mass.
    k = kernel.size
    if k == 1:
        return field
    pad = k // 2
    padded = np.zeros(
        (field.shape[0] + (2 * pad if axis == 0 else 0), field.shape[1] + (2 * pad if axis == 1 else 0)),
        dtype=np.float64,
    )
    sl = [slice(None), slice(None)]
    sl[axis] = slice(pad, pad + field.shape[axis])
    padded[tuple(sl)] = field
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=axis)
    out = windows @ kernel
    n = field.shape[axis]
    ones = np.zeros(n + 2 * pad, dtype=np.float64)
    ones[pad : pad + n] = 1.0
    weight = np.lib.stride_tricks.sliding_window_view(ones, k) @ kernel
    shape = (n, 1) if axis == 0 else (1, n)
    return out / weight.reshape(shape)


def smooth_field(field, sigma):
    """Separable truncated-Gaussian smoothing of a 2-D field."""
    kernel = gaussian_kernel(sigma)
    out = _smooth_axis(np.asarray(field, dtype=np.float64), kernel, axis=0)
    return _smooth_axis(out, kernel, axis=1)


def generate(params):
    """Generate a fully valid synthetic cube from the parameters' seed."""
    key = rng.derive_key(params.seed, stream=0)
    t_len, rows, cols = params.t_len, params.rows, params.cols
    n_cells = rows * cols
    values = np.empty((t_len, rows, cols), dtype=np.float32)
    z = np.zeros((rows, cols), dtype=np.float64)
    for t in range(t_len):
        eps = rng.normals(key, 2 * t * n_cells, n_cells).reshape(rows, cols)
        eps *= params.noise_sd
        z = params.ar_coeff * z + smooth_field(eps, params.spatial_sigma)
        season = params.seasonal_amp * np.sin(2.0 * np.pi * t / 12.0)
        values[t] = params.value_scale * z + season
    np.clip(values, -PDSI_SANITY_BOUND, PDSI_SANITY_BOUND, out=values)
    return PdsiCube(values=values, start_month=0)
