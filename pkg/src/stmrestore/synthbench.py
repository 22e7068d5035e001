"""Synthetic quasi-periodic test images, degradations and quality metrics.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .core import as_grid, as_mask
from .errors import InvalidArgumentError

MOTIFS = ("gaussian-bump", "dimer")


@dataclass(frozen=True)
class LatticeSpec:
    rows: int = 128
    cols: int = 128
    period_r: float = 12.0
    period_c: float = 12.0
    motif: str = "gaussian-bump"
    amplitude: float = 1.0
    width: float = 2.0
    dimer_separation: float = 0.4   # fraction of period_c between the two lobes
    brightness_alt: float = 1.0     # amplitude factor applied to every other lattice row

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidArgumentError("lattice grid must have positive size")
        if self.period_r < 2 or self.period_c < 2:
            raise InvalidArgumentError("lattice periods must be >= 2 pixels")
        if self.motif not in MOTIFS:
            raise InvalidArgumentError(f"motif must be one of {MOTIFS}, got {self.motif!r}")
        if not 0.0 <= self.brightness_alt <= 1.0:
            raise InvalidArgumentError("brightness_alt must lie in [0, 1]")
        if not self.width > 0:
            raise InvalidArgumentError("motif width must be > 0")


@dataclass(frozen=True)
class DegradeSpec:
    noise_sigma: float = 0.0
    scar_count: int = 0
    scar_len_range: tuple = (8, 24)
    scar_width_range: tuple = (1, 1)
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.scar_count < 0:
            raise InvalidArgumentError("noise_sigma and scar_count must be >= 0")
        for lo, hi in (self.scar_len_range, self.scar_width_range):
            if not 1 <= lo <= hi:
                raise InvalidArgumentError("scar ranges must satisfy 1 <= lo <= hi")


def _lobes(spec):
    if spec.motif == "gaussian-bump":
        return [0.0]
    half = 0.5 * spec.dimer_separation * spec.period_c
    return [-half, half]


def generate_lattice(spec):
    """Sum of motif copies on a rectangular lattice.

    Each pixel is evaluated from its position modulo the lattice period
    (twice the row period when rows alternate in brightness), so integer
    periods give exact translational symmetry.
    """
    alt = spec.brightness_alt != 1.0
    pr = spec.period_r * (2 if alt else 1)
    r = np.mod(np.arange(spec.rows, dtype=float), pr)
    c = np.mod(np.arange(spec.cols, dtype=float), spec.period_c)
    reach = int(math.ceil(5 * spec.width / min(spec.period_r, spec.period_c))) + 2
    out = np.zeros((spec.rows, spec.cols))
    n_rows = 2 if alt else 1
    for j in range(-reach, n_rows + reach):
        amp = spec.amplitude * (spec.brightness_alt if (alt and j % 2) else 1.0)
        dr2 = (r - j * spec.period_r) ** 2
        row_part = np.exp(-dr2 / (2 * spec.width ** 2))
        for i in range(-reach, reach + 1):
            for off in _lobes(spec):
                dc2 = (c - i * spec.period_c - off) ** 2
                out += amp * np.outer(row_part, np.exp(-dc2 / (2 * spec.width ** 2)))
    return out


def degrade(g, spec):
    """Add white Gaussian noise, then overwrite scars with a dark rail value.

    Returns ``(degraded, truth_mask)`` where ``truth_mask`` is False exactly
    on the overwritten pixels. The rail value is the minimum of the noisy grid.
    """
    g = as_grid(g)
    rng = np.random.default_rng(spec.seed)
    out = g + spec.noise_sigma * rng.standard_normal(g.shape) if spec.noise_sigma else g.copy()
    mask = np.ones(g.shape, dtype=bool)
    if spec.scar_count:
        rail = out.min()
        rows, cols = g.shape
        for _ in range(spec.scar_count):
            length = int(rng.integers(spec.scar_len_range[0], spec.scar_len_range[1] + 1))
            width = int(rng.integers(spec.scar_width_range[0], spec.scar_width_range[1] + 1))
            length, width = min(length, cols), min(width, rows)
            r0 = int(rng.integers(0, rows - width + 1))
            c0 = int(rng.integers(0, cols - length + 1))
            mask[r0:r0 + width, c0:c0 + length] = False
        out[~mask] = rail
    return out, mask


def _select(reference, test, mask, over):
    ref, tst = as_grid(reference), as_grid(test)
    if ref.shape != tst.shape:
        raise InvalidArgumentError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    if mask is None:
        return ref.ravel(), tst.ravel()
    mk = as_mask(mask, ref.shape)
    if over == "outlier":
        mk = ~mk
    elif over != "valid":
        raise InvalidArgumentError(f"over must be 'valid' or 'outlier', got {over!r}")
    if not mk.any():
        raise InvalidArgumentError(f"no {over} pixels selected")
    return ref[mk], tst[mk]


def psnr(reference, test, mask=None):
    """``10*log10(peak**2 / MSE)`` with ``peak = max - min`` of the full reference.

    Returns ``inf`` when the grids agree exactly.
    """
    peak = float(np.ptp(as_grid(reference)))
    ref, tst = _select(reference, test, mask, "valid")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def masked_rmse(reference, test, mask, over="valid"):
    ref, tst = _select(reference, test, mask, over)
    return float(np.sqrt(np.mean((ref - tst) ** 2)))


def baseline_line_fill(g, mask, reach=5):
    """Fill each outlier with the median of up to ``reach`` valid pixels on each side of its line."""
    g = as_grid(g)
    mk = as_mask(mask, g.shape)
    out = g.copy()
    for r, c in zip(*np.nonzero(~mk)):
        valid = np.flatnonzero(mk[r])
        left = valid[valid < c][-reach:]
        right = valid[valid > c][:reach]
        near = np.concatenate([left, right])
        if near.size == 0:
            raise InvalidArgumentError(f"scan line {r} has no valid pixel to fill column {c}")
        out[r, c] = np.median(g[r, near])
    return out


def projection_noise_ratio(p, m, trials=10000, seed=0):
    """Monte-Carlo ``E||P n||^2 / E||n||^2`` for a fixed random ``p``-dim subspace of R^m."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((m, p))) if p else (np.zeros((m, 0)), None)
    noise = rng.standard_normal((m, trials))
    kept = basis.T @ noise
    return float(np.sum(kept * kept) / np.sum(noise * noise))
