"""Raw-scan conditioning and noise-level estimation.

The chain is applied in a fixed order: :func:`plane_level`,
:func:`quantile_mask`, :func:`line_median_level`, :func:`estimate_sigma_mad`.
The MAD estimate uses horizontal differences, so leveling must come first;
a residual tilt shifts every difference and biases the estimate.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .core import as_grid, as_mask, full_mask
from .errors import DegenerateFitError, InsufficientDataError, InvalidArgumentError

MAD_CONSISTENCY = 0.6745
DEFAULT_GAMMA = 0.96


@dataclass(frozen=True)
class NoiseEstimate:
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidArgumentError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class DeltaParams:
    patch_dim: int
    sigma: float
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgumentError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.patch_dim < 1:
            raise InvalidArgumentError(f"patch_dim must be positive, got {self.patch_dim}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidArgumentError(f"sigma must be finite and >= 0, got {self.sigma}")


def _mask_or_full(g, mask):
    return full_mask(g.shape) if mask is None else as_mask(mask, g.shape)


def fit_plane(g, mask=None):
    """Least-squares ``(a, b, c)`` of ``a + b*col + c*row`` over valid pixels."""
    g = as_grid(g)
    mk = _mask_or_full(g, mask)
    rows, cols = np.nonzero(mk)
    design = np.column_stack([np.ones(rows.size), cols.astype(float), rows.astype(float)])
    if rows.size < 3 or np.linalg.matrix_rank(design) < 3:
        raise DegenerateFitError(
            "plane fit needs at least 3 non-collinear valid pixels")
    coef, *_ = np.linalg.lstsq(design, g[mk], rcond=None)
    return coef


def plane_level(g, mask=None):
    """Subtract the plane fitted over the valid pixels from the whole grid."""
    g = as_grid(g)
    a, b, c = fit_plane(g, mask)
    r, col = np.indices(g.shape, dtype=float)
    return g - (a + b * col + c * r)


def quantile_value(values, q):
    """Nearest-rank quantile with lower interpolation: ``sorted[floor(q*(n-1))]``."""
    s = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return s[int(math.floor(q * (s.size - 1)))]


def quantile_mask(g, lo=0.01, hi=0.99):
    """Flag pixels strictly below the ``lo`` or strictly above the ``hi`` quantile."""
    if not 0.0 <= lo < hi <= 1.0:
        raise InvalidArgumentError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    g = as_grid(g)
    qlo = quantile_value(g, lo)
    qhi = quantile_value(g, hi)
    return (g >= qlo) & (g <= qhi)


def line_median_level(g, mask=None, lines="rows"):
    """Shift every scan line so its valid-pixel median matches a common level.

    The common level is the median of the per-line medians, which keeps the
    overall height scale and makes the operation idempotent.
    ``lines="rows"`` treats each row as a scan line, ``"cols"`` each column.
    """
    if lines not in ("rows", "cols"):
        raise InvalidArgumentError(f"lines must be 'rows' or 'cols', got {lines!r}")
    g = as_grid(g)
    mk = _mask_or_full(g, mask)
    work, wmask = (g, mk) if lines == "rows" else (g.T, mk.T)
    medians = np.empty(work.shape[0])
    for i, (line, valid) in enumerate(zip(work, wmask)):
        if not valid.any():
            raise DegenerateFitError(f"scan line {i} has no valid pixels")
        medians[i] = np.median(line[valid])
    level = np.median(medians)
    out = work - medians[:, None] + level
    return out if lines == "rows" else out.T


def horizontal_differences(g, mask=None):
    g = as_grid(g)
    mk = _mask_or_full(g, mask)
    pair_ok = mk[:, 1:] & mk[:, :-1]
    return (g[:, 1:] - g[:, :-1])[pair_ok]


def estimate_sigma_mad(g, mask=None):
    """Robust noise level from horizontal first differences of valid pairs.

    ``sigma = median(|d|) / (0.6745 * sqrt(2))``; the square root undoes the
    variance doubling of differencing.
    """
    d = horizontal_differences(g, mask)
    if d.size < 2:
        raise InsufficientDataError(
            f"MAD estimate needs >= 2 valid horizontal pixel pairs, found {d.size}")
    return NoiseEstimate(float(np.median(np.abs(d)) / (MAD_CONSISTENCY * math.sqrt(2.0))))


def chi2_cdf(x, dof):
    return float(gammainc(dof / 2.0, x / 2.0)) if x > 0 else 0.0


def chi2_quantile(prob, dof, atol=0.0):
    """Inverse chi-square CDF by bisection on the regularized incomplete gamma.

    With ``atol=0`` the bracket is halved until it cannot shrink in floating point.
    """
    if not 0.0 < prob < 1.0:
        raise InvalidArgumentError(f"probability must lie in (0, 1), got {prob}")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < prob:
        lo, hi = hi, 2.0 * hi
    while hi - lo > atol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if chi2_cdf(mid, dof) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def compute_delta(params):
    """Squared-residual budget ``sigma**2 * F^-1_chi2(m)(gamma)`` for OMP."""
    return params.sigma ** 2 * chi2_quantile(params.gamma, params.patch_dim)


@dataclass
class PreprocessResult:
    grid: np.ndarray
    mask: np.ndarray
    sigma: NoiseEstimate
    plane: tuple
    quantile_masked: int


def preprocess(g, mask=None, lo=0.01, hi=0.99, lines="rows"):
    """Run the full conditioning chain and estimate the noise level."""
    g = as_grid(g)
    mk = _mask_or_full(g, mask)
    plane = tuple(float(v) for v in fit_plane(g, mk))
    leveled = plane_level(g, mk)
    qmask = quantile_mask(leveled, lo, hi)
    mk = mk & qmask
    leveled = line_median_level(leveled, mk, lines=lines)
    sigma = estimate_sigma_mad(leveled, mk)
    return PreprocessResult(leveled, mk, sigma, plane, int((~qmask).sum()))
