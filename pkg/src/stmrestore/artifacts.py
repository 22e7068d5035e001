"""Detection of scars: short runs of corrupted pixels along the scan lines.

A block of ``w <= max_width`` consecutive lines is a candidate at a column
when every pixel in it sits on the same side of both the line above and the
line below the block, and by more than ``threshold * sigma`` from each of
them. Requiring both gaps (rather than the gap to their average) keeps the
clean lines bordering a strong scar from being flagged themselves. Candidate pixels are grouped into horizontal runs;
runs shorter than ``min_len`` are ignored. Groups of runs that stack taller
than ``max_width`` lines are re-examined at the higher deviation levels found
inside them, so raising the threshold can only shrink the marked set.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import as_grid, as_mask
from .errors import InvalidArgumentError

_ROW_LINK = np.array([[0, 0, 0], [1, 1, 1], [0, 0, 0]])
_ANY_LINK = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class ScarParams:
    min_len: int = 4
    max_width: int = 2
    threshold: float = 3.0

    def __post_init__(self):
        if self.min_len < 1 or self.max_width < 1:
            raise InvalidArgumentError("min_len and max_width must be >= 1")
        if not self.threshold > 0:
            raise InvalidArgumentError(f"threshold must be > 0, got {self.threshold}")


def scar_scores(g, sigma, max_width):
    """Per-pixel deviation (in units of ``sigma``) of the strongest coherent block.

    Pixels that belong to no coherent block score ``-inf``. Border lines
    always score ``-inf``.
    """
    g = as_grid(g)
    n = g.shape[0]
    score = np.full(g.shape, -np.inf)
    for w in range(1, max_width + 1):
        for r in range(1, n - w):
            up, dn = g[r - 1], g[r + w]
            block = g[r:r + w]
            s_up = np.sign(block - up)
            s_dn = np.sign(block - dn)
            coherent = np.all((s_up == s_dn) & (s_up != 0) & (s_up == s_up[:1]), axis=0)
            gap = np.minimum(np.abs(block - up), np.abs(block - dn))
            dev = np.min(gap, axis=0) / sigma
            block_score = np.where(coherent, dev, -np.inf)
            score[r:r + w] = np.maximum(score[r:r + w], block_score)
    return score


def _long_runs(cand, min_len):
    labels, n = ndimage.label(cand, structure=_ROW_LINK)
    if n == 0:
        return cand
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_len
    keep[0] = False
    return keep[labels]


def _mark(score, region, t, p, out):
    runs = _long_runs(region & (score > t), p.min_len)
    labels, n = ndimage.label(runs, structure=_ANY_LINK)
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == i
        if sl[0].stop - sl[0].start <= p.max_width:
            out[sl] |= comp
            continue
        # too tall at this level: retry with its weakest pixels removed
        sub = np.zeros_like(region)
        sub[sl] = comp
        _mark(score, sub, float(score[sub].min()), p, out)


def mark_scars(g, sigma, p=ScarParams()):
    """Return a mask (True = valid) with detected scar pixels set to False."""
    g = as_grid(g)
    if g.shape[0] < 3:
        raise InvalidArgumentError("scar detection needs at least 3 scan lines")
    s = getattr(sigma, "sigma", sigma)
    mask = np.ones(g.shape, dtype=bool)
    if s <= 0:
        warnings.warn("sigma is 0: scar threshold is degenerate, no pixels marked", RuntimeWarning)
        return mask
    score = scar_scores(g, s, p.max_width)
    marked = np.zeros(g.shape, dtype=bool)
    _mark(score, np.ones(g.shape, dtype=bool), p.threshold, p, marked)
    mask[marked] = False
    return mask


def merge_masks(a, b):
    """A pixel is valid only if it is valid in both masks."""
    a = as_mask(a)
    return a & as_mask(b, a.shape)
