"""Grid and patch algebra.

Grids are 2-D float64 arrays, masks are 2-D boolean arrays (True = valid
pixel). A patch matrix has one vectorized ``edge x edge`` window per column.
Windows are enumerated by top-left corner in row-major order and each window
is flattened row-major, so column ``i`` of ``extract_patches(g, e)`` is
``g[r:r+e, c:c+e].ravel()`` with ``(r, c) = divmod(i, cols - e + 1)``.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError


def as_grid(values):
    """Validate and return ``values`` as a finite 2-D float64 array."""
    g = np.asarray(values, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise InvalidArgumentError(f"grid must be a non-empty 2-D array, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise InvalidArgumentError("grid contains NaN or Inf")
    return g


def as_mask(bits, shape=None):
    """Validate a {0,1} mask and return it as a boolean array (True = valid)."""
    arr = np.asarray(bits)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise InvalidArgumentError("mask values must be 0 or 1")
        arr = arr.astype(bool)
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidArgumentError(f"mask shape {arr.shape} does not match grid shape {tuple(shape)}")
    return arr


def full_mask(shape):
    return np.ones(shape, dtype=bool)


def patch_edge(patch_dim):
    edge = math.isqrt(int(patch_dim))
    if edge * edge != patch_dim:
        raise InvalidArgumentError(f"patch dimension {patch_dim} is not a perfect square")
    return edge


def _check_edge(rows, cols, edge):
    if edge < 1 or edge > min(rows, cols):
        raise InvalidArgumentError(
            f"patch edge {edge} must lie in [1, {min(rows, cols)}] for a {rows}x{cols} grid")


def patch_count(rows, cols, edge):
    """Number of fully-overlapping ``edge x edge`` windows in a grid."""
    _check_edge(rows, cols, edge)
    return (rows - edge + 1) * (cols - edge + 1)


def patch_origin(index, rows, cols, edge):
    """Top-left corner ``(row, col)`` of patch ``index``."""
    n = patch_count(rows, cols, edge)
    if not 0 <= index < n:
        raise InvalidArgumentError(f"patch index {index} outside [0, {n})")
    return divmod(index, cols - edge + 1)


def _windows(arr, edge):
    rows, cols = arr.shape
    _check_edge(rows, cols, edge)
    win = sliding_window_view(arr, (edge, edge))
    return np.ascontiguousarray(win.reshape(-1, edge * edge).T)


def extract_patches(g, edge):
    """Return the ``(edge**2, N_p)`` matrix of all overlapping patches of ``g``."""
    return _windows(as_grid(g), edge)


def extract_mask_patches(mask, edge):
    """Patch matrix of a boolean mask; same layout as :func:`extract_patches`."""
    return _windows(as_mask(mask), edge)


def coverage_counts(rows, cols, edge):
    """Number of patches covering each pixel (the diagonal of S^T S)."""
    _check_edge(rows, cols, edge)
    nr, nc = rows - edge + 1, cols - edge + 1
    r = np.arange(rows)
    c = np.arange(cols)
    # windows covering row r: top-left rows in [max(0, r-edge+1), min(r, nr-1)]
    cr = np.minimum(r, nr - 1) - np.maximum(0, r - edge + 1) + 1
    cc = np.minimum(c, nc - 1) - np.maximum(0, c - edge + 1) + 1
    return np.outer(cr, cc).astype(np.float64)


def compose_patches(estimates, rows, cols):
    """Average overlapping patch estimates back into a ``rows x cols`` grid.

    Each pixel receives the arithmetic mean of every estimate covering it.
    The mean is accumulated as a running mean in a fixed order (intra-patch
    offset, row-major), so a pixel whose estimates all agree gets that value
    back bit-exactly.
    """
    est = np.asarray(estimates, dtype=np.float64)
    if est.ndim != 2:
        raise InvalidArgumentError("estimates must be a 2-D patch matrix")
    edge = patch_edge(est.shape[0])
    n = patch_count(rows, cols, edge)
    if est.shape[1] != n:
        raise InvalidArgumentError(
            f"got {est.shape[1]} patches, a {rows}x{cols} grid with edge {edge} has {n}")
    nr, nc = rows - edge + 1, cols - edge + 1
    slabs = est.reshape(edge, edge, nr, nc)
    out = np.zeros((rows, cols))
    seen = np.zeros((rows, cols))
    for di in range(edge):
        for dj in range(edge):
            acc = out[di:di + nr, dj:dj + nc]
            cnt = seen[di:di + nr, dj:dj + nc]
            cnt += 1.0
            acc += (slabs[di, dj] - acc) / cnt
    return out
