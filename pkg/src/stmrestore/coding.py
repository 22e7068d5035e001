"""Greedy sparse coding of patches and masked restoration.

Masked pixels are dropped from every step of orthogonal matching pursuit:
atom correlations, the least-squares refit and the residual budget only see
valid rows, which is the same as running plain OMP on the row-deleted
problem. The full-length reconstruction ``D @ alpha`` then supplies values
at the masked rows (inpainting).
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import as_grid, as_mask, compose_patches, extract_mask_patches, extract_patches, \
    full_mask, patch_edge
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

MIN_ATOM_NORM = 1e-8
EXHAUSTED_RTOL = 1e-12
CHUNK = 512

STOP_DELTA = "delta"
STOP_MAX_ATOMS = "max_atoms"
STOP_EXHAUSTED = "exhausted"
STOP_UNINFORMATIVE = "uninformative"


@dataclass(frozen=True)
class CodingParams:
    delta: float = 0.0
    max_atoms: int = 4
    scale_delta_by_valid: bool = False  # use delta * valid/m per patch

    def __post_init__(self):
        if not self.delta >= 0:
            raise InvalidArgumentError(f"delta must be >= 0, got {self.delta}")
        if self.max_atoms < 1:
            raise InvalidArgumentError(f"max_atoms must be >= 1, got {self.max_atoms}")


@dataclass
class SparseCode:
    support: tuple
    coeffs: np.ndarray
    residual_norm2: float
    history: tuple
    stop: str

    @property
    def uninformative(self):
        return self.stop == STOP_UNINFORMATIVE

    def dense(self, k):
        alpha = np.zeros(k)
        alpha[list(self.support)] = self.coeffs
        return alpha


def _omp_batch(d, Z, M, max_atoms, delta):
    """Masked OMP on every column of ``Z``.

    Returns ``(support, coeffs, history, stop)`` where ``support`` is a
    ``(B, max_atoms)`` int array padded with -1, ``coeffs`` matches it,
    ``history`` is the ``(max_atoms+1, B)`` squared masked residual per
    iteration (NaN once stopped), ``stop`` a list of stop reasons.
    ``delta`` is a scalar or one budget per column.
    """
    m, k = d.shape
    B = Z.shape[1]
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), (B,))
    Mf = M.astype(np.float64)
    Zm = Z * Mf
    R = Zm.copy()
    res2 = np.sum(R * R, axis=0)
    history = np.full((max_atoms + 1, B), np.nan)
    history[0] = res2
    support = np.full((B, max_atoms), -1, dtype=np.int64)
    coeffs = np.zeros((B, max_atoms))
    stop = np.array([STOP_MAX_ATOMS] * B, dtype=object)
    informative = M.any(axis=0)
    stop[~informative] = STOP_UNINFORMATIVE
    done_delta = informative & (res2 <= delta)
    stop[done_delta] = STOP_DELTA
    active = informative & ~done_delta
    # atom norms restricted to each column's valid rows
    usable = ((d * d).T @ Mf) >= MIN_ATOM_NORM ** 2
    scale = np.sqrt(np.sum(Zm * Zm, axis=0))
    for t in range(max_atoms):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        corr = np.abs(d.T @ R[:, idx])
        corr[~usable[:, idx]] = -1.0
        if t:
            corr[support[idx, :t].T, np.arange(idx.size)[None, :]] = -1.0
        pick = np.argmax(corr, axis=0)
        best = corr[pick, np.arange(idx.size)]
        exhausted = best <= EXHAUSTED_RTOL * scale[idx]
        if exhausted.any():
            stop[idx[exhausted]] = STOP_EXHAUSTED
            active[idx[exhausted]] = False
            idx, pick = idx[~exhausted], pick[~exhausted]
            if idx.size == 0:
                break
        support[idx, t] = pick
        S = support[idx, :t + 1]
        Ds = d[:, S] * Mf[:, idx, None]            # (m, n, t+1), masked rows zeroed
        gram = np.einsum("mni,mnj->nij", Ds, Ds)
        rhs = np.einsum("mni,mn->ni", Ds, Zm[:, idx])
        a = np.linalg.solve(gram, rhs[..., None])[..., 0]
        coeffs[idx, :t + 1] = a
        R[:, idx] = Zm[:, idx] - np.einsum("mni,ni->mn", Ds, a)
        r2 = np.sum(R[:, idx] ** 2, axis=0)
        history[t + 1, idx] = r2
        res2[idx] = r2
        hit = r2 <= delta[idx]
        stop[idx[hit]] = STOP_DELTA
        active[idx[hit]] = False
    return support, coeffs, history, list(stop), res2


def _budget(p, M):
    if not p.scale_delta_by_valid:
        return p.delta
    return p.delta * M.sum(axis=0) / M.shape[0]


def _check(d, z):
    d = np.asarray(d, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if d.ndim != 2 or z.ndim != 1 or z.shape[0] != d.shape[0]:
        raise InvalidArgumentError(
            f"patch of length {z.shape} does not match dictionary of shape {d.shape}")
    return d, z


def masked_omp(d, z, mask, p):
    """OMP on the valid rows of ``z`` only; ``mask`` is 1 for valid rows."""
    d, z = _check(d, z)
    mask = np.asarray(mask)
    if mask.shape != z.shape:
        raise InvalidArgumentError("mask length must match the patch length")
    M = mask.astype(bool)[:, None]
    support, coeffs, history, stop, res2 = _omp_batch(d, z[:, None], M, p.max_atoms, _budget(p, M))
    n = int(np.sum(support[0] >= 0))
    hist = tuple(float(h) for h in history[:, 0] if not np.isnan(h))
    return SparseCode(tuple(int(j) for j in support[0, :n]), coeffs[0, :n].copy(),
                      float(res2[0]), hist, stop[0])


def omp(d, z, p):
    """Orthogonal matching pursuit: greedy atoms until ``||r||^2 <= delta`` or ``max_atoms``.

    Atoms are chosen by largest ``|d_j^T r|`` (lowest index wins ties);
    coefficients are the least-squares fit on the chosen support.
    """
    d, z = _check(d, z)
    return masked_omp(d, z, np.ones(z.shape, dtype=bool), p)


@dataclass
class CodedPatches:
    estimates: np.ndarray
    sparsity: np.ndarray
    uninformative: np.ndarray

    @property
    def uninformative_count(self):
        return int(self.uninformative.sum())


def _code_chunk(d, Z, M, p):
    support, coeffs, _, stop, _ = _omp_batch(d, Z, M, p.max_atoms, _budget(p, M))
    alpha = np.zeros((d.shape[1], Z.shape[1]))
    cols = np.repeat(np.arange(Z.shape[1]), p.max_atoms)
    sel = support.ravel() >= 0
    alpha[support.ravel()[sel], cols[sel]] = coeffs.ravel()[sel]
    est = d @ alpha
    sparsity = (support >= 0).sum(axis=1)
    unin = np.array([s == STOP_UNINFORMATIVE for s in stop], dtype=bool)
    return est, sparsity, unin


def code_all_patches(d, patches, mask_patches, p, threads=None):
    """Masked OMP on every patch column; returns the full reconstructions ``D @ alpha_i``.

    Work is split into fixed-size chunks so the result does not depend on
    ``threads``.
    """
    d = np.asarray(d, dtype=np.float64)
    Z = np.asarray(patches, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != d.shape[0]:
        raise InvalidArgumentError(f"patches of shape {Z.shape} do not match dictionary {d.shape}")
    M = np.ones(Z.shape, dtype=bool) if mask_patches is None else np.asarray(mask_patches, dtype=bool)
    if M.shape != Z.shape:
        raise InvalidArgumentError("mask patches must match the patch matrix shape")
    starts = range(0, Z.shape[1], CHUNK)
    jobs = [(d, Z[:, s:s + CHUNK], M[:, s:s + CHUNK], p) for s in starts]
    threads = threads or os.cpu_count() or 1
    if threads == 1 or len(jobs) <= 1:
        parts = [_code_chunk(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _code_chunk(*job), jobs))
    if not parts:
        return CodedPatches(np.zeros(Z.shape), np.zeros(0, dtype=int), np.zeros(0, dtype=bool))
    est = np.concatenate([q[0] for q in parts], axis=1)
    sparsity = np.concatenate([q[1] for q in parts])
    unin = np.concatenate([q[2] for q in parts])
    return CodedPatches(est, sparsity, unin)


@dataclass
class DenoiseResult:
    image: np.ndarray
    coded: CodedPatches
    uncovered_pixels: int

    @property
    def mean_sparsity(self):
        return float(self.coded.sparsity.mean())


def restore(g, mask, d, p, edge=None, threads=None):
    """Extract patches, code them against ``d`` with the mask, and average back."""
    g = as_grid(g)
    mk = full_mask(g.shape) if mask is None else as_mask(mask, g.shape)
    d = np.asarray(d, dtype=np.float64)
    if edge is None:
        edge = patch_edge(d.shape[0])
    if edge * edge != d.shape[0]:
        raise InvalidArgumentError(f"patch edge {edge} does not match dictionary rows {d.shape[0]}")
    coded = code_all_patches(d, extract_patches(g, edge), extract_mask_patches(mk, edge), p, threads)
    image = compose_patches(coded.estimates, *g.shape)
    # pixels whose every covering patch was fully masked
    informative = (~coded.uninformative).astype(np.float64)
    cover = compose_patches(np.broadcast_to(informative, coded.estimates.shape), *g.shape)
    uncovered = int(np.sum(cover == 0.0))
    if coded.uninformative_count:
        log.info("%d uninformative patches, %d pixels without informative coverage",
                 coded.uninformative_count, uncovered)
    return DenoiseResult(image, coded, uncovered)


def denoise(g, mask, d, p, edge=None, threads=None):
    """Denoise and inpaint ``g``; masked pixels are filled from the sparse model."""
    return restore(g, mask, d, p, edge, threads).image


def noise_attenuation_ratio(p_sparsity, m):
    """Expected fraction of white-noise energy kept by projecting onto ``p`` of ``m`` dimensions."""
    if m < 1 or not 0 <= p_sparsity <= m:
        raise InvalidArgumentError(f"need 0 <= p <= m and m >= 1, got p={p_sparsity}, m={m}")
    return p_sparsity / m

