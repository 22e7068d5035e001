"""Online dictionary learning with an l1 sparsity penalty.

Minimizes ``sum_i 0.5*||z_i - D a_i||^2 + lam*||a_i||_1`` over codes and
over dictionaries whose atoms have norm <= 1. Mini-batches are coded with
cyclic coordinate descent and folded into the sufficient statistics
``A = sum a a^T`` and ``B = sum z a^T``; each dictionary update is one
block-coordinate pass over atoms on the resulting quadratic surrogate.
"""
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError

log = logging.getLogger(__name__)

ATOM_NORM_BOUND = 1.0
DEAD_ATOM_RTOL = 1e-10


@dataclass(frozen=True)
class LearnConfig:
    lam: float = 0.11
    atom_count: int = 64
    batch_size: int = 256
    epochs: int = 5
    seed: int = 0
    tol: float = 1e-6
    validation_fraction: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgumentError(f"lambda must be > 0, got {self.lam}")
        if self.atom_count < 1 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("atom_count and batch_size must be >= 1, epochs >= 0")
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be > 0, got {self.tol}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidArgumentError("validation_fraction must lie in [0, 1)")


@dataclass
class LearnState:
    dictionary: np.ndarray
    A: np.ndarray
    B: np.ndarray
    batches_seen: int = 0
    last_batch: np.ndarray = None
    last_codes: np.ndarray = None
    reseeded: int = 0
    surrogate_trace: list = field(default_factory=list)

    @classmethod
    def fresh(cls, dictionary):
        m, k = dictionary.shape
        return cls(np.array(dictionary, dtype=np.float64), np.zeros((k, k)), np.zeros((m, k)))

    def accumulate(self, patches, codes):
        self.A += codes @ codes.T
        self.B += patches @ codes.T
        self.batches_seen += 1
        self.last_batch = patches
        self.last_codes = codes


@dataclass
class LearnResult:
    dictionary: np.ndarray
    state: LearnState
    clean_patches: int
    discarded_patches: int
    validation_objective_init: float
    validation_objective_final: float
    initial_dictionary: np.ndarray


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _norm(v):
    # correctly rounded, so the result does not depend on memory layout
    return math.sqrt(math.fsum(v * v))


def init_dictionary(patches, k, seed=0):
    """Pick ``k`` distinct nonzero patch columns at random, normalized to unit norm."""
    patches = np.asarray(patches, dtype=np.float64)
    order = np.random.default_rng(seed).permutation(patches.shape[1])
    chosen = [i for i in order if np.any(patches[:, i] != 0.0)][:k]
    if len(chosen) < k:
        raise InsufficientDataError(
            f"need {k} nonzero patches to initialize the dictionary, found {len(chosen)}")
    return np.column_stack([patches[:, i] / _norm(patches[:, i]) for i in chosen])


@numba.njit(cache=True)
def _cd_kernel(d, Z, lam, tol, max_sweeps):
    m, k = d.shape
    n = Z.shape[1]
    gram = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            acc = 0.0
            for r in range(m):
                acc += d[r, i] * d[r, j]
            gram[i, j] = acc
    corr = np.zeros((k, n))
    for b in range(n):
        for j in range(k):
            acc = 0.0
            for r in range(m):
                acc += d[r, j] * Z[r, b]
            corr[j, b] = acc
    alpha = np.zeros((k, n))
    converged = np.zeros(n, dtype=np.bool_)
    fitted = np.zeros(k)  # gram @ alpha[:, b]
    for b in range(n):
        fitted[:] = 0.0
        full = True
        for _ in range(max_sweeps):
            biggest = 0.0
            for j in range(k):
                if gram[j, j] <= 1e-24 or (not full and alpha[j, b] == 0.0):
                    continue
                old = alpha[j, b]
                rho = corr[j, b] - fitted[j] + gram[j, j] * old
                if rho > lam:
                    new = (rho - lam) / gram[j, j]
                elif rho < -lam:
                    new = (rho + lam) / gram[j, j]
                else:
                    new = 0.0
                step = new - old
                if step != 0.0:
                    for i in range(k):
                        fitted[i] += gram[i, j] * step
                    alpha[j, b] = new
                    biggest = max(biggest, abs(step))
            if biggest < tol:
                if full:
                    converged[b] = True
                    break
                full = True
            else:
                # keep sweeping the nonzero set until it settles, then recheck all
                full = False
    return alpha, converged


def lasso_code(d, z, lam, tol=1e-8, max_sweeps=100000):
    """Cyclic coordinate descent for ``0.5*||z - D a||^2 + lam*||a||_1``.

    ``z`` may be one vector or a matrix of column vectors, each solved
    independently. Coordinates are visited in index order; between full
    passes only the nonzero coefficients are swept. A column is done when a
    full pass moves no coefficient by ``tol`` or more.
    """
    d = np.asarray(d, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(z)) and np.isfinite(lam)):
        raise InvalidArgumentError("lasso_code inputs must be finite")
    single = z.ndim == 1
    Z = z[:, None] if single else z
    if Z.shape[0] != d.shape[0]:
        raise InvalidArgumentError(f"patch length {Z.shape[0]} != dictionary rows {d.shape[0]}")
    alpha, converged = _cd_kernel(np.ascontiguousarray(d), np.ascontiguousarray(Z), float(lam), float(tol), int(max_sweeps))
    if not converged.all():
        log.warning("lasso_code: %d columns hit max_sweeps=%d before tol=%g",
                    int((~converged).sum()), max_sweeps, tol)
    return alpha[:, 0] if single else alpha


def lasso_objective(d, z, alpha, lam):
    """Per-column value of ``0.5*||z - D a||^2 + lam*||a||_1``."""
    r = np.asarray(z) - np.asarray(d) @ np.asarray(alpha)
    return 0.5 * np.sum(r * r, axis=0) + lam * np.sum(np.abs(alpha), axis=0)


def objective_value(d, patches, lam, tol=1e-10):
    """Dictionary-learning objective with each code solved by :func:`lasso_code`."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 1:
        patches = patches[:, None]
    if patches.shape[1] == 0:
        return 0.0
    alpha = lasso_code(d, patches, lam, tol)
    return float(np.sum(lasso_objective(d, patches, alpha, lam)))


def surrogate_value(d, A, B):
    """Quadratic surrogate ``0.5*tr(D^T D A) - tr(D^T B)`` (constant term dropped)."""
    return 0.5 * float(np.sum((d.T @ d) * A)) - float(np.sum(d * B))


def _reseed(state, dead):
    patches, codes = state.last_batch, state.last_codes
    if patches is None or patches.shape[1] == 0:
        log.warning("%d unused atoms left untouched: no batch available for re-seeding", len(dead))
        return
    resid = patches - state.dictionary @ codes
    err = np.sum(resid * resid, axis=0)
    order = np.argsort(-err, kind="stable")
    used = 0
    for j in dead:
        while used < order.size and np.linalg.norm(patches[:, order[used]]) == 0:
            used += 1
        if used == order.size:
            break
        p = patches[:, order[used]]
        state.dictionary[:, j] = p / np.linalg.norm(p)
        used += 1
        state.reseeded += 1
        log.info("re-seeded unused atom %d from worst-represented patch", j)


def dictionary_update(state):
    """One block-coordinate pass over atoms on the surrogate, then atom projection.

    Atoms whose accumulated usage ``A[j, j]`` is negligible are re-seeded
    from the worst-represented patch of the most recent batch. Mutates and
    returns ``state.dictionary``.
    """
    if state.batches_seen < 1:
        raise InvalidArgumentError("dictionary_update needs at least one accumulated batch")
    D, A, B = state.dictionary, state.A, state.B
    before = surrogate_value(D, A, B)
    scale = max(float(np.max(np.diag(A))), 0.0)
    dead = []
    for j in range(D.shape[1]):
        ajj = A[j, j]
        if ajj <= DEAD_ATOM_RTOL * scale or ajj <= 0.0:
            dead.append(j)
            continue
        u = (B[:, j] - D @ A[:, j]) / ajj + D[:, j]
        D[:, j] = u / max(np.linalg.norm(u), ATOM_NORM_BOUND)
    if dead:
        _reseed(state, dead)
    after = surrogate_value(D, A, B)
    state.surrogate_trace.append((before, after))
    return D


def clean_patch_columns(mask_patches):
    """Indices of patches with no masked pixel."""
    return np.flatnonzero(np.all(np.asarray(mask_patches, dtype=bool), axis=0))


def fit_online(patches, mask_patches, cfg):
    """Learn a dictionary from the outlier-free patches; returns a :class:`LearnResult`."""
    patches = np.asarray(patches, dtype=np.float64)
    if mask_patches is None:
        keep = np.arange(patches.shape[1])
    else:
        if np.shape(mask_patches) != patches.shape:
            raise InvalidArgumentError("mask patches must match the patch matrix shape")
        keep = clean_patch_columns(mask_patches)
    k = cfg.atom_count
    if keep.size < k:
        raise InsufficientDataError(
            f"only {keep.size} outlier-free patches for {k} atoms; "
            "use a smaller patch edge, fewer atoms, or a less aggressive mask")
    clean = patches[:, keep]
    D0 = init_dictionary(clean, k, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    order = rng.permutation(clean.shape[1])
    n_val = int(cfg.validation_fraction * clean.shape[1])
    if clean.shape[1] - n_val < k:
        n_val = 0
    val, train = clean[:, order[:n_val]], clean[:, order[n_val:]]
    state = LearnState.fresh(D0)
    n = train.shape[1]
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = train[:, perm[start:start + cfg.batch_size]]
            codes = lasso_code(state.dictionary, batch, cfg.lam, cfg.tol)
            state.accumulate(batch, codes)
            dictionary_update(state)
    D = state.dictionary
    obj0 = objective_value(D0, val, cfg.lam, cfg.tol) if n_val else float("nan")
    obj1 = objective_value(D, val, cfg.lam, cfg.tol) if n_val else float("nan")
    if n_val and obj1 > obj0:
        log.warning("validation objective rose during learning: %.6g -> %.6g", obj0, obj1)
    return LearnResult(D, state, int(keep.size), int(patches.shape[1] - keep.size), obj0, obj1, D0)


def learn(patches, mask_patches, cfg):
    """Learn a dictionary (``m x k`` array) from the outlier-free patches."""
    return fit_online(patches, mask_patches, cfg).dictionary
