"""Lowest eigenpair of the projected CI Hamiltonian.

The Davidson driver is written against three pluggable pieces so the same
loop runs in-process and across factories: a ``matvec`` on local vectors, a
batched global ``dots`` reduction, and a Krylov ``store`` holding the basis
vectors ``V_k`` and their images ``HV_k``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from . import _kernels as K
from .detspace import DetSet, hamiltonian_diagonal
from .hamio import IntegralSet

logger = logging.getLogger(__name__)

__all__ = [
    "DavidsonConfig",
    "DavidsonResult",
    "ConnectionCache",
    "CacheBudgetError",
    "MemoryStore",
    "davidson",
    "davidson_lowest",
    "build_connection_cache",
    "dense_ground_state",
    "dense_hamiltonian",
    "matvec_direct",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 10_000
LAPACK_LIMIT = 2_000
PRECOND_FLOOR = 1e-8
REORTH_TOL = 1e-10


@dataclass
class DavidsonConfig:
    energy_tol: float = 1e-10
    max_subspace: int = 8
    max_iters: int = 500
    warm_start: np.ndarray | None = None
    residual_tol: float = 1e-7

    def __post_init__(self):
        if not self.energy_tol > 0:
            raise ValueError("energy_tol must be positive")
        if self.max_subspace < 2:
            raise ValueError("max_subspace must be at least 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class DavidsonResult:
    energy: float
    coeffs: np.ndarray
    converged: bool
    iterations: int
    residual: float
    n_matvec: int
    history: list[float] = field(default_factory=list)
    hv: np.ndarray | None = field(default=None, repr=False)

    def __iter__(self):
        yield self.energy
        yield self.coeffs


class MemoryStore:
    """In-memory Krylov store with the same interface as the out-of-core one."""

    def __init__(self):
        self._v: list[np.ndarray] = []
        self._hv: list[np.ndarray] = []

    def __len__(self):
        return len(self._v)

    def append(self, v, hv):
        self._v.append(np.array(v, dtype=np.float64))
        self._hv.append(np.array(hv, dtype=np.float64))

    def reset(self, v, hv):
        self._v.clear()
        self._hv.clear()
        self.append(v, hv)

    def read_v(self, k):
        return self._v[k]

    def read_hv(self, k):
        return self._hv[k]


def _local_dots(vectors: Sequence[np.ndarray], y: np.ndarray) -> np.ndarray:
    return np.array([float(v @ y) for v in vectors])


def _combine(store, y, which):
    read = store.read_v if which == "v" else store.read_hv
    out = y[0] * read(0)
    for k in range(1, len(y)):
        out = out + y[k] * read(k)
    return out


def davidson(matvec: Callable[[np.ndarray], np.ndarray], diag: np.ndarray, v0: np.ndarray,
             cfg: DavidsonConfig, *, dots=None, hv0=None, store=None,
             callback=None) -> DavidsonResult:
    """Generic single-root Davidson iteration.

    ``callback(it, theta, residual, x, hx)`` runs once per iteration with the
    current Ritz pair (used for checkpointing).  Convergence is declared when
    the residual norm drops below ``cfg.residual_tol`` or when the Ritz value
    changes by less than ``cfg.energy_tol`` between iterations.
    """
    dots = dots or _local_dots
    store = store if store is not None else MemoryStore()
    m = cfg.max_subspace

    nrm = math.sqrt(dots([v0], v0)[0])
    if nrm == 0:
        raise ValueError("start vector is zero")
    v = v0 / nrm
    n_matvec = 0
    if hv0 is None:
        hv = matvec(v)
        n_matvec += 1
    else:
        hv = hv0 / nrm
    store.reset(v, hv)
    S = np.array([[dots([v], hv)[0]]])
    history: list[float] = []
    theta_prev = None
    theta = S[0, 0]
    x, hx, rn = v, hv, math.inf
    it = 0
    for it in range(cfg.max_iters):
        w, Y = scipy.linalg.eigh(0.5 * (S + S.T))
        theta = float(w[0])
        y = Y[:, 0]
        if y[np.argmax(np.abs(y))] < 0:
            y = -y
        x = _combine(store, y, "v")
        hx = _combine(store, y, "hv")
        r = hx - theta * x
        rn = math.sqrt(max(dots([r], r)[0], 0.0))
        history.append(theta)
        if callback is not None:
            callback(it, theta, rn, x, hx)
        done = rn < cfg.residual_tol or (theta_prev is not None and abs(theta - theta_prev) < cfg.energy_tol)
        if done:
            return DavidsonResult(theta, x, True, it + 1, rn, n_matvec, history, hx)
        theta_prev = theta

        if len(store) >= m:
            nx = math.sqrt(dots([x], x)[0])
            x, hx = x / nx, hx / nx
            store.reset(x, hx)
            S = np.array([[dots([x], hx)[0]]])

        denom = theta - diag
        small = np.abs(denom) < PRECOND_FLOOR
        denom[small] = np.where(denom[small] < 0, -PRECOND_FLOOR, PRECOND_FLOOR)
        t = r / denom
        basis = [store.read_v(k) for k in range(len(store))]
        c = dots(basis, t)
        t = t - sum(ck * bk for ck, bk in zip(c, basis))
        tn = math.sqrt(max(dots([t], t)[0], 0.0))
        if tn > 0:
            c2 = dots(basis, t)
            if np.max(np.abs(c2)) / tn > REORTH_TOL:
                t = t - sum(ck * bk for ck, bk in zip(c2, basis))
                tn = math.sqrt(max(dots([t], t)[0], 0.0))
        if tn < 1e-14:
            # the subspace is invariant: the Ritz pair is exact
            return DavidsonResult(theta, x, True, it + 1, rn, n_matvec, history, hx)
        t = t / tn
        ht = matvec(t)
        n_matvec += 1
        store.append(t, ht)
        k = len(store)
        col = dots([store.read_v(j) for j in range(k)], ht)
        S2 = np.zeros((k, k))
        S2[:k - 1, :k - 1] = S
        S2[:, k - 1] = col
        S2[k - 1, :] = col
        S = S2
    logger.warning("Davidson did not converge in %d iterations (residual %.3e)", cfg.max_iters, rn)
    return DavidsonResult(theta, x, False, it + 1, rn, n_matvec, history, hx)


# ---------------------------------------------------------------------------
# Hamiltonian application

class CacheBudgetError(MemoryError):
    """The connection cache would exceed its memory budget."""


@dataclass
class ConnectionCache:
    """Nonzero H_ij per row (diagonal first), stored as CSR."""

    matrix: sp.csr_matrix

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def row(self, i: int) -> list[tuple[int, float]]:
        a, b = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return list(zip(self.matrix.indices[a:b].tolist(), self.matrix.data[a:b].tolist()))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


def _csr_parts(space: DetSet, ints: IntegralSet, drop_zeros: bool):
    return K.build_csr(space.dets, *space.group_arrays(), ints.h, ints.eri, ints.e_core,
                       ints.n_orb, drop_zeros)


def build_connection_cache(space: DetSet, ints: IntegralSet,
                           budget_bytes: int = 2 * 1024 ** 3) -> ConnectionCache:
    """Precompute all nonzero couplings within ``space``."""
    if len(space) == 0:
        raise ValueError("empty determinant space")
    ptr, idx, data = _csr_parts(space, ints, True)
    if len(data) * 16 > budget_bytes:
        raise CacheBudgetError(f"connection cache needs {len(data) * 16} bytes")
    m = len(space)
    mat = sp.csr_matrix((data, idx, ptr), shape=(m, m))
    mat.has_sorted_indices = False
    return ConnectionCache(mat)


def matvec_direct(space: DetSet, ints: IntegralSet, v: np.ndarray) -> np.ndarray:
    """H v without storing H (diagonal first, then A, B and M channels per row)."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    return K.direct_matvec(space.dets, v, *space.group_arrays(), ints.h, ints.eri,
                           ints.e_core, ints.n_orb)


def dense_hamiltonian(space: DetSet, ints: IntegralSet) -> np.ndarray:
    """All-pairs Slater-Condon assembly (independent of the group machinery)."""
    return K.dense_hamiltonian(space.dets, ints.h, ints.eri, ints.e_core, ints.n_orb)


def _fix_sign(c: np.ndarray) -> np.ndarray:
    return -c if c[np.argmax(np.abs(c))] < 0 else c


def dense_ground_state(space: DetSet, ints: IntegralSet, limit: int = DENSE_LIMIT):
    """Exact lowest eigenpair by dense diagonalization."""
    m = len(space)
    if m == 0:
        raise ValueError("empty determinant space")
    if m > limit:
        raise ValueError(f"space of {m} determinants exceeds the dense limit {limit}")
    H = dense_hamiltonian(space, ints)
    if m <= LAPACK_LIMIT:
        w, v = scipy.linalg.eigh(H, subset_by_index=[0, 0], driver="evr")
    else:
        # full tridiagonalization is O(m^3); Lanczos on the dense matrix to
        # machine precision keeps the oracle independent of the Davidson code
        w, v = scipy.sparse.linalg.eigsh(H, k=1, which="SA", tol=0, v0=np.ones(m))
    return float(w[0]), _fix_sign(v[:, 0])


def initial_guess(diag: np.ndarray, matvec_block=None, block: int = 64) -> np.ndarray:
    """Unit vector on the lowest diagonal element (ties go to the first row)."""
    v = np.zeros(len(diag))
    v[int(np.argmin(diag))] = 1.0
    return v


def davidson_lowest(space: DetSet, ints: IntegralSet, cfg: DavidsonConfig | None = None,
                    cache: ConnectionCache | str | None = "auto", store=None,
                    callback=None) -> DavidsonResult:
    """Lowest eigenpair of H projected on ``space``.

    ``cache="auto"`` builds a connection cache when it fits the default
    budget; ``None`` forces the direct (recompute every element) matvec.
    """
    cfg = cfg or DavidsonConfig()
    m = len(space)
    if m == 0:
        raise ValueError("empty determinant space")
    if isinstance(cache, str):
        try:
            cache = build_connection_cache(space, ints)
        except CacheBudgetError:
            cache = None
    if cache is not None:
        diag = cache.diagonal()
        matvec = cache.matvec
    else:
        diag = hamiltonian_diagonal(space, ints)
        matvec = lambda x: matvec_direct(space, ints, x)  # noqa: E731
    if cfg.warm_start is not None:
        v0 = np.array(cfg.warm_start, dtype=np.float64)
        if v0.shape != (m,):
            raise ValueError("warm start has the wrong length")
        if not np.any(v0):
            v0 = initial_guess(diag)
    else:
        v0 = initial_guess(diag)
    res = davidson(matvec, diag, v0, cfg, store=store, callback=callback)
    res.coeffs = res.coeffs / np.linalg.norm(res.coeffs)
    return res
