"""Density matrices, orbital entanglement, orbital ordering and multi-center analysis.

Conventions
-----------
``gamma[p, q] = sum_s <a+_ps a_qs>`` and
``Gamma[p, q, r, s] = sum_{st} <a+_ps a+_rt a_st a_qs>`` so that the energy is
``sum h gamma + 1/2 sum (pq|rs) Gamma + e_core`` with chemist-order integrals.
Local orbital states are indexed ``s = n_alpha + 2 n_beta``, i.e. the basis
order (|0>, |up>, |down>, |up down>).  Entropies are in bits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from numba import njit
from scipy.sparse.csgraph import connected_components

from . import _kernels as K
from .detspace import Wavefunction
from .hamio import IntegralSet

__all__ = [
    "compute_rdm1",
    "compute_rdm2",
    "compute_rdms",
    "rdm_energy",
    "one_orbital_rdm",
    "two_orbital_rdm",
    "von_neumann_entropy",
    "mutual_information",
    "fiedler_order",
    "k95_bandwidth",
    "CenterMap",
    "label_centers",
    "read_center_config",
    "spin_pattern",
    "rhd",
    "multicenter_histogram",
    "HistogramRow",
    "MutualInformation",
]

ENTROPY_CUTOFF = 1e-14


# ---------------------------------------------------------------------------
# reduced density matrices

def compute_rdms(w: Wavefunction) -> tuple[np.ndarray, np.ndarray]:
    sp = w.space
    return K.rdm_accumulate(sp.dets, np.ascontiguousarray(w.coeffs), *sp.group_arrays(), sp.n_orb)


def compute_rdm1(w: Wavefunction) -> np.ndarray:
    g1, _ = compute_rdms(w)
    return 0.5 * (g1 + g1.T)


def compute_rdm2(w: Wavefunction) -> np.ndarray:
    return compute_rdms(w)[1]


def rdm_energy(rdm1: np.ndarray, rdm2: np.ndarray, ints: IntegralSet) -> float:
    return float(np.einsum("pq,pq->", ints.h, rdm1)
                 + 0.5 * np.einsum("pqrs,pqrs->", ints.eri, rdm2) + ints.e_core)


# ---------------------------------------------------------------------------
# orbital density matrices and entropies

def _local_state(dets: np.ndarray, p: int) -> np.ndarray:
    word = 1 if p < 64 else 0
    shift = np.uint64(p % 64)
    a = (dets[:, word] >> shift) & np.uint64(1)
    b = (dets[:, 2 + word] >> shift) & np.uint64(1)
    return (a + 2 * b).astype(np.int64)


def one_orbital_rdm(w: Wavefunction, p: int) -> np.ndarray:
    """Diagonal of rho_p as probabilities over (|0>, |up>, |down>, |up down>)."""
    if not 0 <= p < w.n_orb:
        raise ValueError("orbital index out of range")
    s = _local_state(w.space.dets, p)
    return np.bincount(s, weights=w.coeffs ** 2, minlength=4)


@njit(cache=True)
def _two_orbital_parts(dets, c, p, q):
    """Environment key, local state and signed coefficient per determinant.

    The sign is the parity of moving the local creators to the front in the
    order (p up, p down, q up, q down), environment operators keeping their
    alpha-then-beta ascending order.
    """
    m = dets.shape[0]
    env = np.empty((m, 4), np.uint64)
    state = np.empty(m, np.int64)
    val = np.empty(m)
    for i in range(m):
        ah, al, bh, bl = dets[i, 0], dets[i, 1], dets[i, 2], dets[i, 3]
        ea_h, ea_l = ah, al
        eb_h, eb_l = bh, bl
        pa = K.get_bit(ah, al, p)
        pb = K.get_bit(bh, bl, p)
        qa = K.get_bit(ah, al, q)
        qb = K.get_bit(bh, bl, q)
        if pa:
            ea_h, ea_l = K.flip_bit(ea_h, ea_l, p)
        if qa:
            ea_h, ea_l = K.flip_bit(ea_h, ea_l, q)
        if pb:
            eb_h, eb_l = K.flip_bit(eb_h, eb_l, p)
        if qb:
            eb_h, eb_l = K.flip_bit(eb_h, eb_l, q)
        n_env_a = K.popcount(ea_h) + K.popcount(ea_l)
        par = 0
        # environment operators preceding each local operator
        if pa:
            par += K.count_below(ea_h, ea_l, p)
        if qa:
            par += K.count_below(ea_h, ea_l, q)
        if pb:
            par += n_env_a + K.count_below(eb_h, eb_l, p)
        if qb:
            par += n_env_a + K.count_below(eb_h, eb_l, q)
        # inversions among local operators: original order is
        # (alpha block by index, beta block by index); target is p-up, p-down, q-up, q-down
        if p < q:
            # original (pa, qa, pb, qb)
            if qa and pb:
                par += 1
        else:
            # original (qa, pa, qb, pb)
            if qa and pa:
                par += 1
            if qa and pb:
                par += 1
            if qb and pb:
                par += 1
        env[i, 0] = ea_h
        env[i, 1] = ea_l
        env[i, 2] = eb_h
        env[i, 3] = eb_l
        state[i] = 4 * (np.int64(pa) + 2 * np.int64(pb)) + np.int64(qa) + 2 * np.int64(qb)
        val[i] = c[i] * (1.0 - 2.0 * (par & 1))
    return env, state, val


def two_orbital_rdm(w: Wavefunction, p: int, q: int) -> np.ndarray:
    """16x16 two-orbital density matrix, basis index ``4 * s_p + s_q``."""
    if p == q:
        raise ValueError("two_orbital_rdm needs two distinct orbitals")
    n = w.n_orb
    if not (0 <= p < n and 0 <= q < n):
        raise ValueError("orbital index out of range")
    env, state, val = _two_orbital_parts(w.space.dets, np.ascontiguousarray(w.coeffs), p, q)
    _, group = np.unique(env, axis=0, return_inverse=True)
    group = group.ravel()
    V = np.zeros((group.max() + 1, 16))
    np.add.at(V, (group, state), val)
    return V.T @ V


def von_neumann_entropy(rho: np.ndarray) -> float:
    """Entropy in bits of a density matrix, or of a probability vector."""
    rho = np.asarray(rho, dtype=np.float64)
    ev = rho if rho.ndim == 1 else scipy.linalg.eigvalsh(rho)
    ev = ev[ev > ENTROPY_CUTOFF]
    return float(-np.sum(ev * np.log2(ev)))


def mutual_information(w: Wavefunction) -> np.ndarray:
    """I_ij = S(rho_i) + S(rho_j) - S(rho_ij) in bits (zero diagonal)."""
    n = w.n_orb
    s1 = np.array([von_neumann_entropy(one_orbital_rdm(w, p)) for p in range(n)])
    mi = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            val = s1[i] + s1[j] - von_neumann_entropy(two_orbital_rdm(w, i, j))
            mi[i, j] = mi[j, i] = val
    return mi


# ---------------------------------------------------------------------------
# ordering

def _component_order(mi: np.ndarray, idx: np.ndarray) -> np.ndarray:
    if len(idx) <= 2:
        return np.sort(idx)
    sub = mi[np.ix_(idx, idx)]
    lap = np.diag(sub.sum(axis=1)) - sub
    _, vec = scipy.linalg.eigh(lap)
    f = vec[:, 1]
    if f[np.argmax(np.abs(f))] < 0:
        f = -f
    f = np.round(f, 12)
    return idx[np.lexsort((idx, f))]


def fiedler_order(mi: np.ndarray) -> np.ndarray:
    """Orbital permutation sorting by the Fiedler vector of L = D - I.

    Disconnected components are ordered separately and concatenated by
    decreasing size (ties by smallest orbital index).
    """
    mi = np.asarray(mi, dtype=np.float64)
    if mi.ndim != 2 or mi.shape[0] != mi.shape[1]:
        raise ValueError("MI matrix must be square")
    if np.any(mi < -1e-12):
        raise ValueError("MI matrix must be non-negative")
    adj = np.where(mi > 0, mi, 0.0)
    np.fill_diagonal(adj, 0.0)
    ncomp, labels = connected_components(adj > 0, directed=False)
    comps = [np.flatnonzero(labels == k) for k in range(ncomp)]
    comps.sort(key=lambda c: (-len(c), c[0]))
    return np.concatenate([_component_order(adj, c) for c in comps]).astype(np.int64)


def k95_bandwidth(mi: np.ndarray, order: Sequence[int] | None = None,
                  mass_fraction: float = 0.95) -> int:
    """Smallest half-bandwidth k whose band holds ``mass_fraction`` of the MI mass."""
    mi = np.asarray(mi, dtype=np.float64)
    n = mi.shape[0]
    order = np.arange(n) if order is None else np.asarray(order)
    m = mi[np.ix_(order, order)]
    iu, ju = np.triu_indices(n, 1)
    vals = m[iu, ju]
    total = vals.sum()
    if total <= 0:
        return 0
    dist = ju - iu
    per_k = np.bincount(dist, weights=vals, minlength=n)
    cum = np.cumsum(per_k)
    target = mass_fraction * total * (1 - 1e-12)
    return int(np.argmax(cum >= target))


# ---------------------------------------------------------------------------
# centers, spin patterns and multi-center classification

@dataclass
class CenterMap:
    """Center label per orbital plus the projected weights behind it."""

    labels: list[str]
    names: list[str] = field(default_factory=list)
    weights: np.ndarray | None = None
    fallback: str = "S"

    def __post_init__(self):
        if not self.names:
            seen = []
            for lab in self.labels:
                if lab != self.fallback and lab not in seen:
                    seen.append(lab)
            self.names = seen

    @classmethod
    def sites(cls, n_orb: int, prefix: str = "C") -> "CenterMap":
        """Each orbital is its own center (Hubbard sites)."""
        return cls([f"{prefix}{p + 1}" for p in range(n_orb)])

    @classmethod
    def from_sets(cls, n_orb: int, sets: Mapping[str, Sequence[int]], fallback: str = "S") -> "CenterMap":
        labels = [fallback] * n_orb
        for name, idx in sets.items():
            for p in idx:
                labels[p] = name
        return cls(labels, [k for k in sets if k != fallback], fallback=fallback)

    def orbitals(self, name: str) -> list[int]:
        return [p for p, lab in enumerate(self.labels) if lab == name]


def read_center_config(path) -> dict[str, list[int]]:
    """Read ``name: i j k`` lines (ranges like ``2-6`` allowed, ``#`` comments).

    Indices are 0-based unless the file contains a ``base = 1`` line.
    """
    sets: dict[str, list[int]] = {}
    base = 0
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"base\s*=\s*(\d+)", line)
        if m:
            base = int(m.group(1))
            continue
        if ":" not in line:
            raise ValueError(f"bad center line {raw!r}")
        name, rest = line.split(":", 1)
        idx: list[int] = []
        for tok in re.split(r"[,\s]+", rest.strip()):
            if not tok:
                continue
            if "-" in tok:
                a, b = tok.split("-")
                idx.extend(range(int(a), int(b) + 1))
            else:
                idx.append(int(tok))
        sets[name.strip()] = idx
    return {k: [p - base for p in v] for k, v in sets.items()}


def label_centers(rotation: np.ndarray, center_orbital_sets: Mapping[str, Sequence[int]],
                  threshold: float = 0.4, fallback: str = "S") -> CenterMap:
    """Label each rotated orbital by the center carrying most of its weight.

    ``rotation[mu, p]`` expands orbital p over the reference orbitals mu.  A
    center label needs more than ``threshold`` of the weight and more than
    the fallback (S) weight; otherwise the orbital is labelled ``fallback``.
    The fallback weight is its own set when given, else the remainder.
    """
    U = np.asarray(rotation, dtype=np.float64)
    n = U.shape[0]
    names = [k for k in center_orbital_sets if k != fallback]
    sq = U ** 2
    W = np.zeros((n, len(names) + 1))
    for k, name in enumerate(names):
        W[:, k] = sq[list(center_orbital_sets[name]), :].sum(axis=0)
    if fallback in center_orbital_sets:
        W[:, -1] = sq[list(center_orbital_sets[fallback]), :].sum(axis=0)
    else:
        W[:, -1] = 1.0 - W[:, :-1].sum(axis=1)
    labels = []
    for p in range(n):
        if names:
            k = int(np.argmax(W[p, :-1]))
            if W[p, k] > threshold and W[p, k] > W[p, -1]:
                labels.append(names[k])
                continue
        labels.append(fallback)
    return CenterMap(labels, names, W, fallback)


def _occupations(words, n):
    a = (int(words[0]) << 64) | int(words[1])
    b = (int(words[2]) << 64) | int(words[3])
    return np.array([(a >> p) & 1 for p in range(n)]), np.array([(b >> p) & 1 for p in range(n)])


def spin_pattern(w: Wavefunction, centers: CenterMap) -> str:
    """U/D/0 per center from the dominant determinant's S_z."""
    na, nb = _occupations(w.space.dets[w.dominant_index()], w.n_orb)
    out = []
    for name in centers.names:
        orbs = centers.orbitals(name)
        sz = 0.5 * float(np.sum(na[orbs]) - np.sum(nb[orbs]))
        out.append("U" if sz >= 0.5 else "D" if sz <= -0.5 else "0")
    return "".join(out)


_FLIP = str.maketrans("UD", "DU")


def rhd(p1: str, p2: str) -> int:
    """Reduced Hamming distance: minimum over a global spin flip."""
    if len(p1) != len(p2):
        raise ValueError("patterns differ in length")
    ham = sum(a != b for a, b in zip(p1, p2))
    flipped = sum(a != b for a, b in zip(p1.translate(_FLIP), p2))
    return min(ham, flipped)


@dataclass(frozen=True)
class HistogramRow:
    n_touched: int
    n_dets: int
    pct_dets: float
    pct_weight: float
    pct_excitation: float | None


def multicenter_histogram(w: Wavefunction, centers: CenterMap, top_k: int = 10_000) -> list[HistogramRow]:
    """Weight distribution over the number of centers touched relative to the dominant det.

    A center is touched when any of its orbitals has a different alpha or
    beta occupation than in the dominant determinant.  Only the ``top_k``
    determinants by |c| are classified.  The row containing the dominant
    determinant (zero centers touched) carries no excitation-weight entry.
    """
    rows = w.top(top_k)
    dom = w.dominant_index()
    n = w.n_orb
    da, db = _occupations(w.space.dets[dom], n)
    members = [centers.orbitals(name) for name in centers.names]
    counts = np.zeros(len(members) + 1, dtype=np.int64)
    weight = np.zeros(len(members) + 1)
    exc = np.zeros(len(members) + 1)
    for r in rows:
        na, nb = _occupations(w.space.dets[r], n)
        diff = (na != da) | (nb != db)
        touched = sum(bool(diff[orbs].any()) for orbs in members)
        c2 = w.coeffs[r] ** 2
        counts[touched] += 1
        weight[touched] += c2
        if r != dom:
            exc[touched] += c2
    exc_total = exc[1:].sum()
    out = []
    for k in range(len(counts)):
        if counts[k] == 0 and k != 0:
            continue
        pe = None if k == 0 else (100.0 * exc[k] / exc_total if exc_total > 0 else 0.0)
        out.append(HistogramRow(k, int(counts[k]), 100.0 * counts[k] / len(rows),
                                100.0 * weight[k] / weight.sum(), pe))
    return out


# ---------------------------------------------------------------------------
# estimator wrapper

from sklearn.base import BaseEstimator, TransformerMixin  # noqa: E402
from sklearn.utils.validation import check_is_fitted  # noqa: E402


class MutualInformation(TransformerMixin, BaseEstimator):
    """Fit on a wavefunction; ``transform`` reorders an orbital-indexed matrix.

    Fitted attributes: ``mi_``, ``order_``, ``k_`` (bandwidth at ``mass_fraction``).
    """

    def __init__(self, mass_fraction: float = 0.95):
        self.mass_fraction = mass_fraction

    def fit(self, w: Wavefunction, y=None):
        self.mi_ = mutual_information(w)
        self.order_ = fiedler_order(np.clip(self.mi_, 0.0, None))
        self.k_ = k95_bandwidth(self.mi_, self.order_, self.mass_fraction)
        self.total_mi_ = float(np.triu(self.mi_, 1).sum())
        return self

    def transform(self, X):
        check_is_fitted(self, "order_")
        X = np.asarray(X)
        return X[np.ix_(self.order_, self.order_)]
