"""Determinants, determinant sets with alpha/beta group structure, and Slater-Condon rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .hamio import IntegralSet

__all__ = [
    "Determinant",
    "DetSet",
    "Wavefunction",
    "excitation_degree",
    "matrix_element",
    "heat_bath_neighbors",
    "build_groups",
    "fci_space",
    "hf_determinant",
    "random_determinants",
    "read_wavefunction",
    "write_wavefunction",
]

MAX_ORB = 128
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, order=True)
class Determinant:
    """Occupation bitstrings; bit p set means spatial orbital p is occupied."""

    alpha: int
    beta: int

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha >> MAX_ORB or self.beta >> MAX_ORB:
            raise ValueError("bitstrings must be non-negative and fit in 128 bits")

    @property
    def n_alpha(self) -> int:
        return self.alpha.bit_count()

    @property
    def n_beta(self) -> int:
        return self.beta.bit_count()

    def words(self) -> np.ndarray:
        a, b = self.alpha, self.beta
        return np.array([a >> 64, a & _MASK64, b >> 64, b & _MASK64], dtype=np.uint64)

    @classmethod
    def from_words(cls, w) -> "Determinant":
        return cls((int(w[0]) << 64) | int(w[1]), (int(w[2]) << 64) | int(w[3]))

    @classmethod
    def from_occupations(cls, alpha_occ: Iterable[int], beta_occ: Iterable[int]) -> "Determinant":
        a = sum(1 << p for p in set(alpha_occ))
        b = sum(1 << p for p in set(beta_occ))
        return cls(a, b)

    def occupations(self, n_orb: int) -> tuple[list[int], list[int]]:
        return ([p for p in range(n_orb) if self.alpha >> p & 1],
                [p for p in range(n_orb) if self.beta >> p & 1])


def dets_to_array(dets: Iterable[Determinant]) -> np.ndarray:
    rows = [d.words() for d in dets]
    if not rows:
        return np.zeros((0, 4), dtype=np.uint64)
    return np.vstack(rows)


def _canonical_order(arr: np.ndarray) -> np.ndarray:
    return np.lexsort((arr[:, 3], arr[:, 2], arr[:, 1], arr[:, 0]))


def _unique_rows(arr: np.ndarray) -> tuple[np.ndarray, bool]:
    """Canonically sorted rows and whether duplicates were present."""
    if len(arr) == 0:
        return arr.reshape(0, 4).astype(np.uint64), False
    arr = arr[_canonical_order(arr)]
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
    return np.ascontiguousarray(arr[keep]), not keep.all()


class DetSet:
    """Canonically ordered, duplicate-free determinant set with group maps.

    Rows are sorted by ``(alpha, beta)`` so every alpha-group is a contiguous
    row range ``alpha_start[g]:alpha_start[g+1]``.  Beta-groups are stored as a
    row permutation ``beta_rows`` with offsets ``beta_ptr``.  ``alpha_adjacency``
    lists, for each alpha-group, the alpha-groups one single excitation away.
    """

    def __init__(self, dets: np.ndarray, n_orb: int, *, _sorted: bool = False):
        arr = np.ascontiguousarray(np.asarray(dets, dtype=np.uint64).reshape(-1, 4))
        if not _sorted:
            arr, dup = _unique_rows(arr)
            if dup:
                raise ValueError("determinant list contains duplicates")
        if not 0 < n_orb <= MAX_ORB:
            raise ValueError(f"n_orb must lie in [1, {MAX_ORB}]")
        arr.flags.writeable = False
        self.dets = arr
        self.n_orb = int(n_orb)
        self._build()

    def _build(self):
        arr = self.dets
        m = len(arr)
        if m:
            new = np.ones(m, dtype=bool)
            new[1:] = np.any(arr[1:, :2] != arr[:-1, :2], axis=1)
            starts = np.flatnonzero(new)
            self.alpha_keys = np.ascontiguousarray(arr[starts, :2])
            self.alpha_start = np.append(starts, m).astype(np.int64)
            self.alpha_of_row = (np.cumsum(new) - 1).astype(np.int64)
            border = np.lexsort((arr[:, 1], arr[:, 0], arr[:, 3], arr[:, 2]))
            bsorted = arr[border][:, 2:]
            bnew = np.ones(m, dtype=bool)
            bnew[1:] = np.any(bsorted[1:] != bsorted[:-1], axis=1)
            bstarts = np.flatnonzero(bnew)
            self.beta_keys = np.ascontiguousarray(bsorted[bstarts])
            self.beta_ptr = np.append(bstarts, m).astype(np.int64)
            self.beta_rows = border.astype(np.int64)
            self.beta_of_row = np.empty(m, dtype=np.int64)
            self.beta_of_row[border] = np.cumsum(bnew) - 1
            self.adj_ptr, self.adj_idx = K.alpha_adjacency(self.alpha_keys, self.n_orb)
        else:
            self.alpha_keys = np.zeros((0, 2), np.uint64)
            self.alpha_start = np.zeros(1, np.int64)
            self.alpha_of_row = np.zeros(0, np.int64)
            self.beta_keys = np.zeros((0, 2), np.uint64)
            self.beta_ptr = np.zeros(1, np.int64)
            self.beta_rows = np.zeros(0, np.int64)
            self.beta_of_row = np.zeros(0, np.int64)
            self.adj_ptr = np.zeros(1, np.int64)
            self.adj_idx = np.zeros(0, np.int64)

    # -- basic container protocol -------------------------------------------
    def __len__(self) -> int:
        return len(self.dets)

    def __getitem__(self, i) -> Determinant:
        return Determinant.from_words(self.dets[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __contains__(self, det: Determinant) -> bool:
        return self.index(det) >= 0

    def __eq__(self, other):
        if not isinstance(other, DetSet):
            return NotImplemented
        return self.n_orb == other.n_orb and np.array_equal(self.dets, other.dets)

    __hash__ = None

    def __repr__(self):
        return f"DetSet(n_det={len(self)}, n_orb={self.n_orb}, alpha_groups={self.n_alpha_groups})"

    def index(self, det: Determinant) -> int:
        w = det.words()
        return int(K.find_row(self.dets, w[0], w[1], w[2], w[3]))

    def lookup(self, rows: np.ndarray) -> np.ndarray:
        """Row index for each query row of words (-1 when absent)."""
        return K.lookup_rows(self.dets, np.ascontiguousarray(rows, dtype=np.uint64))

    # -- group statistics ---------------------------------------------------
    @property
    def n_alpha_groups(self) -> int:
        return len(self.alpha_keys)

    @property
    def n_beta_groups(self) -> int:
        return len(self.beta_keys)

    @property
    def alpha_groups(self) -> dict[int, range]:
        out = {}
        for g, (hi, lo) in enumerate(self.alpha_keys):
            out[(int(hi) << 64) | int(lo)] = range(int(self.alpha_start[g]), int(self.alpha_start[g + 1]))
        return out

    @property
    def beta_groups(self) -> dict[int, list[int]]:
        out = {}
        for g, (hi, lo) in enumerate(self.beta_keys):
            rows = self.beta_rows[self.beta_ptr[g]:self.beta_ptr[g + 1]]
            out[(int(hi) << 64) | int(lo)] = sorted(int(r) for r in rows)
        return out

    @property
    def alpha_adjacency(self) -> list[list[int]]:
        return [self.adj_idx[self.adj_ptr[g]:self.adj_ptr[g + 1]].tolist()
                for g in range(self.n_alpha_groups)]

    @cached_property
    def alpha_degree(self) -> np.ndarray:
        """Alpha-adjacency degree of each row's alpha-group."""
        deg = np.diff(self.adj_ptr)
        return deg[self.alpha_of_row]

    @property
    def cbar(self) -> float:
        """Mean alpha-adjacency degree over rows."""
        if len(self) == 0:
            return 0.0
        return float(self.alpha_degree.sum() / len(self))

    def electron_counts(self) -> tuple[int, int]:
        if len(self) == 0:
            return 0, 0
        d = self[0]
        return d.n_alpha, d.n_beta

    def group_arrays(self):
        return (self.alpha_start, self.alpha_of_row, self.beta_ptr, self.beta_rows,
                self.beta_of_row, self.adj_ptr, self.adj_idx)

    # -- set algebra --------------------------------------------------------
    def union(self, other: "DetSet | np.ndarray") -> "DetSet":
        rows = other.dets if isinstance(other, DetSet) else np.asarray(other, np.uint64).reshape(-1, 4)
        arr, _ = _unique_rows(np.vstack([self.dets, rows]))
        return DetSet(arr, self.n_orb, _sorted=True)

    def subset(self, rows) -> "DetSet":
        rows = np.sort(np.asarray(rows, dtype=np.int64))
        return DetSet(self.dets[rows], self.n_orb, _sorted=True)

    @classmethod
    def from_array(cls, arr: np.ndarray, n_orb: int, dedupe: bool = False) -> "DetSet":
        arr = np.asarray(arr, dtype=np.uint64).reshape(-1, 4)
        if dedupe:
            arr, _ = _unique_rows(arr)
            return cls(arr, n_orb, _sorted=True)
        return cls(arr, n_orb)


def build_groups(dets: Sequence[Determinant] | np.ndarray, n_orb: int | None = None) -> DetSet:
    """Group a duplicate-free determinant list into a :class:`DetSet`."""
    if isinstance(dets, np.ndarray):
        arr = dets
    else:
        dets = list(dets)
        arr = dets_to_array(dets)
    if n_orb is None:
        top = 0
        for w in arr:
            d = Determinant.from_words(w)
            top = max(top, d.alpha.bit_length(), d.beta.bit_length())
        n_orb = max(top, 1)
    return DetSet(arr, n_orb)


@dataclass(eq=False)
class Wavefunction:
    """Determinant set plus a unit-norm real coefficient vector."""

    space: DetSet
    coeffs: np.ndarray
    normalize: bool = field(default=False, repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).ravel()
        if c.shape[0] != len(self.space):
            raise ValueError("coefficient vector does not match the determinant set")
        nrm = np.linalg.norm(c)
        if self.normalize:
            if nrm == 0:
                raise ValueError("cannot normalize a zero vector")
            c = c / nrm
        elif abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"coefficients must have unit norm (got {nrm:.15f})")
        self.coeffs = c

    @property
    def n_det(self) -> int:
        return len(self.space)

    @property
    def n_orb(self) -> int:
        return self.space.n_orb

    def dominant_index(self) -> int:
        """Row of the largest |c|; ties go to the canonically first row."""
        return int(np.argmax(np.abs(self.coeffs)))

    @property
    def p0(self) -> float:
        return float(np.max(np.abs(self.coeffs)) ** 2)

    def top(self, k: int) -> np.ndarray:
        """Rows of the k largest |c|, ties broken by canonical order."""
        order = np.lexsort((np.arange(self.n_det), -np.abs(self.coeffs)))
        return order[:k]

    def energy(self, ints: IntegralSet) -> float:
        from .eigen import matvec_direct
        return float(self.coeffs @ matvec_direct(self.space, ints, self.coeffs))


# ---------------------------------------------------------------------------
# construction helpers

def _strings(n_orb: int, n_el: int) -> list[int]:
    return [sum(1 << p for p in occ) for occ in combinations(range(n_orb), n_el)]


def fci_space(n_orb: int, n_alpha: int, n_beta: int) -> DetSet:
    sa = _strings(n_orb, n_alpha)
    sb = _strings(n_orb, n_beta)
    dets = [Determinant(a, b) for a in sa for b in sb]
    return DetSet(dets_to_array(dets), n_orb)


def hf_determinant(n_orb: int, n_alpha: int, n_beta: int) -> Determinant:
    """Lowest orbitals occupied in both spins."""
    return Determinant((1 << n_alpha) - 1, (1 << n_beta) - 1)


def _random_string(rng, n_orb, n_el):
    occ = rng.choice(n_orb, size=n_el, replace=False)
    return int(sum(1 << int(p) for p in occ))


def random_determinants(n_orb: int, n_alpha: int, n_beta: int, count: int,
                        rng: np.random.Generator) -> list[Determinant]:
    """Distinct uniformly random determinants (without replacement)."""
    total = comb(n_orb, n_alpha) * comb(n_orb, n_beta)
    count = min(count, total)
    if count * 2 >= total:
        sa = _strings(n_orb, n_alpha)
        sb = _strings(n_orb, n_beta)
        pick = rng.choice(total, size=count, replace=False)
        nb = len(sb)
        return [Determinant(sa[int(k) // nb], sb[int(k) % nb]) for k in pick]
    seen: dict[Determinant, None] = {}
    while len(seen) < count:
        d = Determinant(_random_string(rng, n_orb, n_alpha), _random_string(rng, n_orb, n_beta))
        seen.setdefault(d, None)
    return list(seen)


# ---------------------------------------------------------------------------
# Slater-Condon interface

def excitation_degree(a: Determinant, b: Determinant) -> tuple[int, int]:
    return (a.alpha ^ b.alpha).bit_count() // 2, (a.beta ^ b.beta).bit_count() // 2


def matrix_element(a: Determinant, b: Determinant, ints: IntegralSet) -> float:
    """<a|H|b> by Slater-Condon rules (alpha block before beta block)."""
    if a.n_alpha != b.n_alpha or a.n_beta != b.n_beta:
        raise ValueError("determinants have different electron counts")
    da, db = excitation_degree(a, b)
    if da + db > 2:
        return 0.0
    wa, wb = a.words(), b.words()
    return float(K.row_element(wa, wb, ints.h, ints.eri, ints.e_core, ints.n_orb))


def hamiltonian_diagonal(space: DetSet, ints: IntegralSet) -> np.ndarray:
    return K.diagonal(space.dets, ints.h, ints.eri, ints.e_core, ints.n_orb)


def external_couplings(w: Wavefunction, theta: float, ints: IntegralSet):
    """Raw screened couplings (external det words, source row, H_aj c_j)."""
    n, na, nb = ints.n_orb, ints.n_alpha, ints.n_beta
    cap = max(1, K.excitation_capacity(n, na, nb))
    return K.screened_connections(w.space.dets, w.coeffs, w.space.dets, float(theta),
                                  ints.h, ints.eri, ints.e_core, n, cap)


def heat_bath_neighbors(w: Wavefunction, theta: float, ints: IntegralSet) -> DetSet:
    """Determinants outside ``w.space`` with ``|H_ji c_i| > theta`` for some i."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    if not np.isfinite(theta) or len(w.space) == 0:
        return DetSet(np.zeros((0, 4), np.uint64), w.space.n_orb, _sorted=True)
    dets, _, _ = external_couplings(w, theta, ints)
    arr, _ = _unique_rows(dets)
    return DetSet(arr, w.space.n_orb, _sorted=True)


# ---------------------------------------------------------------------------
# file format

def write_wavefunction(w: Wavefunction, path, n_alpha: int | None = None,
                       n_beta: int | None = None) -> None:
    """Text format: header ``n_orb n_alpha n_beta n_det`` then ``alpha_hex beta_hex coeff`` rows."""
    if n_alpha is None or n_beta is None:
        n_alpha, n_beta = w.space.electron_counts()
    lines = [f"{w.n_orb} {n_alpha} {n_beta} {w.n_det}"]
    for d, c in zip(w.space, w.coeffs):
        lines.append(f"{d.alpha:x} {d.beta:x} {float(c)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_wavefunction(path) -> Wavefunction:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    if len(head) != 4:
        raise ValueError("wavefunction header must be 'n_orb n_alpha n_beta n_det'")
    n_orb, n_alpha, n_beta, n_det = (int(x) for x in head)
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if len(rows) != n_det:
        raise ValueError(f"expected {n_det} determinant rows, found {len(rows)}")
    dets = []
    coeffs = np.empty(n_det)
    for k, (a, b, c) in enumerate(rows):
        d = Determinant(int(a, 16), int(b, 16))
        if d.n_alpha != n_alpha or d.n_beta != n_beta:
            raise ValueError(f"row {k}: electron counts disagree with the header")
        dets.append(d)
        coeffs[k] = float(c)
    arr = dets_to_array(dets)
    order = _canonical_order(arr)
    space = DetSet(arr, n_orb)
    return Wavefunction(space, coeffs[order])
