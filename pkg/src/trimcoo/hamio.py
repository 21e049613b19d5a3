"""Integrals: FCIDUMP input/output, Hubbard-on-graph Hamiltonians and orbital rotations.

Two-electron integrals follow the chemist convention ``(pq|rs)`` used by
FCIDUMP files.  They are stored 8-fold packed; ``IntegralSet.eri`` expands
them to a dense ``(n, n, n, n)`` array on first access.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "FcidumpError",
    "IntegralSet",
    "GraphModelSpec",
    "pack_eri",
    "unpack_eri",
    "read_fcidump",
    "write_fcidump",
    "build_hubbard_graph",
    "rotate_integrals",
]


class FcidumpError(ValueError):
    """Raised for malformed FCIDUMP content."""


def _pair(i, j):
    i, j = np.maximum(i, j), np.minimum(i, j)
    return i * (i + 1) // 2 + j


def pack_eri(eri: np.ndarray) -> np.ndarray:
    """Pack a dense 8-fold symmetric ERI tensor into a 1-D array."""
    n = eri.shape[0]
    npair = n * (n + 1) // 2
    ii, jj = np.tril_indices(n)
    mat = eri[ii[:, None], jj[:, None], ii[None, :], jj[None, :]]
    kk, ll = np.tril_indices(npair)
    return np.ascontiguousarray(mat[kk, ll])


def unpack_eri(packed: np.ndarray, n: int) -> np.ndarray:
    """Expand an 8-fold packed ERI array to dense ``(n, n, n, n)``."""
    idx = np.arange(n)
    pq = _pair(idx[:, None], idx[None, :])
    i, j = pq[:, :, None, None], pq[None, None, :, :]
    return packed[_pair(i, j)]


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """One- and two-electron integrals plus a constant energy shift.

    Instances are immutable; all arrays are flagged read-only.
    """

    n_orb: int
    h: np.ndarray
    v: np.ndarray  # 8-fold packed (pq|rs)
    e_core: float = 0.0
    n_alpha: int = 0
    n_beta: int = 0
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n_orb)
        h = np.array(self.h, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64).ravel()
        if h.shape != (n, n):
            raise ValueError(f"h must be {n}x{n}, got {h.shape}")
        npair = n * (n + 1) // 2
        if v.size != npair * (npair + 1) // 2:
            raise ValueError("packed two-electron array has the wrong length")
        if not (0 <= self.n_alpha <= n and 0 <= self.n_beta <= n):
            raise ValueError("electron counts must lie in [0, n_orb]")
        if not np.allclose(h, h.T, atol=1e-12, rtol=0):
            raise ValueError("one-electron integrals must be symmetric")
        h = 0.5 * (h + h.T)
        h.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "n_orb", n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "e_core", float(self.e_core))
        object.__setattr__(self, "n_alpha", int(self.n_alpha))
        object.__setattr__(self, "n_beta", int(self.n_beta))

    @classmethod
    def from_dense(cls, h, eri, e_core=0.0, n_alpha=0, n_beta=0) -> "IntegralSet":
        eri = np.asarray(eri, dtype=np.float64)
        n = eri.shape[0]
        obj = cls(n, h, pack_eri(eri), e_core, n_alpha, n_beta)
        return obj

    @property
    def eri(self) -> np.ndarray:
        """Dense ``(pq|rs)`` tensor (cached, read-only)."""
        dense = self._dense.get("eri")
        if dense is None:
            dense = np.ascontiguousarray(unpack_eri(self.v, self.n_orb))
            dense.flags.writeable = False
            self._dense["eri"] = dense
        return dense

    @property
    def n_elec(self) -> int:
        return self.n_alpha + self.n_beta

    def with_electrons(self, n_alpha: int, n_beta: int) -> "IntegralSet":
        return IntegralSet(self.n_orb, self.h, self.v, self.e_core, n_alpha, n_beta)

    def digest(self) -> str:
        """Stable content hash, used to tie checkpoints to their Hamiltonian."""
        m = hashlib.sha256()
        m.update(np.int64([self.n_orb, self.n_alpha, self.n_beta]).tobytes())
        m.update(np.float64([self.e_core]).tobytes())
        m.update(self.h.tobytes())
        m.update(self.v.tobytes())
        return m.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, IntegralSet):
            return NotImplemented
        return (
            self.n_orb == other.n_orb
            and self.n_alpha == other.n_alpha
            and self.n_beta == other.n_beta
            and self.e_core == other.e_core
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.v, other.v)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# FCIDUMP

_HEADER_KEY = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)(?=(?:,?\s*[A-Za-z_][A-Za-z0-9_]*\s*=)|$)")


def _parse_header(text: str) -> dict:
    body = text.strip()
    body = re.sub(r"^&\s*FCI", "", body, flags=re.IGNORECASE)
    body = re.sub(r"(&END|/)\s*$", "", body.strip(), flags=re.IGNORECASE)
    values = {}
    for key, raw in _HEADER_KEY.findall(body.replace("\n", " ")):
        values[key.upper()] = raw.strip().rstrip(",").strip()
    return values


def read_fcidump(path) -> IntegralSet:
    """Read a Molpro-style FCIDUMP file.

    Indices in the file are 1-based; the ``0 0 0 0`` record is the core
    energy and single-index records (orbital energies) are ignored.
    Conflicting duplicate entries are reported and the last one wins.
    """
    lines = Path(path).read_text().splitlines()
    header_lines = []
    pos = 0
    for pos, line in enumerate(lines):
        header_lines.append(line)
        if re.search(r"(&END|^\s*/\s*$|/\s*$)", line, flags=re.IGNORECASE):
            break
    else:
        raise FcidumpError("FCIDUMP header is not terminated by &END or /")
    header = _parse_header("\n".join(header_lines))
    try:
        norb = int(header["NORB"])
        nelec = int(header["NELEC"])
        ms2 = int(header.get("MS2", "0") or 0)
    except (KeyError, ValueError) as exc:
        raise FcidumpError(f"malformed FCIDUMP header: {header}") from exc
    if norb <= 0 or nelec < 0 or (nelec + ms2) % 2:
        raise FcidumpError(f"inconsistent header NORB={norb} NELEC={nelec} MS2={ms2}")

    h = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    e_core = 0.0
    seen: dict[tuple, float] = {}
    for lineno, line in enumerate(lines[pos + 1:], start=pos + 2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FcidumpError(f"line {lineno}: expected 'value i j k l', got {line!r}")
        try:
            val = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError as exc:
            raise FcidumpError(f"line {lineno}: cannot parse {line!r}") from exc
        if min(i, j, k, l) < 0 or max(i, j, k, l) > norb:
            raise FcidumpError(f"line {lineno}: index out of range in {line!r}")
        if i == j == k == l == 0:
            key = ("core",)
        elif k == 0 and l == 0 and j == 0:
            continue
        elif k == 0 and l == 0:
            key = ("h", max(i, j), min(i, j))
        elif 0 in (i, j, k, l):
            raise FcidumpError(f"line {lineno}: invalid index pattern in {line!r}")
        else:
            a, b = _pair(i - 1, j - 1), _pair(k - 1, l - 1)
            key = ("v", max(a, b), min(a, b))
        old = seen.get(key)
        if old is not None and old != val:
            logger.warning("FCIDUMP line %d: duplicate entry %s (%r replaces %r)", lineno, key, val, old)
        seen[key] = val
        if key[0] == "core":
            e_core = val
        elif key[0] == "h":
            h[i - 1, j - 1] = h[j - 1, i - 1] = val
        else:
            p, q, r, s = i - 1, j - 1, k - 1, l - 1
            for a, b, c, d in ((p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r)):
                eri[a, b, c, d] = eri[c, d, a, b] = val
    return IntegralSet.from_dense(h, eri, e_core, (nelec + ms2) // 2, (nelec - ms2) // 2)


def write_fcidump(ints: IntegralSet, path, tol: float = 1e-15) -> None:
    """Write integrals in FCIDUMP format (unique 8-fold entries only)."""
    n = ints.n_orb
    eri = ints.eri
    out = [
        f" &FCI NORB={n},NELEC={ints.n_elec},MS2={ints.n_alpha - ints.n_beta},",
        "  ORBSYM=" + ",".join("1" for _ in range(n)) + ",",
        "  ISYM=1,",
        " &END",
    ]
    for i in range(n):
        for j in range(i + 1):
            ij = _pair(i, j)
            for k in range(n):
                for l in range(k + 1):
                    if _pair(k, l) > ij:
                        continue
                    val = eri[i, j, k, l]
                    if abs(val) > tol:
                        out.append(f"{val: .16e} {i + 1:4d} {j + 1:4d} {k + 1:4d} {l + 1:4d}")
    for i in range(n):
        for j in range(i + 1):
            if abs(ints.h[i, j]) > tol:
                out.append(f"{ints.h[i, j]: .16e} {i + 1:4d} {j + 1:4d}    0    0")
    out.append(f"{ints.e_core: .16e}    0    0    0    0")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Hubbard on a graph

@dataclass(frozen=True)
class GraphModelSpec:
    """Open chain Hubbard model with alpha-scaled random long-range hopping.

    ``U`` is expressed in units of ``t``.
    """

    L: int
    t: float = 1.0
    U: float = 4.0
    alpha: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be at least 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def hopping_ratios(self) -> dict[tuple[int, int], float]:
        """Random ``r_ij`` for every non-nearest-neighbour pair, row-major over i<j."""
        pairs = [(i, j) for i in range(self.L) for j in range(i + 2, self.L)]
        rng = np.random.default_rng(self.seed)
        draws = rng.uniform(0.5, 1.5, size=len(pairs))
        return dict(zip(pairs, draws))


def build_hubbard_graph(spec: GraphModelSpec, n_alpha: int | None = None,
                        n_beta: int | None = None) -> IntegralSet:
    L, t = spec.L, spec.t
    h = np.zeros((L, L))
    for i in range(L - 1):
        h[i, i + 1] = h[i + 1, i] = -t
    for (i, j), r in spec.hopping_ratios().items():
        h[i, j] = h[j, i] = -spec.alpha * t * r
    eri = np.zeros((L, L, L, L))
    for i in range(L):
        eri[i, i, i, i] = spec.U * t
    na = L // 2 if n_alpha is None else n_alpha
    nb = L // 2 if n_beta is None else n_beta
    return IntegralSet.from_dense(h, eri, 0.0, na, nb)


# ---------------------------------------------------------------------------
# rotations

def check_orthogonal(u: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError("rotation must be a square matrix")
    err = np.max(np.abs(u.T @ u - np.eye(u.shape[0])))
    if err > tol:
        raise ValueError(f"rotation is not orthogonal (max |U^T U - I| = {err:.3e})")
    return u


def transform_eri(eri: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Four one-index contractions: sum_abcd u_ap u_bq u_cr u_ds (ab|cd)."""
    out = np.tensordot(eri, u, axes=([3], [0]))            # abc s
    out = np.tensordot(out, u, axes=([2], [0]))            # ab s r
    out = np.tensordot(out, u, axes=([1], [0]))            # a s r q
    out = np.tensordot(out, u, axes=([0], [0]))            # s r q p
    return np.ascontiguousarray(out.transpose(3, 2, 1, 0))


def rotate_integrals(ints: IntegralSet, u: np.ndarray) -> IntegralSet:
    """Return integrals in the rotated orbital basis ``phi'_p = sum_q u_qp phi_q``."""
    u = check_orthogonal(u)
    if u.shape[0] != ints.n_orb:
        raise ValueError("rotation size does not match the orbital count")
    h = u.T @ ints.h @ u
    eri = transform_eri(ints.eri, u)
    return IntegralSet.from_dense(h, eri, ints.e_core, ints.n_alpha, ints.n_beta)
