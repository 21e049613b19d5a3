"""Channel census, mini-task/bundle packing and bundle execution.

Every destination row ``i`` owns one A channel (sources: its own alpha group,
beta strings differing), one B channel (sources: its own beta group) and one
M channel per alpha group adjacent to its own.  Channels of one type are
packed greedily into mini-tasks of at most ``C`` channels, and mini-tasks into
bundles of at most ``B``.  A bundle carries a manifest of the input slices it
reads, so executing it needs nothing else but the integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .. import _kernels as K
from ..detspace import DetSet
from ..hamio import IntegralSet

CT_A, CT_B, CT_M = K.CT_A, K.CT_B, K.CT_M
TYPE_NAMES = {CT_A: "A", CT_B: "B", CT_M: "M"}

# manifest slice kinds: source rows in canonical order, source rows in beta
# order, destination rows (determinants only)
ROW, BETA, DEST = "row", "beta", "dest"


@dataclass
class ChannelCensus:
    """Flat channel arrays in stream order (A block, B block, M block).

    ``row`` is the destination row, ``group`` the source group (alpha group for
    A and M, beta group for B) and ``home`` the destination's own alpha group.
    """

    ctype: np.ndarray
    row: np.ndarray
    group: np.ndarray
    home: np.ndarray
    n_det: int
    cbar: float

    def __len__(self) -> int:
        return len(self.row)

    def count(self, ctype: int) -> int:
        return int(np.count_nonzero(self.ctype == ctype))

    @property
    def expected_total(self) -> float:
        return self.n_det * (2.0 + self.cbar)

    def pairs(self) -> set[tuple[int, int, int]]:
        return set(zip(self.ctype.tolist(), self.row.tolist(), self.group.tolist()))


def build_channels(space: DetSet, rows: tuple[int, int] | None = None) -> ChannelCensus:
    """Channel census for destination rows ``[r0, r1)`` (all rows by default)."""
    r0, r1 = rows if rows is not None else (0, len(space))
    idx = np.arange(r0, r1, dtype=np.int64)
    a_of = space.alpha_of_row[idx].astype(np.int64)
    b_of = space.beta_of_row[idx].astype(np.int64)
    ptr, adj = space.adj_ptr, space.adj_idx
    deg = (ptr[a_of + 1] - ptr[a_of]).astype(np.int64)
    m_rows = np.repeat(idx, deg)
    m_home = np.repeat(a_of, deg)
    starts = np.repeat(ptr[a_of], deg)
    offs = np.arange(len(m_rows)) - np.repeat(np.cumsum(deg) - deg, deg)
    m_group = adj[starts + offs].astype(np.int64)
    n = len(idx)
    ctype = np.concatenate([np.full(n, CT_A, np.int8), np.full(n, CT_B, np.int8),
                            np.full(len(m_rows), CT_M, np.int8)])
    row = np.concatenate([idx, idx, m_rows])
    group = np.concatenate([a_of, b_of, m_group])
    home = np.concatenate([a_of, a_of, m_home])
    cbar = float(deg.mean()) if n else 0.0
    return ChannelCensus(ctype, row, group, home, n, cbar)


@dataclass
class MiniTask:
    ctype: int
    g: int
    g_prime: int
    rows: np.ndarray
    groups: np.ndarray
    src: np.ndarray | None = None  # per channel: index of its source slice in the manifest

    @property
    def channel_count(self) -> int:
        return len(self.rows)

    def to_json(self) -> dict:
        d = {"ctype": int(self.ctype), "g": int(self.g), "g_prime": int(self.g_prime),
             "rows": self.rows.tolist(), "groups": self.groups.tolist()}
        if self.src is not None:
            d["src"] = self.src.tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "MiniTask":
        src = np.asarray(d["src"], np.int64) if "src" in d else None
        return cls(int(d["ctype"]), int(d["g"]), int(d["g_prime"]),
                   np.asarray(d["rows"], np.int64), np.asarray(d["groups"], np.int64), src)


@dataclass
class Bundle:
    bundle_id: int
    minitasks: list[MiniTask]
    manifest: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def channel_count(self) -> int:
        return sum(m.channel_count for m in self.minitasks)

    def channels(self) -> list[tuple[int, int, int]]:
        out = []
        for m in self.minitasks:
            out.extend((m.ctype, int(r), int(g)) for r, g in zip(m.rows, m.groups))
        return out

    def to_json(self) -> dict:
        return {"bundle_id": self.bundle_id, "minitasks": [m.to_json() for m in self.minitasks],
                "manifest": [list(s) for s in self.manifest]}

    @classmethod
    def from_json(cls, d: dict) -> "Bundle":
        return cls(int(d["bundle_id"]), [MiniTask.from_json(m) for m in d["minitasks"]],
                   [(str(k), int(o), int(n)) for k, o, n in d["manifest"]])


def _source_slice(space: DetSet, ctype: int, group: int) -> tuple[str, int, int]:
    if ctype == CT_B:
        a, b = space.beta_ptr[group], space.beta_ptr[group + 1]
        return BETA, int(a), int(b - a)
    a, b = space.alpha_start[group], space.alpha_start[group + 1]
    return ROW, int(a), int(b - a)


def _dest_runs(rows: np.ndarray) -> list[tuple[str, int, int]]:
    u = np.unique(rows)
    if not len(u):
        return []
    cut = np.flatnonzero(np.diff(u) != 1) + 1
    return [(DEST, int(seg[0]), int(len(seg))) for seg in np.split(u, cut)]


def attach_manifest(bundle: Bundle, space: DetSet) -> Bundle:
    """Fill the manifest and the per-channel source indices of ``bundle``."""
    srcs = set()
    for m in bundle.minitasks:
        for g in np.unique(m.groups):
            srcs.add(_source_slice(space, m.ctype, int(g)))
    srcs = sorted(srcs)
    at = {item: k for k, item in enumerate(srcs)}
    for m in bundle.minitasks:
        m.src = np.array([at[_source_slice(space, m.ctype, int(g))] for g in m.groups], np.int64)
    rows = [m.rows for m in bundle.minitasks]
    bundle.manifest = srcs + (_dest_runs(np.concatenate(rows)) if rows else [])
    return bundle


def pack(census: ChannelCensus, C: int, B: int, space: DetSet | None = None,
         first_id: int = 0) -> list[Bundle]:
    """Greedy packing: mini-tasks never mix types and close when a type ends."""
    if C < 1 or B < 1:
        raise ValueError("C and B must be at least 1")
    tasks: list[MiniTask] = []
    for ct in (CT_A, CT_B, CT_M):
        sel = np.flatnonzero(census.ctype == ct)
        for s in range(0, len(sel), C):
            part = sel[s:s + C]
            rows, groups = census.row[part], census.group[part]
            g = int(census.home[part[0]]) if ct != CT_B else int(groups[0])
            gp = int(groups[0]) if ct == CT_M else -1
            tasks.append(MiniTask(ct, g, gp, rows.copy(), groups.copy()))
    bundles = []
    for k in range(0, len(tasks), B):
        b = Bundle(first_id + len(bundles), tasks[k:k + B])
        bundles.append(attach_manifest(b, space) if space is not None else b)
    return bundles


# ---------------------------------------------------------------------------
# execution

class SliceSource(Protocol):
    def dets(self, kind: str, offset: int, length: int) -> np.ndarray: ...
    def values(self, kind: str, offset: int, length: int) -> np.ndarray: ...


class MissingInput(RuntimeError):
    """A manifest item could not be provided; the bundle must be re-queued."""


class LocalSource:
    """Slices served straight from in-memory arrays."""

    def __init__(self, space: DetSet, v: np.ndarray):
        self.space = space
        self.v = np.asarray(v, dtype=np.float64)
        self._beta_dets = space.dets[space.beta_rows]
        self._beta_v = self.v[space.beta_rows]

    def dets(self, kind, offset, length):
        arr = self._beta_dets if kind == BETA else self.space.dets
        return arr[offset:offset + length]

    def values(self, kind, offset, length):
        arr = self._beta_v if kind == BETA else self.v
        return arr[offset:offset + length]


def execute_bundle(bundle: Bundle, source: SliceSource, ints: IntegralSet,
                   space: DetSet | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Off-diagonal contributions ``(rows, sigma)``, one entry per distinct row.

    Pure in its inputs; values for a row are summed in channel order.
    """
    if not bundle.manifest or any(m.src is None for m in bundle.minitasks):
        if space is None:
            raise MissingInput("bundle has no manifest and no space to derive one")
        attach_manifest(bundle, space)
    man = bundle.manifest
    first: dict[int, int] = {}
    src_d, src_v = [], []
    at = 0
    dest_rows, dest_d = [], []
    for k, item in enumerate(man):
        kind, off, ln = item
        try:
            d = np.asarray(source.dets(kind, off, ln), np.uint64).reshape(-1, 4)
            v = None if kind == DEST else np.asarray(source.values(kind, off, ln), np.float64)
        except (KeyError, OSError, ValueError) as exc:
            raise MissingInput(f"cannot load {item}: {exc}") from exc
        if len(d) != ln or (v is not None and len(v) != ln):
            raise MissingInput(f"short slice for {item}")
        if kind == DEST:
            dest_rows.append(np.arange(off, off + ln))
            dest_d.append(d)
            continue
        first[k] = at
        src_d.append(d)
        src_v.append(v)
        at += ln
    if not dest_rows:
        return np.zeros(0, np.int64), np.zeros(0)
    drow = np.concatenate(dest_rows)
    ddet = np.vstack(dest_d)
    order = np.argsort(drow)
    drow, ddet = drow[order], ddet[order]
    sd = np.ascontiguousarray(np.vstack(src_d)) if src_d else np.zeros((0, 4), np.uint64)
    sv = np.concatenate(src_v) if src_v else np.zeros(0)

    ctypes = np.concatenate([np.full(m.channel_count, m.ctype, np.int64) for m in bundle.minitasks])
    rows = np.concatenate([m.rows for m in bundle.minitasks]).astype(np.int64)
    slots = np.concatenate([m.src for m in bundle.minitasks]).astype(np.int64)
    if np.any(slots < 0) or np.any(slots >= len(man)) or any(man[k][0] == DEST for k in set(slots.tolist())):
        raise MissingInput("channel refers to a missing source slice")
    starts = np.array([first[k] for k in slots.tolist()], np.int64)
    lens = np.array([man[k][2] for k in slots.tolist()], np.int64)
    pos = np.searchsorted(drow, rows)
    if np.any(pos >= len(drow)) or np.any(drow[np.minimum(pos, len(drow) - 1)] != rows):
        raise MissingInput("manifest lacks a destination row")
    vals = K.channel_batch(ctypes, np.ascontiguousarray(ddet[pos]), starts, lens, sd, sv,
                           ints.h, ints.eri, ints.e_core, ints.n_orb)
    uniq, inv = np.unique(rows, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=vals, minlength=len(uniq))


def aggregate(results, n_rows: int, offset: int = 0) -> np.ndarray:
    """Sum ``{bundle_id: (rows, values)}`` in sorted bundle_id order."""
    sigma = np.zeros(n_rows)
    for bid in sorted(results):
        rows, vals = results[bid]
        np.add.at(sigma, np.asarray(rows, np.int64) - offset, vals)
    return sigma


def bundle_matvec(space: DetSet, ints: IntegralSet, v: np.ndarray, C: int = 100, B: int = 7,
                  bundles: list[Bundle] | None = None) -> np.ndarray:
    """H v through the channel -> mini-task -> bundle pipeline plus a diagonal pass."""
    v = np.asarray(v, dtype=np.float64)
    if bundles is None:
        bundles = pack(build_channels(space), C, B, space)
    src = LocalSource(space, v)
    results = {b.bundle_id: execute_bundle(b, src, ints) for b in bundles}
    diag = K.diagonal(space.dets, ints.h, ints.eri, ints.e_core, ints.n_orb)
    return diag * v + aggregate(results, len(space))
