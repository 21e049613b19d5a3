"""TrimCI core search and the three-phase TrimCI + COO workflow.

A TrimCI run grows a small determinant core from random starts by
alternating heat-bath expansion with two trim passes (randomized local
blocks, then a global diagonalization).  Phase 0 wraps best-of-N TrimCI runs
in an orbital-optimization loop; :func:`phase_expand` grows the space round by
round with optional per-round orbital refinement (Phase 1) or frozen orbitals
and PT2 (Phase 2).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from . import _kernels as K
from .coo import CooConfig, Kappa, bfgs_orbital_opt
from .detspace import (DetSet, Wavefunction, _unique_rows, dets_to_array, fci_space,
                       hf_determinant, random_determinants)
from .eigen import (DavidsonConfig, build_connection_cache, davidson_lowest,
                    dense_ground_state, dense_hamiltonian)
from .hamio import GraphModelSpec, IntegralSet, build_hubbard_graph, rotate_integrals
from .obsrv import CenterMap, spin_pattern

logger = logging.getLogger(__name__)

__all__ = [
    "Phase0Config",
    "PhaseGrowthConfig",
    "CoreResult",
    "Phase0Result",
    "CycleRecord",
    "ScanRow",
    "trimci_run",
    "phase0",
    "phase_expand",
    "topology_scan",
    "loglog_crossing",
    "TrimCI",
]

THETA_FLOOR = 1e-12
DENSE_SOLVE = 256


@dataclass
class Phase0Config:
    num_runs: int = 64
    cycles: int = 10
    max_final_dets: int = 100
    initial_hf: int = 1
    initial_random: int = 10000
    first_cycle_keep_size: int = 10
    threshold: float = 1e-2
    pool_core_ratio: float = 40.0
    core_set_ratio: tuple[float, float] = (1.0, 1.1)
    num_groups: int = 20
    local_trim_keep_ratio: float = 4.0
    max_rounds: int = 4
    seed: int = 0
    orbital_optimization: bool = True
    tracking_dets: bool = False
    loaded_dets_randomness: float = 0.0
    basin: str | None = None
    davidson_tol: float = 1e-8

    def __post_init__(self):
        for name in ("num_runs", "cycles", "max_final_dets", "first_cycle_keep_size",
                     "num_groups", "max_rounds"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.initial_hf not in (0, 1) or self.initial_random < 0:
            raise ValueError("initial_hf must be 0 or 1 and initial_random non-negative")
        if self.initial_hf + self.initial_random < 1:
            raise ValueError("need at least one initial determinant")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.pool_core_ratio < 1 or self.local_trim_keep_ratio <= 0:
            raise ValueError("pool_core_ratio must be >= 1 and local_trim_keep_ratio positive")
        lo, hi = self.core_set_ratio
        if not 1.0 <= lo <= hi:
            raise ValueError("core_set_ratio must satisfy 1 <= low <= high")
        if not 0 <= self.loaded_dets_randomness <= 1:
            raise ValueError("loaded_dets_randomness must lie in [0, 1]")


@dataclass
class PhaseGrowthConfig:
    max_n_dets: int = 1_000_000
    growth_factor: float = 1.1
    orbital_optimization: bool = True
    orbital_opt_max_iter: int = 50
    use_connection_cache: bool = True
    energy_tol: float = 1e-4
    pt2_correction: bool = False
    threshold: float = 1e-2
    expand_pool_ratio: float = 2.0
    max_rounds: int = 1000
    monotonic_tol: float = 1e-8
    residual_tol: float = 1e-7

    def __post_init__(self):
        if self.max_n_dets < 1:
            raise ValueError("max_n_dets must be at least 1")
        if self.growth_factor < 1:
            raise ValueError("growth_factor must be >= 1")
        if not self.energy_tol > 0 or not self.threshold > 0:
            raise ValueError("energy_tol and threshold must be positive")
        if self.expand_pool_ratio < 1:
            raise ValueError("expand_pool_ratio must be >= 1")

    @classmethod
    def phase1(cls, **kw) -> "PhaseGrowthConfig":
        return cls(**kw)

    @classmethod
    def phase2(cls, **kw) -> "PhaseGrowthConfig":
        base = dict(max_n_dets=100_000_000, growth_factor=2.0, orbital_optimization=False,
                    use_connection_cache=False, energy_tol=1e-5, pt2_correction=True)
        base.update(kw)
        return cls(**base)


@dataclass
class CoreResult:
    wavefunction: Wavefunction
    energy: float
    index: int = 0
    basin: str = ""
    pt2: float | None = None
    integrals: IntegralSet | None = field(default=None, repr=False, compare=False)
    rotation: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_det(self) -> int:
        return self.wavefunction.n_det

    @property
    def space(self) -> DetSet:
        return self.wavefunction.space

    @property
    def coeffs(self) -> np.ndarray:
        return self.wavefunction.coeffs

    def reevaluate(self, ints: IntegralSet, tol: float = 1e-10) -> "CoreResult":
        """Re-diagonalize the same determinant set under other integrals."""
        e, c = _solve(self.space, ints, tol)
        w = Wavefunction(self.space, c, normalize=True)
        return CoreResult(w, _rayleigh(w, ints), self.index, _basin(w), None, ints)


def _basin(w: Wavefunction) -> str:
    return spin_pattern(w, CenterMap.sites(w.n_orb))


def _rayleigh(w: Wavefunction, ints: IntegralSet) -> float:
    return w.energy(ints)


# ---------------------------------------------------------------------------
# linear algebra helpers

def _solve(space: DetSet, ints: IntegralSet, tol: float, warm: np.ndarray | None = None,
           energy_tol: float | None = None, use_cache: bool = True):
    """Lowest eigenpair on ``space``; dense below a few hundred determinants."""
    m = len(space)
    if m <= DENSE_SOLVE:
        h = dense_hamiltonian(space, ints)
        w, v = scipy.linalg.eigh(h, subset_by_index=[0, 0])
        c = v[:, 0]
        return float(w[0]), -c if c[np.argmax(np.abs(c))] < 0 else c
    cfg = DavidsonConfig(energy_tol=energy_tol or 1e-12, residual_tol=tol, warm_start=warm)
    cache = build_connection_cache(space, ints) if use_cache else None
    res = davidson_lowest(space, ints, cfg, cache=cache)
    return res.energy, res.coeffs


def _top_rows(c: np.ndarray, k: int) -> np.ndarray:
    """k largest |c|, ties broken by canonical row order."""
    order = np.lexsort((np.arange(len(c)), -np.abs(c)))
    return order[:k]


def _pad(old: DetSet, coeffs: np.ndarray, new: DetSet) -> np.ndarray:
    v = np.zeros(len(new))
    rows = new.lookup(old.dets)
    ok = rows >= 0
    v[rows[ok]] = coeffs[ok]
    return v


def _space_size(ints: IntegralSet) -> int:
    return comb(ints.n_orb, ints.n_alpha) * comb(ints.n_orb, ints.n_beta)


def _empty(n_orb: int) -> DetSet:
    return DetSet(np.zeros((0, 4), np.uint64), n_orb, _sorted=True)


# ---------------------------------------------------------------------------
# expansion

def _group_rows(ext: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique rows in canonical order plus the inverse map."""
    order = np.lexsort((ext[:, 3], ext[:, 2], ext[:, 1], ext[:, 0]))
    srt = ext[order]
    head = np.ones(len(srt), bool)
    head[1:] = np.any(srt[1:] != srt[:-1], axis=1)
    ids = np.cumsum(head) - 1
    inv = np.empty(len(ext), np.int64)
    inv[order] = ids
    return np.ascontiguousarray(srt[head]), inv


def _couplings(src: DetSet, coeffs: np.ndarray, exclude: np.ndarray, theta: float,
               ints: IntegralSet):
    n = ints.n_orb
    cap = max(1, K.excitation_capacity(n, ints.n_alpha, ints.n_beta))
    ext, _, val = K.screened_connections(src.dets, np.ascontiguousarray(coeffs), exclude, theta,
                                         ints.h, ints.eri, ints.e_core, n, cap)
    if not len(ext):
        return ext, np.zeros(0), np.zeros(0)
    uniq, inv = _group_rows(ext)
    importance = np.zeros(len(uniq))
    np.maximum.at(importance, inv, np.abs(val))
    num = np.bincount(inv, weights=val, minlength=len(uniq))
    return uniq, importance, num


def _build_pool(w: Wavefunction, energy: float, ints: IntegralSet, target: int, theta0: float,
                max_hops: int) -> tuple[np.ndarray, float]:
    """Heat-bath pool of up to ``target`` external determinants.

    Each hop screens ``|H_aj c_j| > theta`` from the current frontier.  The
    first frontier is the core; later ones are the core-sized set of new
    determinants with the largest first-order amplitudes.  If ``max_hops``
    hops underfill the pool, theta is halved and the hops are repeated,
    keeping what was already found.
    """
    n = w.n_orb
    room = _space_size(ints) - w.n_det
    target = min(target, room)
    empty = np.zeros((0, 4), np.uint64)
    if target <= 0:
        return empty, theta0
    theta = theta0
    pool, imp = empty, np.zeros(0)
    while True:
        front, fc = w.space, w.coeffs
        for _ in range(max_hops):
            exclude, _ = _unique_rows(np.vstack([w.space.dets, pool]))
            ext, importance, num = _couplings(front, fc, exclude, theta, ints)
            if not len(ext):
                break
            pool = np.vstack([pool, ext])
            imp = np.concatenate([imp, importance])
            if len(pool) >= target:
                break
            den = energy - K.diagonal(ext, ints.h, ints.eri, ints.e_core, n)
            den = np.where(np.abs(den) < 1e-8, np.copysign(1e-8, den), den)
            amp = num / den
            keep = np.sort(_top_rows(amp, w.n_det))
            front = DetSet(ext[keep], n, _sorted=True)
            fc = amp[keep]
        if len(pool) >= target or theta / 2 < THETA_FLOOR:
            break
        theta /= 2
    if len(pool) > target:
        _, rank = _group_rows(pool)  # canonical rank breaks importance ties
        pool = pool[np.lexsort((rank, -imp))[:target]]
    pool, _ = _unique_rows(pool)
    return pool, theta


# ---------------------------------------------------------------------------
# trimming

def _trim(core: DetSet | None, pool: np.ndarray, budget: int, ints: IntegralSet,
          cfg: Phase0Config, rng: np.random.Generator, tol: float) -> tuple[DetSet, float, np.ndarray]:
    n = ints.n_orb
    core_arr = core.dets if core is not None else np.zeros((0, 4), np.uint64)
    pool = np.asarray(pool, np.uint64).reshape(-1, 4)
    survivors = pool
    keep_total = int(math.ceil(cfg.local_trim_keep_ratio * budget))
    if len(pool) > keep_total and cfg.num_groups > 1:
        perm = rng.permutation(len(pool))
        blocks = np.array_split(perm, min(cfg.num_groups, len(pool)))
        per_block = int(math.ceil(keep_total / len(blocks)))
        picked = []
        for blk in blocks:
            sub = DetSet.from_array(np.vstack([core_arr, pool[blk]]), n, dedupe=True)
            _, c = _solve(sub, ints, 1e-5)
            is_core = sub.lookup(core_arr) if len(core_arr) else np.zeros(0, np.int64)
            mask = np.ones(len(sub), bool)
            mask[is_core[is_core >= 0]] = False
            cand = np.flatnonzero(mask)
            best = cand[_top_rows(c[cand], per_block)]
            picked.append(sub.dets[best])
        survivors = np.vstack(picked)
    space = DetSet.from_array(np.vstack([core_arr, survivors]), n, dedupe=True)
    e, c = _solve(space, ints, tol)
    if len(space) > budget:
        space = space.subset(_top_rows(c, budget))
        e, c = _solve(space, ints, tol)
    return space, e, c


def _initial_dets(ints: IntegralSet, cfg: Phase0Config, rng) -> np.ndarray:
    n, na, nb = ints.n_orb, ints.n_alpha, ints.n_beta
    dets = []
    if cfg.initial_hf:
        dets.append(hf_determinant(n, na, nb))
    dets.extend(random_determinants(n, na, nb, cfg.initial_random, rng))
    arr, _ = _unique_rows(dets_to_array(dets))
    return arr


def trimci_run(ints: IntegralSet, cfg: Phase0Config | None = None, seed=None,
               initial: np.ndarray | None = None) -> CoreResult:
    """One TrimCI core search from random (or supplied) starting determinants."""
    cfg = cfg or Phase0Config()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n = ints.n_orb
    total = _space_size(ints)
    init = _initial_dets(ints, cfg, rng) if initial is None else np.asarray(initial, np.uint64)
    if not len(init):
        raise ValueError("no initial determinants")
    tol = cfg.davidson_tol
    first = min(cfg.first_cycle_keep_size, cfg.max_final_dets)
    space, e, c = _trim(None, init, first, ints, cfg, rng, tol)
    lo, hi = cfg.core_set_ratio
    it = 0
    while len(space) < min(cfg.max_final_dets, total):
        prev = len(space)
        budget = min(cfg.max_final_dets, total, max(prev + 1, int(math.ceil(prev * rng.uniform(lo, hi)))))
        w = Wavefunction(space, c, normalize=True)
        pool, _ = _build_pool(w, e, ints, int(cfg.pool_core_ratio * prev), cfg.threshold,
                              cfg.max_rounds)
        if not len(pool):
            logger.info("heat-bath pool empty at theta floor; stopping at %d dets", prev)
            break
        space, e, c = _trim(space, pool, budget, ints, cfg, rng, tol)
        it += 1
    w = Wavefunction(space, c, normalize=True)
    return CoreResult(w, _rayleigh(w, ints), it, _basin(w), None, ints)


# ---------------------------------------------------------------------------
# Phase 0

@dataclass
class CycleRecord:
    cycle: int
    e_ci: float
    e_opt: float
    n_det: int
    basin: str
    run_energies: list[float]
    rotation: np.ndarray = field(repr=False)
    bfgs_history: list[float] = field(default_factory=list, repr=False)
    bfgs_deltas: list[float] = field(default_factory=list, repr=False)


@dataclass
class Phase0Result:
    core: CoreResult
    kappa: Kappa
    integrals: IntegralSet = field(repr=False)
    rotation: np.ndarray = field(repr=False)
    cycles: list[CycleRecord] = field(default_factory=list)
    best_cycle: int = 0

    def __iter__(self):
        yield self.core
        yield self.kappa
        yield self.integrals

    @property
    def energy(self) -> float:
        return self.core.energy


def _select(runs: list[CoreResult], basin: str | None) -> CoreResult:
    pool = runs
    if basin is not None:
        match = [r for r in runs if r.basin == basin]
        if match:
            pool = match
        else:
            logger.warning("no run landed in basin %s; keeping the overall best", basin)
    return min(pool, key=lambda r: r.energy)


def _tracked(prev: CoreResult, ints: IntegralSet, cfg: Phase0Config, rng) -> np.ndarray:
    dets = prev.space.dets
    k = int(round(cfg.loaded_dets_randomness * len(dets)))
    if k:
        drop = rng.choice(len(dets), size=k, replace=False)
        dets = np.delete(dets, drop, axis=0)
        fresh = dets_to_array(random_determinants(ints.n_orb, ints.n_alpha, ints.n_beta, k, rng))
        dets = np.vstack([dets, fresh])
    arr, _ = _unique_rows(dets)
    return arr


def phase0(ints: IntegralSet, cfg: Phase0Config | None = None,
           coo_cfg: CooConfig | None = None) -> Phase0Result:
    """Best-of-N TrimCI runs alternating with BFGS orbital optimization."""
    cfg = cfg or Phase0Config()
    coo_cfg = coo_cfg or CooConfig()
    n = ints.n_orb
    cur = ints
    u_cum = np.eye(n)
    records: list[CycleRecord] = []
    best: tuple[float, CoreResult, IntegralSet, np.ndarray, int] | None = None
    prev = None
    for cyc in range(cfg.cycles):
        runs = []
        for r in range(cfg.num_runs):
            ss = np.random.SeedSequence([cfg.seed, cyc, r])
            rng = np.random.default_rng(ss)
            init = _tracked(prev, cur, cfg, rng) if (cfg.tracking_dets and prev is not None) else None
            runs.append(trimci_run(cur, cfg, rng, initial=init))
        pick = _select(runs, cfg.basin)
        e_ci = pick.energy
        hist, deltas = [], []
        if cfg.orbital_optimization:
            res = bfgs_orbital_opt(pick.space, cur, coo_cfg, coeffs=pick.coeffs)
            hist, deltas = res.history, res.deltas
            u_cum = u_cum @ res.rotation
            cur = res.integrals
            w = Wavefunction(pick.space, res.coeffs, normalize=True)
            pick = CoreResult(w, _rayleigh(w, cur), cyc, _basin(w), None, cur, u_cum.copy())
        else:
            pick = replace(pick, index=cyc, integrals=cur, rotation=u_cum.copy())
        records.append(CycleRecord(cyc, e_ci, pick.energy, pick.n_det, pick.basin,
                                   [r.energy for r in runs], u_cum.copy(), hist, deltas))
        logger.info("phase0 cycle %d: E_ci=%.10f E_opt=%.10f", cyc, e_ci, pick.energy)
        if best is None or pick.energy < best[0]:
            best = (pick.energy, pick, cur, u_cum.copy(), cyc)
        prev = pick
    _, core, ints_best, u_best, cyc_best = best
    try:
        kap = Kappa.from_rotation(u_best)
    except ValueError:
        kap = Kappa.zeros(n)
    return Phase0Result(core, kap, ints_best, u_best, records, cyc_best)


# ---------------------------------------------------------------------------
# Phase 1 / 2

def phase_expand(start: CoreResult, ints: IntegralSet, cfg: PhaseGrowthConfig | None = None,
                 coo_cfg: CooConfig | None = None, pt2_cfg=None,
                 stop_energy: float | None = None) -> list[CoreResult]:
    """Grow the determinant space round by round; one :class:`CoreResult` per round.

    ``ints`` must be in the basis of ``start``.  Rounds stop at
    ``max_n_dets``, at the full space, after ``max_rounds``, or once the
    energy drops to ``stop_energy``.
    """
    from .analysis import Pt2Config, pt2_correction

    cfg = cfg or PhaseGrowthConfig()
    if start.n_det == 0:
        raise ValueError("start core is empty")
    n = ints.n_orb
    total = _space_size(ints)
    cap = min(cfg.max_n_dets, total)
    cur = ints
    u_cum = np.eye(n)
    space, c = start.space, start.coeffs
    e = _rayleigh(start.wavefunction, cur)
    traj: list[CoreResult] = []
    tol = cfg.residual_tol
    for rnd in range(1, cfg.max_rounds + 1):
        size = len(space)
        budget = min(cap, max(size, int(math.ceil(size * cfg.growth_factor - 1e-9))))
        if budget > size:
            w = Wavefunction(space, c, normalize=True)
            want = int(math.ceil(cfg.expand_pool_ratio * (budget - size)))
            pool, _ = _build_pool(w, e, cur, want, cfg.threshold, 1)
            cand = space.union(pool) if len(pool) else space
            e_c, c_c = _solve(cand, cur, tol, _pad(space, c, cand), cfg.energy_tol,
                              cfg.use_connection_cache)
            new = cand.subset(_top_rows(c_c, budget)) if len(cand) > budget else cand
            e_n, c_n = _solve(new, cur, tol, _pad(cand, c_c, new), cfg.energy_tol,
                              cfg.use_connection_cache)
            if e_n > e + cfg.monotonic_tol:
                # keep the previous core and add the best new determinants
                old = cand.lookup(space.dets)
                is_new = np.ones(len(cand), bool)
                is_new[old] = False
                fresh = np.flatnonzero(is_new)
                add = fresh[_top_rows(c_c[fresh], budget - size)]
                new = cand.subset(np.concatenate([old, add]))
                e_n, c_n = _solve(new, cur, tol, _pad(space, c, new), cfg.energy_tol,
                                  cfg.use_connection_cache)
                logger.info("round %d: trim raised the energy; kept the previous core", rnd)
            space, c, e = new, c_n, e_n
        if cfg.orbital_optimization:
            ocfg = replace(coo_cfg or CooConfig(), maxiter=cfg.orbital_opt_max_iter,
                           use_connection_cache=cfg.use_connection_cache)
            res = bfgs_orbital_opt(space, cur, ocfg, coeffs=c)
            cur = res.integrals
            u_cum = u_cum @ res.rotation
            c, e = res.coeffs, res.energy
        w = Wavefunction(space, c, normalize=True)
        e = _rayleigh(w, cur)
        p2 = None
        if cfg.pt2_correction:
            p2 = pt2_correction(w, cur, pt2_cfg or Pt2Config(), e_var=e).delta_e
        traj.append(CoreResult(w, e, rnd, _basin(w), p2, cur, u_cum.copy()))
        logger.info("round %d: N=%d E=%.10f", rnd, len(space), e)
        if stop_energy is not None and e <= stop_energy:
            break
        if len(space) >= cap:
            break
        if budget == size and not cfg.orbital_optimization:
            break
    return traj


# ---------------------------------------------------------------------------
# topology scan

def loglog_crossing(points, target: float) -> float:
    """First N where dE(N) <= target, log-log interpolated; inf if never."""
    pts = sorted((float(a), float(b)) for a, b in points)
    if not target > 0:
        raise ValueError("target must be positive")
    for k, (nk, dk) in enumerate(pts):
        if dk <= target:
            if k == 0:
                return nk
            n0, d0 = pts[k - 1]
            if dk <= 0:
                f = (d0 - target) / (d0 - dk)
            else:
                f = (math.log(d0) - math.log(target)) / (math.log(d0) - math.log(dk))
            return float(math.exp(math.log(n0) + f * (math.log(nk) - math.log(n0))))
    return math.inf


@dataclass
class ScanRow:
    alpha: float
    seed: int
    e_fci: float
    n_coo: float
    n_nocoo: float
    trajectory_coo: list[tuple[int, float]] = field(repr=False, default_factory=list)
    trajectory_nocoo: list[tuple[int, float]] = field(repr=False, default_factory=list)

    @property
    def ratio(self) -> float:
        if math.isinf(self.n_coo):
            return math.nan
        return self.n_nocoo / self.n_coo

    @property
    def censored(self) -> tuple[bool, bool]:
        return math.isinf(self.n_coo), math.isinf(self.n_nocoo)


def _trajectory(ints, p0cfg, gcfg, coo_cfg, stop):
    p0 = phase0(ints, p0cfg, coo_cfg)
    traj = [p0.core] + phase_expand(p0.core, p0.integrals, gcfg, coo_cfg, stop_energy=stop)
    return [(r.n_det, r.energy) for r in traj]


def topology_scan(L: int, U: float, alphas, seeds, accuracy_target: float = 0.1, t: float = 1.0,
                  phase0_cfg: Phase0Config | None = None,
                  growth_cfg: PhaseGrowthConfig | None = None,
                  coo_cfg: CooConfig | None = None, model_seed: int = 0) -> list[ScanRow]:
    """N_det needed to reach ``accuracy_target * t`` with and without COO."""
    if not accuracy_target > 0:
        raise ValueError("accuracy_target must be positive")
    p0cfg = phase0_cfg or Phase0Config()
    gcfg = growth_cfg or PhaseGrowthConfig(max_n_dets=4000)
    rows = []
    for alpha in alphas:
        ints = build_hubbard_graph(GraphModelSpec(L=L, t=t, U=U, alpha=alpha, seed=model_seed))
        e_fci, _ = dense_ground_state(fci_space(L, ints.n_alpha, ints.n_beta), ints)
        target = accuracy_target * t
        for s in seeds:
            out = {}
            for label, opt in (("coo", True), ("nocoo", False)):
                traj = _trajectory(ints, replace(p0cfg, seed=s, orbital_optimization=opt),
                                   replace(gcfg, orbital_optimization=opt), coo_cfg,
                                   e_fci + 0.5 * target)
                out[label] = [(n_, e_ - e_fci) for n_, e_ in traj]
            rows.append(ScanRow(float(alpha), int(s), e_fci,
                                loglog_crossing(out["coo"], target),
                                loglog_crossing(out["nocoo"], target),
                                out["coo"], out["nocoo"]))
            logger.info("alpha=%.2f seed=%d N_coo=%.1f N_nocoo=%.1f", alpha, s,
                        rows[-1].n_coo, rows[-1].n_nocoo)
    return rows


class TrimCI(BaseEstimator):
    """Estimator facade: ``fit(ints)`` runs Phase 0 (optionally without COO)."""

    def __init__(self, num_runs: int = 64, cycles: int = 10, max_final_dets: int = 100,
                 threshold: float = 1e-2, orbital_optimization: bool = True, seed: int = 0):
        self.num_runs = num_runs
        self.cycles = cycles
        self.max_final_dets = max_final_dets
        self.threshold = threshold
        self.orbital_optimization = orbital_optimization
        self.seed = seed

    def fit(self, ints: IntegralSet, y=None):
        cfg = Phase0Config(num_runs=self.num_runs, cycles=self.cycles,
                           max_final_dets=self.max_final_dets, threshold=self.threshold,
                           orbital_optimization=self.orbital_optimization, seed=self.seed)
        res = phase0(ints, cfg)
        self.result_ = res
        self.core_ = res.core
        self.energy_ = res.core.energy
        self.integrals_ = res.integrals
        return self

    def score(self, ints: IntegralSet, y=None) -> float:
        """Negative variational energy (higher is better)."""
        return -self.energy_
