"""Post-processing: Epstein-Nesbet PT2, power-law extrapolation, parameter counts."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.optimize
from sklearn.base import BaseEstimator, RegressorMixin

from . import _kernels as K
from .detspace import Wavefunction, _unique_rows
from .hamio import IntegralSet

logger = logging.getLogger(__name__)

__all__ = [
    "Pt2Config",
    "Pt2Result",
    "pt2_correction",
    "PowerLawFit",
    "powerlaw_fit",
    "PowerLawExtrapolator",
    "crossing_interpolate",
    "mps_param_count",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_fit_json",
]

DENOM_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# PT2

@dataclass
class Pt2Config:
    eps_hc: float = 1e-6
    deterministic_mass: float = 0.99
    adaptive_tighten: float = 0.03
    full_coverage: bool = True
    adaptive: bool = False
    max_tighten_rounds: int = 8
    n_parts: int = 1

    def __post_init__(self):
        if not 0 < self.deterministic_mass <= 1:
            raise ValueError("deterministic_mass must lie in (0, 1]")
        if self.eps_hc < 0:
            raise ValueError("eps_hc must be non-negative")
        if self.adaptive_tighten <= 0:
            raise ValueError("adaptive_tighten must be positive")
        if self.n_parts < 1:
            raise ValueError("n_parts must be at least 1")


@dataclass
class Pt2Result:
    delta_e: float
    eps_hc: float
    e_var: float
    n_external: int
    n_skipped: int
    n_sources: int
    history: list[tuple[float, float]] = field(default_factory=list)

    def __float__(self):
        return self.delta_e

    @property
    def e_total(self) -> float:
        return self.e_var + self.delta_e


def _source_rows(w: Wavefunction, cfg: Pt2Config) -> np.ndarray:
    if cfg.full_coverage:
        return np.arange(w.n_det)
    order = w.top(w.n_det)
    mass = np.cumsum(w.coeffs[order] ** 2) / float(w.coeffs @ w.coeffs)
    k = int(np.searchsorted(mass, cfg.deterministic_mass * (1 - 1e-15))) + 1
    return np.sort(order[:min(k, w.n_det)])


def _pt2_once(w: Wavefunction, ints: IntegralSet, e_var: float, eps: float, rows: np.ndarray,
              n_parts: int):
    # An external a is kept when its strongest coupling max_j |H_aj c_j| >= eps;
    # its numerator then sums every coupling, so tightening only adds terms.
    n, na, nb = ints.n_orb, ints.n_alpha, ints.n_beta
    cap = max(1, K.excitation_capacity(n, na, nb))
    src = np.ascontiguousarray(w.space.dets[rows])
    c = np.ascontiguousarray(w.coeffs[rows])
    total, n_ext, n_skip = 0.0, 0, 0
    for part in range(n_parts):
        ext, _, val = K.screened_connections(src, c, w.space.dets, 0.0, ints.h, ints.eri,
                                             ints.e_core, n, cap, n_parts, part)
        if not len(ext):
            continue
        uniq, inv = np.unique(ext, axis=0, return_inverse=True)
        inv = inv.ravel()
        num = np.bincount(inv, weights=val, minlength=len(uniq))
        strongest = np.zeros(len(uniq))
        np.maximum.at(strongest, inv, np.abs(val))
        keep = strongest >= eps
        uniq, num = uniq[keep], num[keep]
        if not len(uniq):
            continue
        haa = K.diagonal(np.ascontiguousarray(uniq), ints.h, ints.eri, ints.e_core, n)
        den = e_var - haa
        ok = np.abs(den) >= DENOM_FLOOR
        n_skip += int(np.count_nonzero(~ok))
        n_ext += len(uniq)
        total += float(np.sum(num[ok] ** 2 / den[ok]))
    return total, n_ext, n_skip


def pt2_correction(w: Wavefunction, ints: IntegralSet, cfg: Pt2Config | None = None,
                   e_var: float | None = None) -> Pt2Result:
    """Epstein-Nesbet second-order correction over singles and doubles out of ``w``.

    An external determinant enters only if one of its couplings reaches
    ``|H_aj c_j| >= eps_hc``; its numerator then includes every coupling
    from the source dets, so ``|dE|`` never shrinks as ``eps_hc`` is
    tightened.  Terms with a
    vanishing denominator are dropped and counted in ``n_skipped``.
    """
    cfg = cfg or Pt2Config()
    if e_var is None:
        e_var = w.energy(ints)
    rows = _source_rows(w, cfg)
    eps = cfg.eps_hc
    de, n_ext, n_skip = _pt2_once(w, ints, e_var, eps, rows, cfg.n_parts)
    history = [(eps, de)]
    if cfg.adaptive and eps > 0:
        for _ in range(cfg.max_tighten_rounds):
            eps_new = eps / 2
            de_new, n_ext, n_skip = _pt2_once(w, ints, e_var, eps_new, rows, cfg.n_parts)
            history.append((eps_new, de_new))
            change = abs(de_new - de) / max(abs(de_new), 1e-300)
            eps, de = eps_new, de_new
            if change < cfg.adaptive_tighten:
                break
    if n_skip:
        logger.warning("PT2 skipped %d terms with |E_var - H_aa| < %.0e", n_skip, DENOM_FLOOR)
    return Pt2Result(de, eps, e_var, n_ext, n_skip, len(rows), history)


# ---------------------------------------------------------------------------
# power-law extrapolation

@dataclass
class PowerLawFit:
    e_extrap: float
    a: float
    alpha_exp: float
    r2: float
    bootstrap_sigma: float = float("nan")
    ci90: tuple[float, float] = (float("nan"), float("nan"))
    n_points: int = 0
    degenerate: bool = False
    n_bootstrap: int = 0

    def predict(self, n) -> np.ndarray:
        return self.e_extrap + self.a * np.asarray(n, dtype=np.float64) ** (-self.alpha_exp)

    def solve(self, energy: float) -> float:
        """N at which the fitted curve reaches ``energy`` (inf if never)."""
        gap = energy - self.e_extrap
        if gap <= 0 or self.a <= 0 or self.alpha_exp <= 0:
            return math.inf
        return float((self.a / gap) ** (1.0 / self.alpha_exp))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci90"] = list(self.ci90)
        return d


def _r2_batch(x: np.ndarray, e: np.ndarray, cands: np.ndarray, unexplained: bool = False):
    """R^2, slope and intercept of log(E - c) vs x for every candidate c.

    With ``unexplained`` the first value is ss_res/ss_tot instead, which keeps
    full relative precision when R^2 is within rounding of one.
    """
    y = np.log(e[None, :] - cands[:, None])
    xm = x.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    ym = y.mean(axis=1)
    dy = y - ym[:, None]
    slope = dy @ dx / sxx
    inter = ym - slope * xm
    ss_res = np.sum((dy - slope[:, None] * dx[None, :]) ** 2, axis=1)
    ss_tot = np.sum(dy ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(ss_tot > 0, ss_res / ss_tot, 0.0)
    return (frac if unexplained else 1.0 - frac), slope, inter


def _scan(n: np.ndarray, e: np.ndarray, n_candidates: int):
    x = np.log(n)
    e_min, e_max = float(e.min()), float(e.max())
    span = e_max - e_min
    hi = e_min - 1e-9 * max(abs(e_min), 1e-300)
    lo = e_min - 10.0 * span if span > 0 else hi - 1.0
    cands = np.linspace(lo, hi, n_candidates)
    r2, _, _ = _r2_batch(x, e, cands)
    k = int(np.nanargmax(r2))
    step = cands[1] - cands[0] if n_candidates > 1 else 0.0
    a_lo, a_hi = max(lo, cands[k] - step), min(hi, cands[k] + step)
    best = cands[k]
    if a_hi > a_lo:
        # refine in log(E_min - c): Brent's tolerance is then relative to the gap
        f = lambda t: _r2_batch(x, e, np.array([e_min - math.exp(t)]), unexplained=True)[0][0]  # noqa: E731
        opt = scipy.optimize.minimize_scalar(
            f, bounds=(math.log(e_min - a_hi), math.log(e_min - a_lo)), method="bounded",
            options={"xatol": 1e-12})
        cand = e_min - math.exp(float(opt.x))
        if lo <= cand <= hi and opt.fun <= f(math.log(e_min - best)):
            best = cand
    r2b, slope, inter = _r2_batch(x, e, np.array([best]))
    return float(best), float(math.exp(inter[0])), float(-slope[0]), float(r2b[0])


def powerlaw_fit(points: Sequence[tuple[float, float]], n_candidates: int = 5000,
                 n_bootstrap: int = 500, seed: int = 0) -> PowerLawFit:
    """R^2-scan fit of E(N) = E_extrap + a N^-alpha with bootstrap errors."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError("need at least four (N_det, E) points")
    n, e = pts[:, 0], pts[:, 1]
    if np.any(n <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("N_det must be positive and all values finite")
    if n_candidates < 2:
        raise ValueError("n_candidates must be at least 2")
    degenerate = len(np.unique(n)) < 3 or np.ptp(e) == 0
    if degenerate:
        logger.warning("degenerate power-law input (too few distinct N or constant E)")
        return PowerLawFit(float(e.min()), 0.0, 0.0, float("nan"), n_points=len(pts),
                           degenerate=True)
    ex, a, alpha, r2 = _scan(n, e, n_candidates)
    fit = PowerLawFit(ex, a, alpha, r2, n_points=len(pts))
    if n_bootstrap > 0:
        rng = np.random.default_rng(seed)
        boots = []
        for _ in range(n_bootstrap):
            idx = rng.integers(0, len(pts), size=len(pts))
            nb, eb = n[idx], e[idx]
            if len(np.unique(nb)) < 3 or np.ptp(eb) == 0:
                continue
            boots.append(_scan(nb, eb, n_candidates)[0])
        if len(boots) >= 2:
            b = np.asarray(boots)
            fit.bootstrap_sigma = float(np.std(b, ddof=1))
            fit.ci90 = (float(np.percentile(b, 5)), float(np.percentile(b, 95)))
            fit.n_bootstrap = len(b)
    return fit


class PowerLawExtrapolator(RegressorMixin, BaseEstimator):
    """``fit(N, E)`` then ``predict(N)``; ``e_extrap_`` holds the limit."""

    def __init__(self, n_candidates: int = 5000, n_bootstrap: int = 500, seed: int = 0):
        self.n_candidates = n_candidates
        self.n_bootstrap = n_bootstrap
        self.seed = seed

    def fit(self, X, y):
        n = np.asarray(X, dtype=np.float64).reshape(-1)
        self.fit_ = powerlaw_fit(np.column_stack([n, np.asarray(y, dtype=np.float64)]),
                                 self.n_candidates, self.n_bootstrap, self.seed)
        self.e_extrap_ = self.fit_.e_extrap
        self.alpha_ = self.fit_.alpha_exp
        return self

    def predict(self, X):
        if not hasattr(self, "fit_"):
            raise RuntimeError("PowerLawExtrapolator is not fitted")
        return self.fit_.predict(np.asarray(X, dtype=np.float64).reshape(-1))


def crossing_interpolate(trajectory: Sequence[tuple[float, float]], target_e: float,
                         e_ref: float | None = None, tail: int = 3) -> float:
    """Smallest N at which the trajectory reaches ``target_e``.

    Between two points the crossing is linear in log N.  Outside the data
    the tail of ``|E - e_ref|`` is extrapolated as a power law (with a full
    R^2-scan fit when ``e_ref`` is unknown); ``inf`` means never.
    """
    pts = sorted((float(a), float(b)) for a, b in trajectory)
    if not pts:
        raise ValueError("empty trajectory")
    for k, (nk, ek) in enumerate(pts):
        if ek == target_e:
            return nk
        if ek < target_e:
            if k == 0:
                return _extrapolate(pts, target_e, e_ref, tail, below=True)
            n0, e0 = pts[k - 1]
            f = (target_e - e0) / (ek - e0)
            return float(math.exp(math.log(n0) + f * (math.log(nk) - math.log(n0))))
    return _extrapolate(pts, target_e, e_ref, tail, below=False)


def _extrapolate(pts, target, e_ref, tail, below) -> float:
    seg = pts[:tail] if below else pts[-tail:]
    if e_ref is not None:
        n = np.array([p[0] for p in seg])
        gap = np.array([p[1] for p in seg]) - e_ref
        if target <= e_ref:
            return math.inf
        if np.any(gap <= 0) or len(np.unique(n)) < 2:
            return math.inf if not below else pts[0][0]
        slope, inter = np.polyfit(np.log(n), np.log(gap), 1)
        if slope >= 0:
            return math.inf if not below else pts[0][0]
        return float(math.exp((math.log(target - e_ref) - inter) / slope))
    if len(pts) < 4:
        return math.inf if not below else pts[0][0]
    return powerlaw_fit(pts, n_bootstrap=0).solve(target)


def mps_param_count(L: int, D: int, d: int = 4) -> int:
    """Nominal MPS parameter count d*L*D^2 (no boundary or symmetry corrections)."""
    if L < 0 or D < 0:
        raise ValueError("L and D must be non-negative")
    return int(d) * int(L) * int(D) ** 2


# ---------------------------------------------------------------------------
# I/O

TRAJECTORY_COLUMNS = ("round", "N_det", "E_var", "E_pt2")


def write_trajectory_csv(rows, path) -> None:
    """Rows of (round, N_det, E_var, E_pt2-or-None)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRAJECTORY_COLUMNS)
        for r, n, e, p in rows:
            wr.writerow([r, n, repr(float(e)), "" if p is None else repr(float(p))])


def read_trajectory_csv(path) -> list[tuple[float, float]]:
    """(N_det, E) pairs from a trajectory CSV or any two-column N,E file."""
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = None
        for row in rd:
            row = [x.strip() for x in row]
            if not row or row[0].startswith("#"):
                continue
            if header is None and not _is_number(row[0]):
                header = row
                continue
            if header and "N_det" in header:
                n = float(row[header.index("N_det")])
                e = float(row[header.index("E_var")]) if "E_var" in header else float(row[header.index("N_det") + 1])
            else:
                n, e = float(row[0]), float(row[1])
            out.append((n, e))
    return out


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_fit_json(fit: PowerLawFit, path, extra: dict | None = None) -> None:
    d = {"e_extrap": fit.e_extrap, "alpha": fit.alpha_exp, "a": fit.a, "r2": fit.r2,
         "sigma": fit.bootstrap_sigma, "ci90": list(fit.ci90), "n_points": fit.n_points,
         "degenerate": fit.degenerate}
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=2) + "\n")
