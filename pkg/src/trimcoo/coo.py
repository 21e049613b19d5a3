"""Core-optimized orbitals.

The orbital basis is rotated by ``U = expm(kappa)`` with ``kappa`` real
antisymmetric.  The energy of a fixed determinant core is minimized over the
independent entries ``kappa[a, i]`` (a > i) with BFGS, re-diagonalizing the
projected CI problem inside every line-search trial.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin

from .detspace import DetSet, Wavefunction
from .eigen import DavidsonConfig, build_connection_cache, davidson_lowest
from .hamio import IntegralSet, rotate_integrals
from .obsrv import compute_rdms

logger = logging.getLogger(__name__)

__all__ = [
    "Kappa",
    "BfgsState",
    "CooConfig",
    "CooResult",
    "expm_antisymmetric",
    "generalized_fock",
    "orbital_gradient",
    "core_energy",
    "bfgs_orbital_opt",
    "gain_transfer_experiment",
    "OrbitalOptimizer",
]


def _lower(n: int) -> tuple[np.ndarray, np.ndarray]:
    a, i = np.tril_indices(n, -1)
    return a, i


@dataclass
class Kappa:
    """Rotation generator stored as its strictly lower triangle, row-major."""

    n_orb: int
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64).ravel()
        if self.params.size != self.n_orb * (self.n_orb - 1) // 2:
            raise ValueError(f"expected {self.n_orb * (self.n_orb - 1) // 2} parameters, "
                             f"got {self.params.size}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("kappa parameters must be finite")

    @classmethod
    def zeros(cls, n_orb: int) -> "Kappa":
        return cls(n_orb, np.zeros(n_orb * (n_orb - 1) // 2))

    def matrix(self) -> np.ndarray:
        k = np.zeros((self.n_orb, self.n_orb))
        a, i = _lower(self.n_orb)
        k[a, i] = self.params
        k[i, a] = -self.params
        return k

    @classmethod
    def from_matrix(cls, k: np.ndarray, tol: float = 1e-10) -> "Kappa":
        k = np.asarray(k, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("kappa must be square")
        if np.max(np.abs(k + k.T), initial=0.0) > tol:
            raise ValueError("kappa is not antisymmetric")
        a, i = _lower(k.shape[0])
        return cls(k.shape[0], k[a, i].copy())

    @classmethod
    def from_rotation(cls, u: np.ndarray) -> "Kappa":
        """Principal logarithm of a proper rotation (no eigenvalue at -1)."""
        k = np.real(scipy.linalg.logm(u))
        return cls.from_matrix(0.5 * (k - k.T), tol=np.inf)

    def to_bytes(self) -> bytes:
        return struct.pack("<q", self.n_orb) + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Kappa":
        if len(data) < 8:
            raise ValueError("truncated kappa snapshot")
        (n,) = struct.unpack("<q", data[:8])
        params = np.frombuffer(data[8:], dtype="<f8")
        if params.size != n * (n - 1) // 2:
            raise ValueError("kappa snapshot length does not match its header")
        return cls(int(n), params.astype(np.float64))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Kappa":
        return cls.from_bytes(Path(path).read_bytes())


def expm_antisymmetric(k: Kappa | np.ndarray) -> np.ndarray:
    """Orthogonal ``e^kappa`` (scaling and squaring Pade)."""
    km = k.matrix() if isinstance(k, Kappa) else np.asarray(k, dtype=np.float64)
    if not np.all(np.isfinite(km)):
        raise ValueError("kappa must be finite")
    u = scipy.linalg.expm(km)
    # one Newton-Schulz step restores orthogonality lost to rounding
    return 1.5 * u - 0.5 * u @ u.T @ u


def generalized_fock(rdm1: np.ndarray, rdm2: np.ndarray, ints: IntegralSet) -> np.ndarray:
    """F_pq = sum_r h_pr g_qr + sum_rst (pr|st) G_qrst."""
    n = ints.n_orb
    if rdm1.shape != (n, n) or rdm2.shape != (n, n, n, n):
        raise ValueError("RDM dimensions do not match the integrals")
    return ints.h @ rdm1.T + np.einsum("prst,qrst->pq", ints.eri, rdm2, optimize=True)


def orbital_gradient(rdm1: np.ndarray, rdm2: np.ndarray, ints: IntegralSet) -> np.ndarray:
    """dE/dkappa_ai at kappa = 0 for fixed CI coefficients, a > i."""
    f = generalized_fock(rdm1, rdm2, ints)
    a, i = _lower(ints.n_orb)
    return 2.0 * (f[a, i] - f[i, a])


def core_energy(coeffs: np.ndarray, space: DetSet, ints: IntegralSet) -> float:
    """<Psi|H|Psi> for fixed coefficients (used by finite-difference checks)."""
    from .eigen import matvec_direct
    c = np.asarray(coeffs, dtype=np.float64)
    return float(c @ matvec_direct(space, ints, c) / (c @ c))


@dataclass
class CooConfig:
    maxiter: int = 100
    ftol: float = 1e-8
    davidson_tol: float = 1e-7
    delta_tol: float = 0.0
    max_line_search: int = 10
    fd_step: float = 1e-4
    ridge: float = 1e-3
    curvature_eps: float = 1e-6
    hessian_floor: float = 1e-3
    use_connection_cache: bool = True

    def __post_init__(self):
        if self.maxiter < 0:
            raise ValueError("maxiter must be non-negative")
        if self.ftol < 0 or self.delta_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.max_line_search < 1:
            raise ValueError("max_line_search must be at least 1")
        if not self.davidson_tol > 0:
            raise ValueError("davidson_tol must be positive")


@dataclass
class BfgsState:
    hessian: np.ndarray
    gradient: np.ndarray
    params: np.ndarray
    iteration: int = 0

    def update(self, s: np.ndarray, y: np.ndarray, eps: float) -> bool:
        """Standard BFGS update; skipped when the curvature ``y.s`` is below eps."""
        ys = float(y @ s)
        if ys <= eps:
            return False
        bs = self.hessian @ s
        self.hessian = self.hessian + np.outer(y, y) / ys - np.outer(bs, bs) / float(s @ bs)
        self.hessian = 0.5 * (self.hessian + self.hessian.T)
        return True


@dataclass
class CooResult:
    kappa: Kappa
    rotation: np.ndarray
    integrals: IntegralSet
    energy: float
    coeffs: np.ndarray
    initial_energy: float
    history: list[float] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)
    n_iter: int = 0
    n_rejected: int = 0

    @property
    def wavefunction_coeffs(self) -> np.ndarray:
        return self.coeffs


def _solve(core: DetSet, ints: IntegralSet, cfg: CooConfig, warm: np.ndarray | None):
    dcfg = DavidsonConfig(energy_tol=1e-12, residual_tol=cfg.davidson_tol, warm_start=warm)
    cache = build_connection_cache(core, ints) if cfg.use_connection_cache else None
    res = davidson_lowest(core, ints, dcfg, cache=cache)
    return res.energy, res.coeffs


def _gradient(core: DetSet, coeffs: np.ndarray, ints: IntegralSet) -> np.ndarray:
    g1, g2 = compute_rdms(Wavefunction(core, coeffs, normalize=True))
    return orbital_gradient(g1, g2, ints)


def _initial_hessian(core, coeffs, ints, g0, cfg) -> np.ndarray:
    """Diagonal orbital Hessian from forward differences of the gradient.

    The RDMs stay fixed; only the integrals are rotated along each coordinate.
    """
    g1, g2 = compute_rdms(Wavefunction(core, coeffs, normalize=True))
    n = ints.n_orb
    npar = n * (n - 1) // 2
    diag = np.empty(npar)
    for k in range(npar):
        p = np.zeros(npar)
        p[k] = cfg.fd_step
        rot = rotate_integrals(ints, expm_antisymmetric(Kappa(n, p)))
        diag[k] = (orbital_gradient(g1, g2, rot)[k] - g0[k]) / cfg.fd_step
    return np.diag(np.maximum(np.abs(diag), cfg.hessian_floor))


def bfgs_orbital_opt(core: DetSet, ints: IntegralSet, cfg: CooConfig | None = None,
                     coeffs: np.ndarray | None = None) -> CooResult:
    """Minimize the projected-CI energy of a fixed core over orbital rotations."""
    cfg = cfg or CooConfig()
    n = ints.n_orb
    if core.n_orb != n:
        raise ValueError("core and integrals disagree on n_orb")
    e, c = _solve(core, ints, cfg, coeffs)
    e0 = e
    u_cum = np.eye(n)
    cur = ints
    g = _gradient(core, c, cur)
    state = BfgsState(_initial_hessian(core, c, cur, g, cfg), g, np.zeros_like(g))
    history, deltas = [e], []
    rejected = 0
    ridge = cfg.ridge * np.eye(len(g))
    it = 0
    for it in range(1, cfg.maxiter + 1):
        if not len(g) or not np.any(g):
            break
        d = -np.linalg.solve(state.hessian + ridge, g)
        if d @ g >= 0:
            # B lost definiteness to rounding; fall back to steepest descent
            d = -g
        delta = max(cfg.delta_tol, 1e-12 * abs(e))
        step = 1.0
        accepted = None
        for _ in range(cfg.max_line_search):
            u_try = expm_antisymmetric(Kappa(n, step * d))
            ints_try = rotate_integrals(cur, u_try)
            e_try, c_try = _solve(core, ints_try, cfg, c)
            if e_try <= e + delta:
                accepted = (u_try, ints_try, e_try, c_try)
                break
            step *= 0.5
        if accepted is None:
            rejected += 1
            logger.info("line search exhausted at iteration %d; stopping", it)
            break
        u_try, ints_try, e_try, c_try = accepted
        s = step * d
        g_new = _gradient(core, c_try, ints_try)
        # kappa is re-anchored at zero after each step, so the gradient
        # difference is taken between consecutive local frames
        state.update(s, g_new - g, cfg.curvature_eps)
        state.iteration = it
        de = e - e_try
        u_cum = u_cum @ u_try
        cur, e, c, g = ints_try, e_try, c_try, g_new
        state.gradient = g
        history.append(e)
        deltas.append(delta)
        if abs(de) < cfg.ftol:
            break
    u_cum = 1.5 * u_cum - 0.5 * u_cum @ u_cum.T @ u_cum
    try:
        kap = Kappa.from_rotation(u_cum)
    except ValueError:
        kap = Kappa.zeros(n)
    return CooResult(kap, u_cum, cur, e, c, e0, history, deltas, it, rejected)


def gain_transfer_experiment(snapshots, core_seeds, ints: IntegralSet, expand_cfg,
                             reference_energy: float | None = None) -> list[list[tuple[int, float]]]:
    """Frozen-orbital expansions, one per rotation snapshot.

    ``snapshots`` are :class:`Kappa` or rotation matrices expressed in the
    basis of ``ints``; ``core_seeds`` is one start :class:`CoreResult` (in the
    original basis) per snapshot, or a single one shared by all.  Returns
    ``(N_det, dE)`` curves against ``reference_energy`` (the full-space energy
    when omitted).
    """
    from .detspace import fci_space
    from .eigen import dense_ground_state
    from .trimci import CoreResult, phase_expand

    if reference_energy is None:
        reference_energy = dense_ground_state(fci_space(ints.n_orb, ints.n_alpha, ints.n_beta), ints)[0]
    if isinstance(core_seeds, CoreResult):
        core_seeds = [core_seeds] * len(snapshots)
    if len(core_seeds) != len(snapshots):
        raise ValueError("need one start core per snapshot")
    curves = []
    for snap, seed in zip(snapshots, core_seeds):
        u = expm_antisymmetric(snap) if isinstance(snap, Kappa) else np.asarray(snap)
        rot = rotate_integrals(ints, u)
        start = seed.reevaluate(rot)
        traj = phase_expand(start, rot, expand_cfg)
        curves.append([(r.n_det, r.energy - reference_energy) for r in traj])
    return curves


class OrbitalOptimizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(core, ints)`` learns the rotation,
    ``transform(ints)`` applies it to any integral set in the same basis."""

    def __init__(self, maxiter: int = 100, ftol: float = 1e-8, davidson_tol: float = 1e-7,
                 delta_tol: float = 0.0):
        self.maxiter = maxiter
        self.ftol = ftol
        self.davidson_tol = davidson_tol
        self.delta_tol = delta_tol

    def fit(self, core: DetSet, ints: IntegralSet):
        cfg = CooConfig(maxiter=self.maxiter, ftol=self.ftol, davidson_tol=self.davidson_tol,
                        delta_tol=self.delta_tol)
        res = bfgs_orbital_opt(core, ints, cfg)
        self.result_ = res
        self.rotation_ = res.rotation
        self.energy_ = res.energy
        self.history_ = res.history
        return self

    def transform(self, ints: IntegralSet) -> IntegralSet:
        if not hasattr(self, "rotation_"):
            raise RuntimeError("OrbitalOptimizer is not fitted")
        return rotate_integrals(ints, self.rotation_)
