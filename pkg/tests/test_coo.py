import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import hubbard, random_ints
from oracles import finite_difference, random_orthogonal
from trimcoo.coo import (CooConfig, Kappa, OrbitalOptimizer, bfgs_orbital_opt, core_energy,
                         expm_antisymmetric, gain_transfer_experiment, generalized_fock,
                         orbital_gradient)
from trimcoo.detspace import Wavefunction, build_groups, fci_space, random_determinants
from trimcoo.eigen import dense_ground_state
from trimcoo.hamio import IntegralSet, rotate_integrals
from trimcoo.obsrv import compute_rdms
from trimcoo.trimci import CoreResult, Phase0Config, PhaseGrowthConfig, trimci_run


def fixed_coeff_energy(space, c, ints):
    n = ints.n_orb
    return lambda x: core_energy(c, space, rotate_integrals(ints, expm_antisymmetric(Kappa(n, x))))


def gradient_of(space, c, ints):
    g1, g2 = compute_rdms(Wavefunction(space, c, normalize=True))
    return orbital_gradient(g1, g2, ints)


def top_core(ints, k):
    space = fci_space(ints.n_orb, ints.n_alpha, ints.n_beta)
    _, c = dense_ground_state(space, ints)
    return space.subset(np.argsort(-np.abs(c), kind="stable")[:k])


# -- exponential and kappa ------------------------------------------------------

def test_expm_examples():
    np.testing.assert_array_equal(expm_antisymmetric(Kappa.zeros(4)), np.eye(4))
    u = expm_antisymmetric(Kappa(2, [np.pi / 2]))
    np.testing.assert_allclose(u, [[0, -1], [1, 0]], atol=1e-15)
    with pytest.raises(ValueError):
        Kappa(3, [1.0, np.nan, 0.0])
    with pytest.raises(ValueError):
        Kappa(3, [1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 32 - 1), st.floats(0.01, 5.0))
def test_expm_orthogonal(n, seed, scale):
    rng = np.random.default_rng(seed)
    k = Kappa(n, scale * rng.normal(size=n * (n - 1) // 2))
    u = expm_antisymmetric(k)
    assert np.abs(u.T @ u - np.eye(n)).max() < 1e-12
    assert np.linalg.det(u) == pytest.approx(1.0, abs=1e-12)
    back = expm_antisymmetric(Kappa(n, -k.params))
    assert np.abs(u @ back - np.eye(n)).max() < 1e-12


def test_kappa_serialization(tmp_path, rng):
    k = Kappa(5, rng.normal(size=10))
    k.save(tmp_path / "k.bin")
    back = Kappa.load(tmp_path / "k.bin")
    np.testing.assert_array_equal(back.params, k.params)
    assert (tmp_path / "k.bin").stat().st_size == 8 + 80
    with pytest.raises(ValueError):
        Kappa.from_bytes(k.to_bytes()[:-8])
    small = Kappa(5, 0.1 * rng.normal(size=10))
    np.testing.assert_allclose(Kappa.from_rotation(expm_antisymmetric(small)).params, small.params,
                               atol=1e-12)


# -- gradient -----------------------------------------------------------------

@pytest.mark.parametrize("n,na,nb,count,seed", [
    (4, 2, 2, 12, 0), (5, 2, 3, 30, 1), (6, 3, 3, 50, 2), (7, 3, 2, 60, 3), (8, 4, 4, 80, 4),
    (6, 2, 2, 1, 5),
])
def test_gradient_matches_finite_differences(n, na, nb, count, seed):
    rng = np.random.default_rng(seed)
    ints = rotate_integrals(random_ints(n, na, nb, seed=seed), random_orthogonal(n, rng))
    space = build_groups(random_determinants(n, na, nb, count, rng), n)
    c = rng.normal(size=len(space))
    c /= np.linalg.norm(c)
    g = gradient_of(space, c, ints)
    fd = finite_difference(fixed_coeff_energy(space, c, ints), np.zeros_like(g), 1e-5)
    assert np.abs(g - fd).max() <= 1e-6 * max(np.abs(fd).max(), 1e-12)


def test_gradient_hubbard_dimer_single_det():
    rng = np.random.default_rng(8)
    ints = rotate_integrals(hubbard(2), random_orthogonal(2, rng))
    space = fci_space(2, 1, 1).subset([0])
    c = np.array([1.0])
    g = gradient_of(space, c, ints)
    fd = finite_difference(fixed_coeff_energy(space, c, ints), np.zeros(1), 1e-5)
    assert np.abs(g - fd).max() <= 1e-6 * max(np.abs(fd).max(), 1e-12)


@pytest.mark.parametrize("L,alpha", [(4, 0.0), (4, 1.0), (6, 0.5)])
def test_fci_gradient_vanishes(L, alpha):
    ints = hubbard(L, alpha)
    space = fci_space(L, L // 2, L // 2)
    _, c = dense_ground_state(space, ints)
    assert np.abs(gradient_of(space, c, ints)).max() < 1e-8


def test_zero_hamiltonian_gradient():
    z = IntegralSet.from_dense(np.zeros((4, 4)), np.zeros((4,) * 4), 0.0, 2, 2)
    space = fci_space(4, 2, 2)
    c = np.random.default_rng(0).normal(size=len(space))
    assert not gradient_of(space, c / np.linalg.norm(c), z).any()


def test_gradient_dimension_check(hub4):
    with pytest.raises(ValueError):
        generalized_fock(np.zeros((3, 3)), np.zeros((4,) * 4), hub4)


def test_gradient_quadratic_error_decay():
    rng = np.random.default_rng(12)
    ints = random_ints(5, 2, 2, seed=12)
    space = build_groups(random_determinants(5, 2, 2, 20, rng), 5)
    c = rng.normal(size=len(space))
    c /= np.linalg.norm(c)
    f = fixed_coeff_energy(space, c, ints)
    g = gradient_of(space, c, ints)
    d = rng.normal(size=len(g))
    d /= np.linalg.norm(d)
    errs = [abs(f(h * d) - f(np.zeros_like(d)) - h * (g @ d)) for h in (1e-3, 5e-4)]
    assert errs[1] < errs[0]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    h = 1e-6
    assert abs(f(h * d) - f(np.zeros_like(d)) - h * (g @ d)) < 1e-10


# -- BFGS -------------------------------------------------------------------

def test_bfgs_full_space_invariant(hub4):
    space = fci_space(4, 2, 2)
    e_fci, _ = dense_ground_state(space, hubbard(4, 0.6))
    res = bfgs_orbital_opt(space, hubbard(4, 0.6), CooConfig(maxiter=5))
    assert all(abs(e - e_fci) < 1e-10 for e in res.history)


def test_bfgs_l8_alpha1_lowers_core_energy():
    ints = hubbard(8, 1.0)
    core = top_core(ints, 100)
    res = bfgs_orbital_opt(core, ints, CooConfig(maxiter=30))
    assert res.energy < res.initial_energy - 0.01
    # accepted steps never rise beyond delta
    for k, d in enumerate(res.deltas):
        assert res.history[k + 1] <= res.history[k] + d
    # reported energy is reproduced by the rotated integrals and final coefficients
    w = Wavefunction(core, res.coeffs, normalize=True)
    assert w.energy(res.integrals) == pytest.approx(res.energy, abs=1e-10)
    rot = rotate_integrals(ints, res.rotation)
    assert w.energy(rot) == pytest.approx(res.energy, abs=1e-9)
    assert np.abs(res.rotation.T @ res.rotation - np.eye(8)).max() < 1e-12


@pytest.mark.parametrize("seed", [0, 1])
def test_full_space_invariance_for_any_rotation(seed):
    ints = hubbard(6, 0.4)
    rng = np.random.default_rng(seed)
    space = fci_space(6, 3, 3)
    e0, _ = dense_ground_state(space, ints)
    e1, _ = dense_ground_state(space, rotate_integrals(ints, random_orthogonal(6, rng)))
    assert abs(e0 - e1) < 1e-10


def test_bfgs_rejects_mismatched_core(hub4):
    with pytest.raises(ValueError):
        bfgs_orbital_opt(fci_space(3, 1, 1), hub4)


@pytest.mark.parametrize("kw", [dict(maxiter=-1), dict(ftol=-1), dict(max_line_search=0),
                                dict(davidson_tol=0)])
def test_coo_config_validation(kw):
    with pytest.raises(ValueError):
        CooConfig(**kw)


def test_orbital_optimizer_estimator():
    ints = hubbard(6, 1.0)
    core = top_core(ints, 20)
    est = OrbitalOptimizer(maxiter=10).fit(core, ints)
    assert est.energy_ <= est.history_[0]
    rot = est.transform(ints)
    w = Wavefunction(core, est.result_.coeffs, normalize=True)
    assert w.energy(rot) == pytest.approx(est.energy_, abs=1e-9)
    with pytest.raises(RuntimeError):
        OrbitalOptimizer().transform(ints)


# -- gain transfer ----------------------------------------------------------

def test_gain_transfer_identical_snapshots_and_endpoint():
    ints = hubbard(4, 1.0)
    core = trimci_run(ints, Phase0Config(num_runs=1, cycles=1, max_final_dets=6,
                                         initial_random=20, seed=3))
    snap = Kappa(4, np.random.default_rng(0).normal(scale=0.3, size=6))
    cfg = PhaseGrowthConfig(max_n_dets=36, growth_factor=2.0, orbital_optimization=False,
                            energy_tol=1e-12)
    a, b = gain_transfer_experiment([snap, snap], core, ints, cfg)
    assert a == b
    assert a[-1][0] == 36
    assert abs(a[-1][1]) < 1e-9
    with pytest.raises(ValueError):
        gain_transfer_experiment([snap], [core, core], ints, cfg)
    assert isinstance(core, CoreResult)
