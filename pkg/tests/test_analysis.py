import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference_data as ref
from helpers import hubbard, random_ints
from oracles import hamiltonian_matrix
from trimcoo.analysis import (Pt2Config, PowerLawExtrapolator, crossing_interpolate,
                              mps_param_count, powerlaw_fit, pt2_correction, read_trajectory_csv,
                              write_fit_json, write_trajectory_csv)
from trimcoo.detspace import Determinant, Wavefunction, build_groups, fci_space
from trimcoo.eigen import dense_ground_state


def sig3(x):
    return float(f"{x:.3g}")


def core_wavefunction(ints, k):
    space = fci_space(ints.n_orb, ints.n_alpha, ints.n_beta)
    _, c = dense_ground_state(space, ints)
    sub = space.subset(np.argsort(-np.abs(c), kind="stable")[:k])
    e, cc = dense_ground_state(sub, ints)
    return Wavefunction(sub, cc, normalize=True), e


# -- PT2 ----------------------------------------------------------------------

def test_pt2_full_space_zero(hub4):
    space = fci_space(4, 2, 2)
    _, c = dense_ground_state(space, hub4)
    res = pt2_correction(Wavefunction(space, c, normalize=True), hub4)
    assert res.delta_e == 0.0
    assert res.n_external == 0


def test_pt2_dimer_hand_sum(dimer):
    ground = Determinant(0b01, 0b10)
    w = Wavefunction(build_groups([ground], 2), np.array([1.0]))
    res = pt2_correction(w, dimer, Pt2Config(eps_hc=0.0))
    # two singles, each |H| = t, H_aa = U, E_var = 0
    assert res.delta_e == pytest.approx(2 * 1.0 / (0.0 - 4.0), abs=1e-12)
    assert res.e_var == 0.0
    space = list(fci_space(2, 1, 1))
    H = hamiltonian_matrix(space, dimer.h, dimer.eri)
    i = space.index(ground)
    oracle = sum(H[a, i] ** 2 / (H[i, i] - H[a, a]) for a in range(len(space)) if a != i and H[a, i])
    assert res.delta_e == pytest.approx(oracle, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pt2_matches_brute_force(seed):
    ints = random_ints(4, 2, 2, seed=seed)
    space = fci_space(4, 2, 2)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(space), 8, replace=False))
    sub = space.subset(rows)
    e, c = dense_ground_state(sub, ints)
    w = Wavefunction(sub, c, normalize=True)
    full = list(space)
    H = hamiltonian_matrix(full, ints.h, ints.eri)
    inside = [full.index(d) for d in sub]
    outside = [a for a in range(len(full)) if a not in inside]
    expect = sum((H[a, inside] @ c) ** 2 / (e - H[a, a]) for a in outside)
    assert pt2_correction(w, ints, Pt2Config(eps_hc=0.0)).delta_e == pytest.approx(expect, abs=1e-12)


def test_pt2_terms_nonpositive_for_ground_state(hub6):
    w, e = core_wavefunction(hub6, 40)
    res = pt2_correction(w, hub6, Pt2Config(eps_hc=0.0), e_var=e)
    assert res.delta_e < 0
    space = fci_space(6, 3, 3)
    e_fci, _ = dense_ground_state(space, hub6)
    # logged check: second order is not variational, so only report
    print(f"E_var={e:.8f} E_var+PT2={res.e_total:.8f} E_FCI={e_fci:.8f}")


def test_pt2_tightening_never_shrinks(hub8):
    w, e = core_wavefunction(hubbard(8, 0.5), 60)
    ints = hubbard(8, 0.5)
    mags = [abs(pt2_correction(w, ints, Pt2Config(eps_hc=eps), e_var=e).delta_e)
            for eps in (1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 0.0)]
    assert all(b >= a - 1e-15 for a, b in zip(mags, mags[1:]))
    assert mags[-1] > mags[0]


def test_pt2_partition_and_adaptive(hub6):
    w, e = core_wavefunction(hub6, 30)
    one = pt2_correction(w, hub6, Pt2Config(eps_hc=1e-5), e_var=e)
    three = pt2_correction(w, hub6, Pt2Config(eps_hc=1e-5, n_parts=3), e_var=e)
    assert three.delta_e == pytest.approx(one.delta_e, abs=1e-12)
    ad = pt2_correction(w, hub6, Pt2Config(eps_hc=0.2, adaptive=True), e_var=e)
    eps = [h[0] for h in ad.history]
    assert all(b == a / 2 for a, b in zip(eps, eps[1:]))
    assert ad.eps_hc == eps[-1]
    if len(ad.history) < 9:
        a, b = ad.history[-2][1], ad.history[-1][1]
        assert abs(b - a) / abs(b) < 0.03


def test_pt2_deterministic_mass_subset(hub6):
    w, e = core_wavefunction(hub6, 30)
    part = pt2_correction(w, hub6, Pt2Config(eps_hc=0.0, full_coverage=False, deterministic_mass=0.5), e_var=e)
    assert part.n_sources < w.n_det
    full = pt2_correction(w, hub6, Pt2Config(eps_hc=0.0), e_var=e)
    assert full.n_sources == w.n_det


@pytest.mark.parametrize("kw", [dict(deterministic_mass=0), dict(deterministic_mass=1.5),
                                dict(eps_hc=-1), dict(adaptive_tighten=0), dict(n_parts=0)])
def test_pt2_config_validation(kw):
    with pytest.raises(ValueError):
        Pt2Config(**kw)


# -- power law ----------------------------------------------------------------

def test_powerlaw_exact_model():
    n = np.geomspace(1e3, 1e8, 14)
    e = -10 + 3 * n ** -0.3
    fit = powerlaw_fit(list(zip(n, e)), n_bootstrap=0)
    assert fit.e_extrap == pytest.approx(-10, abs=1e-6)
    assert fit.alpha_exp == pytest.approx(0.3, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert np.abs(fit.predict(n) - e).max() < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.floats(-500, 500), st.floats(0.1, 10), st.floats(0.05, 0.8))
def test_powerlaw_exact_on_own_model_class(e_inf, a, alpha):
    n = np.geomspace(1e2, 1e7, 12)
    e = e_inf + a * n ** -alpha
    fit = powerlaw_fit(list(zip(n, e)), n_bootstrap=0)
    assert np.abs(fit.predict(n) - e).max() < 1e-8
    assert fit.e_extrap < e.min()
    assert fit.alpha_exp > 0


def test_powerlaw_published_fe4s4():
    fit = powerlaw_fit(ref.FE4S4_TRIMCI, n_candidates=5000, n_bootstrap=500, seed=0)
    assert abs(fit.e_extrap - ref.FE4S4_EXTRAP) <= 1e-3
    assert abs(fit.alpha_exp - ref.FE4S4_ALPHA) <= 0.02
    assert fit.r2 >= 0.998
    assert ref.FE4S4_SIGMA / 2 <= fit.bootstrap_sigma <= ref.FE4S4_SIGMA * 2
    lo, hi = fit.ci90
    assert lo <= fit.e_extrap + 1e-4 and hi >= fit.e_extrap - 1e-4


def test_powerlaw_degenerate_and_errors():
    fit = powerlaw_fit([(10, -1.0), (10, -1.0), (20, -1.0), (30, -1.0)], n_bootstrap=0)
    assert fit.degenerate
    with pytest.raises(ValueError):
        powerlaw_fit([(1, 1.0), (2, 0.5), (3, 0.3)])
    with pytest.raises(ValueError):
        powerlaw_fit([(0, 1.0), (2, 0.5), (3, 0.3), (4, 0.2)])


def test_powerlaw_estimator():
    n = np.geomspace(1e3, 1e7, 10)
    e = -2 + 0.5 * n ** -0.25
    est = PowerLawExtrapolator(n_bootstrap=0).fit(n, e)
    assert est.e_extrap_ == pytest.approx(-2, abs=1e-6)
    np.testing.assert_allclose(est.predict(n), e, atol=1e-9)
    with pytest.raises(RuntimeError):
        PowerLawExtrapolator().predict(n)


# -- crossings ----------------------------------------------------------------

def test_crossing_exact_point():
    traj = [(100, -1.0), (200, -1.5), (400, -1.8)]
    assert crossing_interpolate(traj, -1.5) == 200


def test_crossing_log_linear():
    traj = [(100, -1.0), (10000, -2.0)]
    assert crossing_interpolate(traj, -1.5) == pytest.approx(1000.0)


def test_crossing_fe4s4_udmrg():
    n = crossing_interpolate(ref.FE4S4_COO_TRAJ, ref.UDMRG_D12000_ENERGY)
    assert abs(n - ref.FE4S4_CROSSING) / ref.FE4S4_CROSSING < 0.2
    assert 6 <= ref.UDMRG_D12000_PARAMS / n <= 10


def test_crossing_fe2s2_emo():
    n = crossing_interpolate(ref.FE2S2_COO_TRAJ, ref.FE2S2_EMO_D100)
    assert abs(n - ref.FE2S2_CROSSING) / ref.FE2S2_CROSSING < 0.1
    assert 14 <= mps_param_count(20, 100) / n <= 18


def test_crossing_extrapolation_branches():
    traj = [(100, -1.0), (200, -1.2), (400, -1.3)]
    assert math.isinf(crossing_interpolate(traj, -5.0, e_ref=-1.5))
    n = crossing_interpolate(traj, -1.4, e_ref=-1.5)
    assert n > 400 and math.isfinite(n)
    assert crossing_interpolate(traj, -0.5, e_ref=-1.5) < 100
    with pytest.raises(ValueError):
        crossing_interpolate([], -1.0)


# -- parameter counts ------------------------------------------------------------

def test_mps_param_counts_published():
    for L, D, n in ref.UDMRG_PARAMS + ref.DMRG_D100_PARAMS:
        assert sig3(mps_param_count(L, D)) == n
    assert mps_param_count(36, 12000) == 144 * 12000 ** 2
    assert mps_param_count(36, 0) == 0
    with pytest.raises(ValueError):
        mps_param_count(-1, 3)


# -- I/O ----------------------------------------------------------------------

def test_trajectory_csv_roundtrip(tmp_path):
    rows = [(0, 100, -1.25, None), (1, 200, np.float64(-1.5), -0.01)]
    write_trajectory_csv(rows, tmp_path / "t.csv")
    assert read_trajectory_csv(tmp_path / "t.csv") == [(100.0, -1.25), (200.0, -1.5)]
    (tmp_path / "plain.csv").write_text("# N,E\n10,-1\n20,-2\n")
    assert read_trajectory_csv(tmp_path / "plain.csv") == [(10.0, -1.0), (20.0, -2.0)]


def test_fit_json(tmp_path):
    fit = powerlaw_fit(ref.FE4S4_TRIMCI, n_bootstrap=20)
    write_fit_json(fit, tmp_path / "f.json", {"source": "x"})
    d = json.loads((tmp_path / "f.json").read_text())
    assert set(d) >= {"e_extrap", "alpha", "r2", "sigma", "ci90", "source"}
    assert d["e_extrap"] == fit.e_extrap
