import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import hubbard, random_ints
from trimcoo.detspace import (Determinant, Wavefunction, build_groups, fci_space,
                              random_determinants)
from trimcoo.eigen import dense_ground_state
from trimcoo.obsrv import (CenterMap, MutualInformation, compute_rdm1, compute_rdm2, compute_rdms,
                           fiedler_order, k95_bandwidth, label_centers, multicenter_histogram,
                           mutual_information, one_orbital_rdm, rdm_energy, read_center_config,
                           rhd, spin_pattern, two_orbital_rdm, von_neumann_entropy)


def random_wf(n, na, nb, count, seed):
    rng = np.random.default_rng(seed)
    space = build_groups(random_determinants(n, na, nb, count, rng), n)
    return Wavefunction(space, rng.normal(size=len(space)), normalize=True)


def singlet_plus_spectator():
    """Orbital 0 doubly occupied; orbitals 1 and 2 in (|up,down> - |down,up>)/sqrt 2."""
    dets = [Determinant(0b011, 0b101), Determinant(0b101, 0b011)]
    space = build_groups(dets, 3)
    c = np.array([1.0 if d == dets[0] else -1.0 for d in space]) / np.sqrt(2)
    return Wavefunction(space, c)


# -- RDMs ---------------------------------------------------------------------

def test_rdm1_single_determinant():
    d = Determinant(0b0111, 0b0101)
    w = Wavefunction(build_groups([d], 4), np.array([1.0]))
    g = compute_rdm1(w)
    np.testing.assert_array_equal(g, np.diag([2.0, 1.0, 2.0, 0.0]))


@pytest.mark.parametrize("elec", [(2, 2), (2, 1), (1, 1), (3, 2)])
def test_rdms_match_second_quantized_oracle(elec):
    w = random_wf(4, *elec, count=20, seed=sum(elec))
    dets = list(w.space)
    g1, g2 = compute_rdms(w)
    np.testing.assert_allclose(g1, oracles.rdm1(dets, w.coeffs, 4), atol=1e-12, rtol=0)
    np.testing.assert_allclose(g2, oracles.rdm2(dets, w.coeffs, 4), atol=1e-12, rtol=0)


def test_energy_reconstruction_dimer(dimer):
    space = fci_space(2, 1, 1)
    e, c = dense_ground_state(space, dimer)
    w = Wavefunction(space, c, normalize=True)
    g1, g2 = compute_rdms(w)
    assert rdm_energy(g1, g2, dimer) == pytest.approx(e, abs=1e-10)
    assert rdm_energy(g1, g2, dimer) == pytest.approx(w.energy(dimer), abs=1e-10)


def test_energy_reconstruction_l4(hub4):
    space = fci_space(4, 2, 2)
    e, c = dense_ground_state(space, hub4)
    w = Wavefunction(space, c, normalize=True)
    assert rdm_energy(compute_rdm1(w), compute_rdm2(w), hub4) == pytest.approx(e, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 80),
       st.sampled_from([(6, 3, 3), (6, 2, 3), (5, 1, 4), (7, 3, 2)]))
def test_rdm_invariants_random(seed, count, shape):
    n, na, nb = shape
    w = random_wf(n, na, nb, count, seed)
    ints = random_ints(n, na, nb, seed=seed % 313, e_core=0.5)
    g1, g2 = compute_rdms(w)
    g1s = compute_rdm1(w)
    N = na + nb
    assert np.trace(g1) == pytest.approx(N, abs=1e-10)
    np.testing.assert_allclose(g1s, g1s.T, atol=0)
    ev = np.linalg.eigvalsh(g1s)
    assert ev.min() > -1e-10 and ev.max() < 2 + 1e-10
    # partial trace of the 2-RDM reproduces (N - 1) gamma
    np.testing.assert_allclose(np.einsum("pqrr->pq", g2), (N - 1) * g1, atol=1e-10)
    # pair-exchange symmetry of the spin-summed 2-RDM
    np.testing.assert_allclose(g2, g2.transpose(2, 3, 0, 1), atol=1e-12)
    assert rdm_energy(g1, g2, ints) == pytest.approx(w.energy(ints), abs=1e-10)


def test_two_electron_rdm2_determines_rdm1():
    w = random_wf(5, 1, 1, 12, seed=3)
    g1, g2 = compute_rdms(w)
    np.testing.assert_allclose(np.einsum("pqrr->pq", g2), g1, atol=1e-12)


# -- orbital density matrices -------------------------------------------------

def test_one_orbital_rdm_examples():
    w = Wavefunction(build_groups([Determinant(0b01, 0b01)], 2), np.array([1.0]))
    np.testing.assert_array_equal(one_orbital_rdm(w, 0), [0, 0, 0, 1])
    np.testing.assert_array_equal(one_orbital_rdm(w, 1), [1, 0, 0, 0])
    s = singlet_plus_spectator()
    np.testing.assert_allclose(one_orbital_rdm(s, 1), [0, 0.5, 0.5, 0], atol=1e-15)
    with pytest.raises(ValueError):
        one_orbital_rdm(w, 2)


def test_two_orbital_singlet_two_bits():
    w = singlet_plus_spectator()
    assert von_neumann_entropy(one_orbital_rdm(w, 1)) == pytest.approx(1.0, abs=1e-12)
    assert von_neumann_entropy(one_orbital_rdm(w, 2)) == pytest.approx(1.0, abs=1e-12)
    assert von_neumann_entropy(two_orbital_rdm(w, 1, 2)) == pytest.approx(0.0, abs=1e-12)
    mi = mutual_information(w)
    assert mi[1, 2] == pytest.approx(2.0, abs=1e-12)
    assert mi[0, 1] == pytest.approx(0.0, abs=1e-12) and mi[0, 2] == pytest.approx(0.0, abs=1e-12)


def test_two_orbital_product_state():
    w = singlet_plus_spectator()
    rho = two_orbital_rdm(w, 0, 1)
    np.testing.assert_allclose(rho, np.kron(np.diag(one_orbital_rdm(w, 0)), np.diag(one_orbital_rdm(w, 1))),
                               atol=1e-15)


def test_two_orbital_rdm_rejects_same_orbital():
    w = singlet_plus_spectator()
    with pytest.raises(ValueError):
        two_orbital_rdm(w, 1, 1)
    with pytest.raises(ValueError):
        two_orbital_rdm(w, 0, 5)


def test_mi_single_determinant_zero():
    w = Wavefunction(build_groups([Determinant(0b0101, 0b0011)], 4), np.array([1.0]))
    assert not mutual_information(w).any()


@pytest.mark.parametrize("pq", [(0, 1), (1, 3), (3, 0), (2, 1)])
def test_two_orbital_rdm_matches_oracle(pq):
    w = random_wf(4, 2, 2, 25, seed=9)
    ref = oracles.two_orbital_rdm(list(w.space), w.coeffs, 4, *pq)
    np.testing.assert_allclose(two_orbital_rdm(w, *pq), ref, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 60))
def test_mi_properties_random(seed, count):
    w = random_wf(5, 2, 3, count, seed)
    n = w.n_orb
    for p in range(n):
        assert one_orbital_rdm(w, p).sum() == pytest.approx(1.0, abs=1e-14)
    for p in range(n):
        for q in range(p + 1, n):
            rho = two_orbital_rdm(w, p, q)
            assert np.trace(rho) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.eigvalsh(rho).min() > -1e-12
            sp, sq = (von_neumann_entropy(one_orbital_rdm(w, k)) for k in (p, q))
            assert von_neumann_entropy(rho) <= sp + sq + 1e-10
    mi = mutual_information(w)
    np.testing.assert_array_equal(mi, mi.T)
    assert mi.min() >= -1e-12
    assert not np.diag(mi).any()
    flipped = Wavefunction(w.space, -w.coeffs)
    np.testing.assert_allclose(mutual_information(flipped), mi, atol=1e-13)


# -- ordering and bandwidth ---------------------------------------------------

def test_fiedler_recovers_path():
    rng = np.random.default_rng(0)
    n = 9
    perm = rng.permutation(n)
    mi = np.zeros((n, n))
    for i in range(n - 1):
        a, b = perm[i], perm[i + 1]
        mi[a, b] = mi[b, a] = 1.0
    order = fiedler_order(mi)
    assert sorted(order.tolist()) == list(range(n))
    assert order.tolist() in (perm.tolist(), perm[::-1].tolist())
    assert k95_bandwidth(mi, order) == 1
    assert k95_bandwidth(mi) > 1


def test_fiedler_zero_and_components():
    assert fiedler_order(np.zeros((5, 5))).tolist() == [0, 1, 2, 3, 4]
    mi = np.zeros((5, 5))
    mi[3, 4] = mi[4, 3] = 1.0
    mi[0, 2] = mi[2, 0] = 1.0
    mi[2, 1] = mi[1, 2] = 0.5
    order = fiedler_order(mi).tolist()
    assert sorted(order) == list(range(5))
    assert set(order[:3]) == {0, 1, 2} and order[3:] == [3, 4]
    with pytest.raises(ValueError):
        fiedler_order(-np.ones((2, 2)))


def test_k95_examples():
    n = 12
    mi = np.zeros((n, n))
    for i in range(n - 5):
        mi[i, i + 5] = mi[i + 5, i] = 1.0
    assert k95_bandwidth(mi) == 5
    tri = np.zeros((n, n))
    for i in range(n - 1):
        tri[i, i + 1] = tri[i + 1, i] = 0.3
    assert k95_bandwidth(tri) == 1
    assert k95_bandwidth(np.zeros((4, 4))) == 0


@pytest.mark.parametrize("k", [1, 2, 3, 4, 6])
def test_k95_band_matrix(k):
    n = 14
    i, j = np.indices((n, n))
    mi = ((np.abs(i - j) <= k) & (i != j)).astype(float)
    assert k95_bandwidth(mi) == k


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_k95_monotone(seed):
    rng = np.random.default_rng(seed)
    x = rng.exponential(size=(8, 8))
    mi = np.triu(x, 1) + np.triu(x, 1).T
    assert k95_bandwidth(mi, mass_fraction=0.99) >= k95_bandwidth(mi, mass_fraction=0.95)
    assert 1 <= k95_bandwidth(mi) <= 7


def test_mutual_information_estimator(hub6):
    space = fci_space(6, 3, 3)
    _, c = dense_ground_state(space, hub6)
    est = MutualInformation().fit(Wavefunction(space, c, normalize=True))
    assert sorted(est.order_.tolist()) == list(range(6))
    assert est.total_mi_ > 0
    out = est.transform(est.mi_)
    assert out[0, 1] == est.mi_[est.order_[0], est.order_[1]]
    # an open chain is already near-banded in site order
    assert est.k_ <= 3


# -- centers ------------------------------------------------------------------

def test_spin_patterns_and_rhd():
    assert rhd("UUDD", "DDUU") == 0
    assert rhd("UUDD", "UDUD") == 2
    with pytest.raises(ValueError):
        rhd("UU", "U")
    centers = CenterMap.sites(4)
    closed = Wavefunction(build_groups([Determinant(0b0011, 0b0011)], 4), np.array([1.0]))
    assert spin_pattern(closed, centers) == "0000"
    neel = Wavefunction(build_groups([Determinant(0b0101, 0b1010)], 4), np.array([1.0]))
    assert spin_pattern(neel, centers) == "UDUD"


def _rotation_with_column(col):
    n = len(col)
    m = np.eye(n)
    m[:, 0] = col
    q, _ = np.linalg.qr(m)
    if q[:, 0] @ col < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_label_centers():
    sets = {"Fe1": [0, 1], "Fe2": [2, 3], "S": [4, 5]}
    cm = label_centers(np.eye(6), sets)
    assert cm.labels == ["Fe1", "Fe1", "Fe2", "Fe2", "S", "S"]
    np.testing.assert_allclose(cm.weights.sum(axis=1), 1.0, atol=1e-12)
    col = np.zeros(6)
    col[0], col[2], col[4] = np.sqrt(0.39), np.sqrt(0.30), np.sqrt(0.31)
    u = _rotation_with_column(col)
    cm = label_centers(u, sets)
    assert cm.labels[0] == "S"
    np.testing.assert_allclose(cm.weights.sum(axis=1), 1.0, atol=1e-12)
    col[0], col[2], col[4] = np.sqrt(0.41), np.sqrt(0.30), np.sqrt(0.29)
    assert label_centers(_rotation_with_column(col), sets).labels[0] == "Fe1"


def test_center_config_file(tmp_path):
    p = tmp_path / "centers.txt"
    p.write_text("# iron sites\nbase = 1\nFe1: 1-3\nFe2: 4, 5 6\nS: 7\n")
    assert read_center_config(p) == {"Fe1": [0, 1, 2], "Fe2": [3, 4, 5], "S": [6]}
    p.write_text("Fe1 1 2\n")
    with pytest.raises(ValueError):
        read_center_config(p)


def test_multicenter_single_det():
    w = Wavefunction(build_groups([Determinant(0b0101, 0b1010)], 4), np.array([1.0]))
    rows = multicenter_histogram(w, CenterMap.sites(4))
    assert len(rows) == 1
    assert rows[0].n_touched == 0 and rows[0].pct_weight == pytest.approx(100.0)
    assert rows[0].pct_excitation is None


def test_multicenter_percentages(hub6):
    space = fci_space(6, 3, 3)
    _, c = dense_ground_state(space, hub6)
    w = Wavefunction(space, c, normalize=True)
    rows = multicenter_histogram(w, CenterMap.sites(6), top_k=200)
    assert rows[0].n_touched == 0 and rows[0].pct_excitation is None
    assert sum(r.n_dets for r in rows) == 200
    assert sum(r.pct_dets for r in rows) == pytest.approx(100.0, abs=1e-9)
    assert sum(r.pct_weight for r in rows) == pytest.approx(100.0, abs=1e-9)
    assert sum(r.pct_excitation for r in rows[1:]) == pytest.approx(100.0, abs=1e-9)
    # a single hop touches exactly two sites
    assert min(r.n_touched for r in rows[1:]) == 2
