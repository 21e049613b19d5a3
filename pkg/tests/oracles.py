"""Reference implementations that share no code with the package.

The second-quantized oracle works in the occupation-number (Jordan-Wigner)
basis of 2n spin orbitals: mode p is alpha orbital p, mode n + p is beta
orbital p.  A determinant ``Determinant(alpha, beta)`` is the basis state
``alpha | beta << n`` with sign +1, which is the ordering "alpha creators
before beta creators, ascending orbital index".
"""

from __future__ import annotations

import itertools
import socket

import numpy as np


def _annihilate(state: int, mode: int):
    if not state >> mode & 1:
        return None
    sign = -1 if bin(state & ((1 << mode) - 1)).count("1") & 1 else 1
    return sign, state ^ (1 << mode)


def _create(state: int, mode: int):
    if state >> mode & 1:
        return None
    sign = -1 if bin(state & ((1 << mode) - 1)).count("1") & 1 else 1
    return sign, state | (1 << mode)


def apply_string(ops, state: int):
    """Apply ``ops`` (list of (mode, is_creator)), rightmost first."""
    sign = 1
    for mode, dag in reversed(ops):
        out = (_create if dag else _annihilate)(state, mode)
        if out is None:
            return None
        s, state = out
        sign *= s
    return sign, state


def fock_state(det, n: int) -> int:
    return det.alpha | (det.beta << n)


def apply_hamiltonian(h, eri, e_core, n, state: int) -> dict[int, float]:
    """H|state> as a sparse dict, second-quantized with chemist-order (pq|rs)."""
    out: dict[int, float] = {state: e_core}
    for p, q in itertools.product(range(n), repeat=2):
        if h[p, q] == 0:
            continue
        for s in (0, n):
            r = apply_string([(p + s, True), (q + s, False)], state)
            if r:
                out[r[1]] = out.get(r[1], 0.0) + r[0] * h[p, q]
    for p, q, r_, s_ in itertools.product(range(n), repeat=4):
        g = eri[p, q, r_, s_]
        if g == 0:
            continue
        for sa, sb in itertools.product((0, n), repeat=2):
            r = apply_string([(p + sa, True), (r_ + sb, True), (s_ + sb, False), (q + sa, False)], state)
            if r:
                out[r[1]] = out.get(r[1], 0.0) + 0.5 * r[0] * g
    return out


def hamiltonian_matrix(dets, h, eri, e_core=0.0) -> np.ndarray:
    """Dense <D_i|H|D_j> for a list of determinants."""
    n = h.shape[0]
    states = [fock_state(d, n) for d in dets]
    index = {s: i for i, s in enumerate(states)}
    H = np.zeros((len(states), len(states)))
    for j, s in enumerate(states):
        for t, val in apply_hamiltonian(h, eri, e_core, n, s).items():
            i = index.get(t)
            if i is not None:
                H[i, j] += val
    return H


def sector_dets(n: int, na: int, nb: int):
    from trimcoo.detspace import Determinant

    strings = lambda k: [sum(1 << p for p in c) for c in itertools.combinations(range(n), k)]  # noqa: E731
    return [Determinant(a, b) for a in strings(na) for b in strings(nb)]


def fci_energy(h, eri, e_core, na, nb) -> float:
    """Lowest eigenvalue of the second-quantized H in the (na, nb) sector."""
    H = hamiltonian_matrix(sector_dets(h.shape[0], na, nb), h, eri, e_core)
    return float(np.linalg.eigvalsh(H)[0])


def rdm1(dets, coeffs, n) -> np.ndarray:
    """Spin-summed <a+_p a_q> by applying the operator strings."""
    states = [fock_state(d, n) for d in dets]
    index = {s: i for i, s in enumerate(states)}
    g = np.zeros((n, n))
    for p, q in itertools.product(range(n), repeat=2):
        for s in (0, n):
            acc = 0.0
            for j, st in enumerate(states):
                r = apply_string([(p + s, True), (q + s, False)], st)
                if r and r[1] in index:
                    acc += coeffs[index[r[1]]] * r[0] * coeffs[j]
            g[p, q] += acc
    return g


def rdm2(dets, coeffs, n) -> np.ndarray:
    """Spin-summed Gamma_pqrs = <a+_ps a+_rt a_st a_qs>."""
    states = [fock_state(d, n) for d in dets]
    index = {s: i for i, s in enumerate(states)}
    G = np.zeros((n, n, n, n))
    for p, q, r_, s_ in itertools.product(range(n), repeat=4):
        for sa, sb in itertools.product((0, n), repeat=2):
            ops = [(p + sa, True), (r_ + sb, True), (s_ + sb, False), (q + sa, False)]
            for j, st in enumerate(states):
                r = apply_string(ops, st)
                if r and r[1] in index:
                    G[p, q, r_, s_] += coeffs[index[r[1]]] * r[0] * coeffs[j]
    return G


def random_integrals(n: int, rng: np.random.Generator, scale: float = 0.3):
    """Random real h and an 8-fold symmetric (pq|rs), dense."""
    h = rng.normal(size=(n, n))
    h = 0.5 * (h + h.T)
    x = rng.normal(scale=scale, size=(n, n, n, n))
    eri = np.empty_like(x)
    for p, q, r, s in itertools.product(range(n), repeat=4):
        pq, rs = (max(p, q), min(p, q)), (max(r, s), min(r, s))
        eri[p, q, r, s] = x[max(pq, rs) + min(pq, rs)]
    return h, eri


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def dimer_energy(U: float, t: float = 1.0) -> float:
    """Closed-form ground state of the two-site Hubbard model at half filling."""
    return 0.5 * (U - np.sqrt(U * U + 16 * t * t))


def free_ports(k: int) -> list[int]:
    socks = []
    for _ in range(k):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def finite_difference(f, x: np.ndarray, step: float) -> np.ndarray:
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def two_orbital_rdm(dets, coeffs, n, p, q) -> np.ndarray:
    """16x16 rho_pq by fermionic mode reordering and an ordinary partial trace.

    Modes are moved to the order (p up, p down, q up, q down, rest in the
    original alpha-then-beta order); each basis state picks up the parity
    of that permutation restricted to its occupied modes.
    """
    local = [p, n + p, q, n + q]
    order = local + [m for m in range(2 * n) if m not in local]
    pos = {m: k for k, m in enumerate(order)}
    env_index: dict[int, int] = {}
    entries = []
    for d, c in zip(dets, coeffs):
        st = fock_state(d, n)
        occ = [m for m in range(2 * n) if st >> m & 1]
        new = [pos[m] for m in occ]
        inv = sum(1 for i in range(len(new)) for j in range(i + 1, len(new)) if new[i] > new[j])
        bits = [st >> m & 1 for m in local]
        s = 4 * (bits[0] + 2 * bits[1]) + bits[2] + 2 * bits[3]
        env = st & ~sum(1 << m for m in local)
        e = env_index.setdefault(env, len(env_index))
        entries.append((e, s, c * (-1) ** inv))
    M = np.zeros((len(env_index), 16))
    for e, s, v in entries:
        M[e, s] += v
    return M.T @ M
