"""Compiled bitstring kernels.

Determinants are rows of a ``(N, 4)`` uint64 array laid out as
``[alpha_hi, alpha_lo, beta_hi, beta_lo]``; bit ``p`` of a spin string lives in
``lo`` for ``p < 64`` and in ``hi`` otherwise.  Lexicographic row order is the
canonical ``(alpha, beta)`` order.

Fermionic phases follow one convention everywhere: all alpha creators precede
all beta creators, each block in ascending orbital index.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_U1 = np.uint64(1)
_U0 = np.uint64(0)
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_S1 = np.uint64(1)
_S2 = np.uint64(2)
_S4 = np.uint64(4)
_S56 = np.uint64(56)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, inline="always")
def popcount(x):
    x = x - ((x >> _S1) & _M1)
    x = (x & _M2) + ((x >> _S2) & _M2)
    x = (x + (x >> _S4)) & _M4
    return np.int64((x * _H01) >> _S56)


@njit(cache=True, inline="always")
def get_bit(hi, lo, p):
    if p < 64:
        return (lo >> np.uint64(p)) & _U1
    return (hi >> np.uint64(p - 64)) & _U1


@njit(cache=True, inline="always")
def flip_bit(hi, lo, p):
    if p < 64:
        return hi, lo ^ (_U1 << np.uint64(p))
    return hi ^ (_U1 << np.uint64(p - 64)), lo


@njit(cache=True, inline="always")
def count_below(hi, lo, p):
    """Number of set bits with index strictly below ``p``."""
    if p < 64:
        if p == 0:
            return 0
        return popcount(lo & ((_U1 << np.uint64(p)) - _U1))
    c = popcount(lo)
    q = p - 64
    if q == 0:
        return c
    return c + popcount(hi & ((_U1 << np.uint64(q)) - _U1))


@njit(cache=True)
def occ_list(hi, lo, n, out):
    k = 0
    for p in range(n):
        if get_bit(hi, lo, p):
            out[k] = p
            k += 1
    return k


@njit(cache=True)
def diff_lists(hi_a, lo_a, hi_b, lo_b, n, only_a, only_b):
    """Orbitals occupied only in a, and only in b (ascending)."""
    ka = 0
    kb = 0
    for p in range(n):
        x = get_bit(hi_a, lo_a, p)
        y = get_bit(hi_b, lo_b, p)
        if x and not y:
            only_a[ka] = p
            ka += 1
        elif y and not x:
            only_b[kb] = p
            kb += 1
    return ka, kb


@njit(cache=True)
def diag_element(ah, al, bh, bl, h, eri, ecore, n):
    e = ecore
    two = 0.0
    for p in range(n):
        pa = get_bit(ah, al, p)
        pb = get_bit(bh, bl, p)
        if not (pa or pb):
            continue
        if pa:
            e += h[p, p]
        if pb:
            e += h[p, p]
        for q in range(n):
            qa = get_bit(ah, al, q)
            qb = get_bit(bh, bl, q)
            if pa and qa:
                two += eri[p, p, q, q] - eri[p, q, q, p]
            if pb and qb:
                two += eri[p, p, q, q] - eri[p, q, q, p]
            if pa and qb:
                two += 2.0 * eri[p, p, q, q]
    return e + 0.5 * two


@njit(cache=True)
def _single_sign(hi, lo, o, a):
    """Sign of a+_a a_o acting on the string (hi, lo); o occupied, a empty."""
    s = count_below(hi, lo, o)
    hi2, lo2 = flip_bit(hi, lo, o)
    s += count_below(hi2, lo2, a)
    return 1.0 - 2.0 * (s & 1)


@njit(cache=True)
def _double_sign(hi, lo, o1, o2, a1, a2):
    """Sign of a+_a1 a+_a2 a_o2 a_o1 acting on (hi, lo)."""
    s = count_below(hi, lo, o1)
    hi, lo = flip_bit(hi, lo, o1)
    s += count_below(hi, lo, o2)
    hi, lo = flip_bit(hi, lo, o2)
    s += count_below(hi, lo, a2)
    hi, lo = flip_bit(hi, lo, a2)
    s += count_below(hi, lo, a1)
    return 1.0 - 2.0 * (s & 1)


@njit(cache=True, inline="always")
def _tz(x):
    return popcount((x & (~x + _U1)) - _U1)


@njit(cache=True, inline="always")
def lowest(hi, lo):
    """Index of the lowest set bit of a nonzero (hi, lo) string."""
    if lo != _U0:
        return _tz(lo)
    return 64 + _tz(hi)


@njit(cache=True, inline="always")
def drop_lowest(hi, lo):
    if lo != _U0:
        return hi, lo & (lo - _U1)
    return hi & (hi - _U1), lo


@njit(cache=True)
def _single_value(sh, sl, oh, ol, a, o, h, eri, n):
    val = h[a, o]
    for r in range(n):
        if get_bit(sh, sl, r):
            val += eri[a, o, r, r] - eri[a, r, r, o]
        if get_bit(oh, ol, r):
            val += eri[a, o, r, r]
    return val


@njit(cache=True)
def sc_element(iah, ial, ibh, ibl, jah, jal, jbh, jbl, h, eri, ecore, n):
    """Slater-Condon element <i|H|j> for two determinants given as words."""
    xa = popcount(iah ^ jah) + popcount(ial ^ jal)
    xb = popcount(ibh ^ jbh) + popcount(ibl ^ jbl)
    if xa + xb > 4:
        return 0.0
    if xa + xb == 0:
        return diag_element(iah, ial, ibh, ibl, h, eri, ecore, n)
    if xa + xb == 2:
        if xa == 2:
            a = lowest(iah & ~jah, ial & ~jal)
            o = lowest(jah & ~iah, jal & ~ial)
            val = _single_value(jah, jal, jbh, jbl, a, o, h, eri, n)
            return _single_sign(jah, jal, o, a) * val
        a = lowest(ibh & ~jbh, ibl & ~jbl)
        o = lowest(jbh & ~ibh, jbl & ~ibl)
        val = _single_value(jbh, jbl, jah, jal, a, o, h, eri, n)
        return _single_sign(jbh, jbl, o, a) * val
    if xa == 4 or xb == 4:
        if xa == 4:
            ph, pl = iah & ~jah, ial & ~jal
            qh, ql = jah & ~iah, jal & ~ial
            sh, sl = jah, jal
        else:
            ph, pl = ibh & ~jbh, ibl & ~jbl
            qh, ql = jbh & ~ibh, jbl & ~ibl
            sh, sl = jbh, jbl
        a1 = lowest(ph, pl)
        ph, pl = drop_lowest(ph, pl)
        a2 = lowest(ph, pl)
        o1 = lowest(qh, ql)
        qh, ql = drop_lowest(qh, ql)
        o2 = lowest(qh, ql)
        s = _double_sign(sh, sl, o1, o2, a1, a2)
        return s * (eri[a1, o1, a2, o2] - eri[a1, o2, a2, o1])
    # mixed alpha-beta double
    pa = lowest(iah & ~jah, ial & ~jal)
    ha = lowest(jah & ~iah, jal & ~ial)
    pb = lowest(ibh & ~jbh, ibl & ~jbl)
    hb = lowest(jbh & ~ibh, jbl & ~ibl)
    s = _single_sign(jah, jal, ha, pa) * _single_sign(jbh, jbl, hb, pb)
    return s * eri[pa, ha, pb, hb]


@njit(cache=True)
def row_element(di, dj, h, eri, ecore, n):
    return sc_element(di[0], di[1], di[2], di[3], dj[0], dj[1], dj[2], dj[3], h, eri, ecore, n)


@njit(cache=True)
def diagonal(dets, h, eri, ecore, n):
    out = np.empty(dets.shape[0])
    for i in range(dets.shape[0]):
        out[i] = diag_element(dets[i, 0], dets[i, 1], dets[i, 2], dets[i, 3], h, eri, ecore, n)
    return out


@njit(cache=True)
def dense_hamiltonian(dets, h, eri, ecore, n):
    m = dets.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i, m):
            v = row_element(dets[i], dets[j], h, eri, ecore, n)
            out[i, j] = v
            out[j, i] = v
    return out


# ---------------------------------------------------------------------------
# searching

@njit(cache=True, inline="always")
def _cmp_row(dets, i, w0, w1, w2, w3):
    if dets[i, 0] != w0:
        return -1 if dets[i, 0] < w0 else 1
    if dets[i, 1] != w1:
        return -1 if dets[i, 1] < w1 else 1
    if dets[i, 2] != w2:
        return -1 if dets[i, 2] < w2 else 1
    if dets[i, 3] != w3:
        return -1 if dets[i, 3] < w3 else 1
    return 0


@njit(cache=True)
def find_row(dets, w0, w1, w2, w3):
    """Binary search in canonically sorted dets; -1 when absent."""
    lo = 0
    hi = dets.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        c = _cmp_row(dets, mid, w0, w1, w2, w3)
        if c == 0:
            return mid
        if c < 0:
            lo = mid + 1
        else:
            hi = mid
    return -1


@njit(cache=True)
def find_key(keys, w0, w1):
    lo = 0
    hi = keys.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        k0 = keys[mid, 0]
        k1 = keys[mid, 1]
        if k0 == w0 and k1 == w1:
            return mid
        if k0 < w0 or (k0 == w0 and k1 < w1):
            lo = mid + 1
        else:
            hi = mid
    return -1


@njit(cache=True)
def lookup_rows(dets, queries):
    out = np.empty(queries.shape[0], np.int64)
    for k in range(queries.shape[0]):
        out[k] = find_row(dets, queries[k, 0], queries[k, 1], queries[k, 2], queries[k, 3])
    return out


@njit(cache=True)
def alpha_adjacency(keys, n):
    """CSR over spin strings: neighbours reachable by one single excitation."""
    g = keys.shape[0]
    ptr = np.zeros(g + 1, np.int64)
    buf = np.empty(max(1, g * n * n), np.int64)
    k = 0
    for x in range(g):
        hi = keys[x, 0]
        lo = keys[x, 1]
        for o in range(n):
            if not get_bit(hi, lo, o):
                continue
            h1, l1 = flip_bit(hi, lo, o)
            for a in range(n):
                if get_bit(hi, lo, a):
                    continue
                h2, l2 = flip_bit(h1, l1, a)
                y = find_key(keys, h2, l2)
                if y >= 0:
                    buf[k] = y
                    k += 1
        seg = buf[ptr[x]:k]
        seg.sort()
        ptr[x + 1] = k
    return ptr, buf[:k].copy()


# ---------------------------------------------------------------------------
# channel scans (A: same alpha, B: same beta, M: alpha single + beta single)

CT_A = 0
CT_B = 1
CT_M = 2


@njit(cache=True, inline="always")
def channel_keep(ctype, di, dj):
    if ctype == CT_A:
        x = popcount(di[2] ^ dj[2]) + popcount(di[3] ^ dj[3])
        return x == 2 or x == 4
    if ctype == CT_B:
        x = popcount(di[0] ^ dj[0]) + popcount(di[1] ^ dj[1])
        return x == 2 or x == 4
    x = popcount(di[2] ^ dj[2]) + popcount(di[3] ^ dj[3])
    return x == 2


@njit(cache=True)
def channel_batch(ctypes, dest, src_start, src_len, src_dets, src_v, h, eri, ecore, n):
    """Off-diagonal sums sum_j H_ij v_j for a batch of channels.

    ``dest[k]`` is the destination determinant of channel ``k``; its sources
    are ``src_dets[src_start[k]:src_start[k]+src_len[k]]``.
    """
    out = np.zeros(ctypes.shape[0])
    for k in range(ctypes.shape[0]):
        ct = ctypes[k]
        di = dest[k]
        acc = 0.0
        for j in range(src_start[k], src_start[k] + src_len[k]):
            dj = src_dets[j]
            if channel_keep(ct, di, dj):
                acc += row_element(di, dj, h, eri, ecore, n) * src_v[j]
        out[k] = acc
    return out


@njit(cache=True)
def _scan_row(i, dets, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx, out):
    """All rows j != i within two excitations of row i, in channel order A, B, M."""
    k = 0
    di = dets[i]
    g = a_of_row[i]
    for j in range(a_start[g], a_start[g + 1]):
        if j != i and channel_keep(CT_A, di, dets[j]):
            out[k] = j
            k += 1
    gb = b_of_row[i]
    for t in range(b_ptr[gb], b_ptr[gb + 1]):
        j = b_rows[t]
        if j != i and channel_keep(CT_B, di, dets[j]):
            out[k] = j
            k += 1
    for t in range(adj_ptr[g], adj_ptr[g + 1]):
        gp = adj_idx[t]
        for j in range(a_start[gp], a_start[gp + 1]):
            if channel_keep(CT_M, di, dets[j]):
                out[k] = j
                k += 1
    return k


@njit(cache=True)
def _row_capacity(i, a_start, a_of_row, b_ptr, b_of_row, adj_ptr, adj_idx):
    g = a_of_row[i]
    c = a_start[g + 1] - a_start[g]
    gb = b_of_row[i]
    c += b_ptr[gb + 1] - b_ptr[gb]
    for t in range(adj_ptr[g], adj_ptr[g + 1]):
        gp = adj_idx[t]
        c += a_start[gp + 1] - a_start[gp]
    return c


@njit(cache=True)
def build_csr(dets, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx,
              h, eri, ecore, n, drop_zeros):
    """Sparse H over the set: CSR with the diagonal first in each row."""
    m = dets.shape[0]
    cap = 0
    for i in range(m):
        cap = max(cap, _row_capacity(i, a_start, a_of_row, b_ptr, b_of_row, adj_ptr, adj_idx))
    scratch = np.empty(cap + 1, np.int64)
    ptr = np.zeros(m + 1, np.int64)
    cols_l = []
    vals_l = []
    for i in range(m):
        k = _scan_row(i, dets, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx, scratch)
        cols = np.empty(k + 1, np.int64)
        vals = np.empty(k + 1)
        cols[0] = i
        vals[0] = row_element(dets[i], dets[i], h, eri, ecore, n)
        c = 1
        for x in range(k):
            j = scratch[x]
            v = row_element(dets[i], dets[j], h, eri, ecore, n)
            if drop_zeros and v == 0.0:
                continue
            cols[c] = j
            vals[c] = v
            c += 1
        cols_l.append(cols[:c])
        vals_l.append(vals[:c])
        ptr[i + 1] = ptr[i] + c
    indices = np.empty(ptr[m], np.int64)
    data = np.empty(ptr[m])
    for i in range(m):
        indices[ptr[i]:ptr[i + 1]] = cols_l[i]
        data[ptr[i]:ptr[i + 1]] = vals_l[i]
    return ptr, indices, data


@njit(cache=True)
def direct_matvec(dets, v, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx,
                  h, eri, ecore, n):
    m = dets.shape[0]
    out = np.empty(m)
    cap = 0
    for i in range(m):
        cap = max(cap, _row_capacity(i, a_start, a_of_row, b_ptr, b_of_row, adj_ptr, adj_idx))
    scratch = np.empty(cap + 1, np.int64)
    for i in range(m):
        acc = row_element(dets[i], dets[i], h, eri, ecore, n) * v[i]
        k = _scan_row(i, dets, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx, scratch)
        for x in range(k):
            j = scratch[x]
            acc += row_element(dets[i], dets[j], h, eri, ecore, n) * v[j]
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# excitation generation

@njit(cache=True)
def excitations(d, n, out):
    """Write all single and double excitations of determinant ``d`` to ``out``."""
    oa = np.empty(n, np.int64)
    va = np.empty(n, np.int64)
    ob = np.empty(n, np.int64)
    vb = np.empty(n, np.int64)
    na = occ_list(d[0], d[1], n, oa)
    nb = occ_list(d[2], d[3], n, ob)
    nva = 0
    nvb = 0
    for p in range(n):
        if not get_bit(d[0], d[1], p):
            va[nva] = p
            nva += 1
        if not get_bit(d[2], d[3], p):
            vb[nvb] = p
            nvb += 1
    k = 0
    for spin in range(2):
        if spin == 0:
            occ, vir, no, nv, w = oa, va, na, nva, 0
        else:
            occ, vir, no, nv, w = ob, vb, nb, nvb, 2
        for x in range(no):
            hi, lo = flip_bit(d[w], d[w + 1], occ[x])
            for y in range(nv):
                h2, l2 = flip_bit(hi, lo, vir[y])
                out[k, 0] = d[0]
                out[k, 1] = d[1]
                out[k, 2] = d[2]
                out[k, 3] = d[3]
                out[k, w] = h2
                out[k, w + 1] = l2
                k += 1
        for x1 in range(no):
            for x2 in range(x1 + 1, no):
                hi, lo = flip_bit(d[w], d[w + 1], occ[x1])
                hi, lo = flip_bit(hi, lo, occ[x2])
                for y1 in range(nv):
                    for y2 in range(y1 + 1, nv):
                        h2, l2 = flip_bit(hi, lo, vir[y1])
                        h2, l2 = flip_bit(h2, l2, vir[y2])
                        out[k, 0] = d[0]
                        out[k, 1] = d[1]
                        out[k, 2] = d[2]
                        out[k, 3] = d[3]
                        out[k, w] = h2
                        out[k, w + 1] = l2
                        k += 1
    for x in range(na):
        ah, al = flip_bit(d[0], d[1], oa[x])
        for y in range(nva):
            ah2, al2 = flip_bit(ah, al, va[y])
            for x2 in range(nb):
                bh, bl = flip_bit(d[2], d[3], ob[x2])
                for y2 in range(nvb):
                    bh2, bl2 = flip_bit(bh, bl, vb[y2])
                    out[k, 0] = ah2
                    out[k, 1] = al2
                    out[k, 2] = bh2
                    out[k, 3] = bl2
                    k += 1
    return k


def excitation_capacity(n, na, nb):
    va, vb = n - na, n - nb
    single = na * va + nb * vb
    double = (na * (na - 1) // 2) * (va * (va - 1) // 2) + (nb * (nb - 1) // 2) * (vb * (vb - 1) // 2)
    return single + double + na * va * nb * vb


@njit(cache=True)
def det_hash(d, n_parts):
    x = (d[0] * _GOLDEN) ^ (d[1] * _MIX1) ^ (d[2] * _MIX2) ^ d[3]
    x ^= x >> np.uint64(31)
    return np.int64(x % np.uint64(n_parts))


@njit(cache=True)
def screened_connections(dets, coeffs, space, theta, h, eri, ecore, n, cap, n_parts=1, part=0):
    """External determinants a (not in ``space``) with |H_aj c_j| > theta.

    Returns the candidate rows, the source index j and H_aj c_j for every
    surviving coupling (duplicates across sources are kept).  With
    ``n_parts > 1`` only externals hashing to ``part`` are returned, so a
    caller can stream the external space in bounded-memory passes.
    """
    buf = np.empty((cap, 4), np.uint64)
    out_d = []
    out_src = []
    out_val = []
    for j in range(dets.shape[0]):
        cj = coeffs[j]
        if cj == 0.0:
            continue
        k = excitations(dets[j], n, buf)
        for x in range(k):
            e = buf[x]
            hv = row_element(e, dets[j], h, eri, ecore, n) * cj
            if abs(hv) > theta:
                if n_parts > 1 and det_hash(e, n_parts) != part:
                    continue
                if find_row(space, e[0], e[1], e[2], e[3]) >= 0:
                    continue
                out_d.append(e.copy())
                out_src.append(j)
                out_val.append(hv)
    m = len(out_d)
    res = np.empty((m, 4), np.uint64)
    src = np.empty(m, np.int64)
    val = np.empty(m)
    for x in range(m):
        res[x] = out_d[x]
        src[x] = out_src[x]
        val[x] = out_val[x]
    return res, src, val


# ---------------------------------------------------------------------------
# density matrices

@njit(cache=True)
def rdm_accumulate(dets, c, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx, n):
    """Spin-summed 1- and 2-RDM.

    gamma[p, q]      = sum_s <a+_ps a_qs>
    Gamma[p, q, r, s] = sum_{st} <a+_ps a+_rt a_st a_qs>
    so that E = sum h gamma + 1/2 sum (pq|rs) Gamma + e_core.
    """
    m = dets.shape[0]
    g1 = np.zeros((n, n))
    g2 = np.zeros((n, n, n, n))
    oa = np.empty(n, np.int64)
    ob = np.empty(n, np.int64)
    cap = 0
    for i in range(m):
        cap = max(cap, _row_capacity(i, a_start, a_of_row, b_ptr, b_of_row, adj_ptr, adj_idx))
    scratch = np.empty(cap + 1, np.int64)
    pa = np.empty(2, np.int64)
    ha = np.empty(2, np.int64)
    pb = np.empty(2, np.int64)
    hb = np.empty(2, np.int64)
    for i in range(m):
        ci = c[i]
        if ci == 0.0:
            continue
        di = dets[i]
        w = ci * ci
        na = occ_list(di[0], di[1], n, oa)
        nb = occ_list(di[2], di[3], n, ob)
        for x in range(na):
            p = oa[x]
            g1[p, p] += w
            for y in range(na):
                q = oa[y]
                if q != p:
                    g2[p, p, q, q] += w
                    g2[p, q, q, p] -= w
            for y in range(nb):
                q = ob[y]
                g2[p, p, q, q] += w
                g2[q, q, p, p] += w
        for x in range(nb):
            p = ob[x]
            g1[p, p] += w
            for y in range(nb):
                q = ob[y]
                if q != p:
                    g2[p, p, q, q] += w
                    g2[p, q, q, p] -= w
        # off-diagonal: <i| ops |j> c_i c_j over ordered pairs
        k = _scan_row(i, dets, a_start, a_of_row, b_ptr, b_rows, b_of_row, adj_ptr, adj_idx, scratch)
        for t in range(k):
            j = scratch[t]
            cj = c[j]
            if cj == 0.0:
                continue
            dj = dets[j]
            w = ci * cj
            xa = popcount(di[0] ^ dj[0]) + popcount(di[1] ^ dj[1])
            xb = popcount(di[2] ^ dj[2]) + popcount(di[3] ^ dj[3])
            if xa + xb == 2:
                if xa == 2:
                    diff_lists(di[0], di[1], dj[0], dj[1], n, pa, ha)
                    sh, sl = dj[0], dj[1]
                    ns = occ_list(dj[0], dj[1], n, oa)
                    no = occ_list(dj[2], dj[3], n, ob)
                else:
                    diff_lists(di[2], di[3], dj[2], dj[3], n, pa, ha)
                    sh, sl = dj[2], dj[3]
                    ns = occ_list(dj[2], dj[3], n, oa)
                    no = occ_list(dj[0], dj[1], n, ob)
                a = pa[0]
                o = ha[0]
                s = _single_sign(sh, sl, o, a) * w
                g1[a, o] += s
                for x in range(ns):
                    r = oa[x]
                    if r == o:
                        continue
                    g2[a, o, r, r] += s
                    g2[r, r, a, o] += s
                    g2[a, r, r, o] -= s
                    g2[r, o, a, r] -= s
                for x in range(no):
                    r = ob[x]
                    g2[a, o, r, r] += s
                    g2[r, r, a, o] += s
            elif xa == 4 or xb == 4:
                if xa == 4:
                    diff_lists(di[0], di[1], dj[0], dj[1], n, pa, ha)
                    sh, sl = dj[0], dj[1]
                else:
                    diff_lists(di[2], di[3], dj[2], dj[3], n, pa, ha)
                    sh, sl = dj[2], dj[3]
                a1, a2 = pa[0], pa[1]
                o1, o2 = ha[0], ha[1]
                s = _double_sign(sh, sl, o1, o2, a1, a2) * w
                g2[a1, o1, a2, o2] += s
                g2[a2, o2, a1, o1] += s
                g2[a1, o2, a2, o1] -= s
                g2[a2, o1, a1, o2] -= s
            else:
                diff_lists(di[0], di[1], dj[0], dj[1], n, pa, ha)
                diff_lists(di[2], di[3], dj[2], dj[3], n, pb, hb)
                s = _single_sign(dj[0], dj[1], ha[0], pa[0]) * _single_sign(dj[2], dj[3], hb[0], pb[0]) * w
                g2[pa[0], ha[0], pb[0], hb[0]] += s
                g2[pb[0], hb[0], pa[0], ha[0]] += s
    return g1, g2
