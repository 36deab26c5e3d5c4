# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the Gibbs scan, tree messages and prior Monte Carlo.

Mirrors :mod:`pibp._kernels.pure` exactly (same signatures, same random
number consumption). Messages are kept in linear space with joint
normalization per node, which never under- or overflows and preserves the
ratios that the conditionals need.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, expm1, log, log1p, sqrt

BACKEND_NAME = "fast"


cdef inline double _fmax2(double a, double b) nogil:
    return a if a > b else b


cdef int _chol_inplace(double[:, ::1] l, double[:, ::1] g, double c) nogil:
    """Lower Cholesky of G + c I written into ``l``. Returns 0 on success."""
    cdef Py_ssize_t k = g.shape[0]
    cdef Py_ssize_t i, j, r
    cdef double acc
    for i in range(k):
        for j in range(i + 1):
            acc = g[i, j]
            if i == j:
                acc += c
            for r in range(j):
                acc -= l[i, r] * l[j, r]
            if i == j:
                if acc <= 0.0:
                    return -1
                l[i, i] = sqrt(acc)
            else:
                l[i, j] = acc / l[j, j]
        for j in range(i + 1, k):
            l[i, j] = 0.0
    return 0


cdef void _chol_solve(double[:, ::1] l, double* rhs, double* out, Py_ssize_t k) nogil:
    """Solve (L L') x = rhs with forward/back substitution."""
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(k):
        acc = rhs[i]
        for j in range(i):
            acc -= l[i, j] * out[j]
        out[i] = acc / l[i, i]
    for i in range(k - 1, -1, -1):
        acc = out[i]
        for j in range(i + 1, k):
            acc -= l[j, i] * out[j]
        out[i] = acc / l[i, i]


def up_logprob(
    int[::1] child_ptr,
    int[::1] child_idx,
    int[::1] topo,
    int[::1] parent,
    double[::1] q,
    int[::1] leaf_nodes,
    signed char[::1] leaf_vals,
):
    cdef Py_ssize_t m = parent.shape[0]
    cdef Py_ssize_t n = leaf_nodes.shape[0]
    cdef cnp.ndarray[double, ndim=1] u0a = np.ones(m)
    cdef cnp.ndarray[double, ndim=1] u1a = np.ones(m)
    cdef double[::1] u0 = u0a
    cdef double[::1] u1 = u1a
    cdef Py_ssize_t j, idx, v, p
    cdef double a0, a1, mx, qv, m0, m1, logscale
    for j in range(n):
        v = leaf_nodes[j]
        u0[v] = 1.0 - leaf_vals[j]
        u1[v] = leaf_vals[j]
    logscale = 0.0
    for idx in range(m - 1):
        v = topo[idx]
        a0 = u0[v]
        a1 = u1[v]
        mx = _fmax2(a0, a1)
        if mx <= 0.0:
            return -INFINITY
        a0 /= mx
        a1 /= mx
        logscale += log(mx)
        qv = q[v]
        m1 = a1
        m0 = qv * a1 + (1.0 - qv) * a0
        p = parent[v]
        u0[p] *= m0
        u1[p] *= m1
    if u0[0] <= 0.0:
        return -INFINITY
    return log(u0[0]) + logscale


cdef void _down_logits(
    Py_ssize_t leaf,
    Py_ssize_t kcol,
    double[::1] u0,
    double[::1] u1,
    double[:, ::1] q,
    int[::1] child_ptr,
    int[::1] child_idx,
    int[::1] parent,
    int[::1] pathbuf,
    double* out_d0,
    double* out_d1,
) nogil:
    """Walk root -> leaf combining sibling messages; leaf's own evidence excluded."""
    cdef Py_ssize_t plen = 0
    cdef Py_ssize_t v = leaf
    cdef Py_ssize_t t, ci, b, c
    cdef double d0, d1, s0, s1, b0, b1, qb, m0, m1, mx, e0, e1, qc, d0n, d1n
    while v != 0:
        pathbuf[plen] = <int> v
        plen += 1
        v = parent[v]
    d0 = 1.0
    d1 = 0.0
    v = 0
    for t in range(plen - 1, -1, -1):
        c = pathbuf[t]
        s0 = 1.0
        s1 = 1.0
        for ci in range(child_ptr[v], child_ptr[v + 1]):
            b = child_idx[ci]
            if b == c:
                continue
            b0 = u0[b]
            b1 = u1[b]
            qb = q[kcol, b]
            m0 = qb * b1 + (1.0 - qb) * b0
            m1 = b1
            s0 *= m0
            s1 *= m1
            mx = _fmax2(s0, s1)
            if mx > 0.0 and (mx > 1e150 or mx < 1e-150):
                s0 /= mx
                s1 /= mx
        e0 = d0 * s0
        e1 = d1 * s1
        qc = q[kcol, c]
        d0n = e0 * (1.0 - qc)
        d1n = e0 * qc + e1
        mx = _fmax2(d0n, d1n)
        if mx <= 0.0:
            out_d0[0] = 0.0
            out_d1[0] = 0.0
            return
        d0 = d0n / mx
        d1 = d1n / mx
        v = c
    out_d0[0] = d0
    out_d1[0] = d1


cdef void _up_pass_free_leaf(
    Py_ssize_t i,
    Py_ssize_t kcol,
    signed char[:, ::1] z,
    double[:, ::1] q,
    int[::1] topo,
    int[::1] parent,
    int[::1] leaf_nodes,
    double[::1] u0,
    double[::1] u1,
) nogil:
    cdef Py_ssize_t m = parent.shape[0]
    cdef Py_ssize_t n = leaf_nodes.shape[0]
    cdef Py_ssize_t j, idx, v, p
    cdef double a0, a1, mx, qv, m0, m1
    for v in range(m):
        u0[v] = 1.0
        u1[v] = 1.0
    for j in range(n):
        if j == i:
            continue
        v = leaf_nodes[j]
        u0[v] = 1.0 - z[j, kcol]
        u1[v] = z[j, kcol]
    for idx in range(m - 1):
        v = topo[idx]
        a0 = u0[v]
        a1 = u1[v]
        mx = _fmax2(a0, a1)
        if mx > 0.0:
            a0 /= mx
            a1 /= mx
        qv = q[kcol, v]
        m1 = a1
        m0 = qv * a1 + (1.0 - qv) * a0
        p = parent[v]
        u0[p] *= m0
        u1[p] *= m1


def leaf_conditional_logits(
    int[::1] child_ptr,
    int[::1] child_idx,
    int[::1] topo,
    int[::1] parent,
    double[::1] q,
    int[::1] leaf_nodes,
    signed char[::1] leaf_vals,
    Py_ssize_t i,
):
    cdef Py_ssize_t m = parent.shape[0]
    cdef Py_ssize_t n = leaf_nodes.shape[0]
    z_arr = np.ascontiguousarray(np.asarray(leaf_vals).reshape(n, 1))
    q_arr = np.ascontiguousarray(np.asarray(q).reshape(1, m))
    cdef signed char[:, ::1] z = z_arr
    cdef double[:, ::1] qm = q_arr
    cdef cnp.ndarray[double, ndim=1] u0a = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] u1a = np.empty(m)
    cdef cnp.ndarray[int, ndim=1] patha = np.empty(m, dtype=np.int32)
    cdef double[::1] u0 = u0a
    cdef double[::1] u1 = u1a
    cdef int[::1] pathbuf = patha
    cdef double d0 = 0.0
    cdef double d1 = 0.0
    _up_pass_free_leaf(i, 0, z, qm, topo, parent, leaf_nodes, u0, u1)
    _down_logits(leaf_nodes[i], 0, u0, u1, qm, child_ptr, child_idx, parent,
                 pathbuf, &d0, &d1)
    cdef double l0 = log(d0) if d0 > 0.0 else -INFINITY
    cdef double l1 = log(d1) if d1 > 0.0 else -INFINITY
    return l0, l1


def gibbs_row(
    Py_ssize_t i,
    signed char[:, ::1] z,
    long long[::1] colsum,
    double[:, ::1] q,
    int[::1] child_ptr,
    int[::1] child_idx,
    int[::1] topo,
    int[::1] parent,
    int[::1] leaf_nodes,
    double[:, ::1] xxt,
    double[:, ::1] g,
    double[:, ::1] h,
    double[:, ::1] s,
    double[:, ::1] choll,
    double[::1] scal,
    double[::1] uniforms,
    bint allow_empty,
):
    cdef Py_ssize_t kdim = z.shape[1]
    if kdim == 0:
        return 0
    cdef Py_ssize_t m = parent.shape[0]
    cdef bint have_like = xxt.shape[0] > 0
    cdef Py_ssize_t k, r, t
    cdef int flips = 0

    cdef cnp.ndarray[double, ndim=1] u0a = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] u1a = np.empty(m)
    cdef cnp.ndarray[int, ndim=1] patha = np.empty(m, dtype=np.int32)
    cdef cnp.ndarray[double, ndim=2] wsa = np.empty((6, max(kdim, 1)))
    cdef double[::1] u0 = u0a
    cdef double[::1] u1 = u1a
    cdef int[::1] pathbuf = patha
    cdef double[:, ::1] ws = wsa

    cdef double d0, d1, logit, prior_logit
    cdef double c = scal[3]
    cdef double p_obs = scal[4]
    cdef double sigx2 = scal[5]
    cdef double svar, dll, dlogdet, t_new, t_ab, t_aa, t_bb, detw, dta, dtb
    cdef double q11, q12, q21, q22, corr, u, xii, acc, hik
    cdef bint cur, newv

    for k in range(kdim):
        if (not allow_empty) and colsum[k] == 1 and z[i, k] == 1:
            continue
        _up_pass_free_leaf(i, k, z, q, topo, parent, leaf_nodes, u0, u1)
        _down_logits(leaf_nodes[i], k, u0, u1, q, child_ptr, child_idx, parent,
                     pathbuf, &d0, &d1)
        if d0 <= 0.0 and d1 <= 0.0:
            continue
        if d0 <= 0.0:
            prior_logit = INFINITY
        elif d1 <= 0.0:
            prior_logit = -INFINITY
        else:
            prior_logit = log(d1) - log(d0)
        logit = prior_logit
        cur = z[i, k] != 0
        svar = -1.0 if cur else 1.0
        dll = 0.0
        dlogdet = 0.0
        t_new = scal[1]
        if have_like:
            xii = xxt[i, i]
            # b = svar * z_row + e_k/2, d = svar * H[:, i] + xii/2 e_k
            for r in range(kdim):
                ws[0, r] = svar * z[i, r]
                ws[1, r] = svar * h[r, i]
            ws[0, k] += 0.5
            ws[1, k] += 0.5 * xii
            # at = M^{-1} e_k, bt = M^{-1} b
            for r in range(kdim):
                ws[2, r] = 0.0
            ws[2, k] = 1.0
            _chol_solve(choll, &ws[2, 0], &ws[3, 0], kdim)  # at
            _chol_solve(choll, &ws[0, 0], &ws[4, 0], kdim)  # bt
            t_ab = 0.0
            t_bb = 0.0
            dta = 0.0
            dtb = 0.0
            for r in range(kdim):
                t_ab += ws[0, r] * ws[3, r]
                t_bb += ws[0, r] * ws[4, r]
                dta += ws[1, r] * ws[3, r]
                dtb += ws[1, r] * ws[4, r]
            t_aa = ws[3, k]
            detw = (1.0 + t_ab) * (1.0 + t_ab) - t_aa * t_bb
            if detw <= 0.0:
                raise FloatingPointError("flip update lost positive definiteness")
            dlogdet = log(detw)
            # u1 = S'at, u2 = S'bt with S' = S + e_k d' + d e_k'
            q11 = 0.0
            q12 = 0.0
            q21 = 0.0
            q22 = 0.0
            for r in range(kdim):
                acc = 0.0
                for t in range(kdim):
                    acc += s[r, t] * ws[3, t]
                ws[2, r] = acc
                acc = 0.0
                for t in range(kdim):
                    acc += s[r, t] * ws[4, t]
                ws[5, r] = acc
            for r in range(kdim):
                ws[2, r] += ws[1, r] * ws[3, k]
                ws[5, r] += ws[1, r] * ws[4, k]
            ws[2, k] += dta
            ws[5, k] += dtb
            for r in range(kdim):
                q11 += ws[4, r] * ws[2, r]
                q12 += ws[4, r] * ws[5, r]
                q21 += ws[3, r] * ws[2, r]
                q22 += ws[3, r] * ws[5, r]
            corr = ((1.0 + t_ab) * q11 - t_bb * q21 - t_aa * q12
                    + (1.0 + t_ab) * q22) / detw
            t_new = scal[1] + 2.0 * dta - corr
            dll = -0.5 * p_obs * dlogdet + (t_new - scal[1]) / (2.0 * sigx2)
            logit += dll if not cur else -dll
        u = uniforms[k]
        newv = (log(u) - log1p(-u)) < logit
        if newv != cur:
            if have_like:
                xii = xxt[i, i]
                for r in range(kdim):
                    ws[0, r] = svar * z[i, r]   # s * old row
                    ws[1, r] = svar * h[r, i]   # s * old H[:, i]
                for r in range(kdim):
                    g[k, r] += ws[0, r]
                    g[r, k] += ws[0, r]
                    s[k, r] += ws[1, r]
                    s[r, k] += ws[1, r]
                g[k, k] += 1.0
                s[k, k] += xii
                for r in range(xxt.shape[0]):
                    h[k, r] += svar * xxt[i, r]
                z[i, k] = 1 if newv else 0
                colsum[k] += 1 if newv else -1
                if _chol_inplace(choll, g, c) != 0:
                    raise FloatingPointError("Gram update lost positive definiteness")
                scal[0] += dlogdet
                scal[1] = t_new
                scal[2] += dll
            else:
                z[i, k] = 1 if newv else 0
                colsum[k] += 1 if newv else -1
            scal[6] += 1.0
            flips += 1
    return flips


def prior_draws_chunk(
    int[::1] child_ptr,
    int[::1] child_idx,
    int[::1] topo,
    int[::1] parent,
    int[::1] leaf_nodes,
    double[::1] edge_len,
    double[:, ::1] pks,
    long long[::1] keff,
    double[:, :, ::1] edge_u,
    long long[:, ::1] target,
    long long[::1] out_kplus,
):
    cdef Py_ssize_t nb = pks.shape[0]
    cdef Py_ssize_t kc = pks.shape[1]
    cdef Py_ssize_t m = parent.shape[0]
    cdef Py_ssize_t n = leaf_nodes.shape[0]
    cdef bint with_target = target.shape[0] > 0
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] statea = np.empty(m, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] leafa = np.empty(max(n, 1), dtype=np.uint8)
    cdef cnp.ndarray[long long, ndim=2] sima = np.zeros((n, n), dtype=np.int64)
    cdef cnp.uint8_t[::1] state = statea
    cdef cnp.uint8_t[::1] leaf = leafa
    cdef long long[:, ::1] sim = sima
    cdef Py_ssize_t b, k, idx, v, j, r
    cdef long long hits = 0
    cdef long long kplus
    cdef double lq, qv
    cdef bint nonzero, match

    for b in range(nb):
        kplus = 0
        if with_target:
            for j in range(n):
                for r in range(n):
                    sim[j, r] = 0
        for k in range(keff[b]):
            lq = log1p(-pks[b, k])
            state[0] = 0
            for idx in range(m - 2, -1, -1):  # topo reversed: parents first
                v = topo[idx]
                qv = -expm1(edge_len[v] * lq)
                if state[parent[v]]:
                    state[v] = 1
                elif edge_u[b, k, v] < qv:
                    state[v] = 1
                else:
                    state[v] = 0
            nonzero = False
            for j in range(n):
                leaf[j] = state[leaf_nodes[j]]
                if leaf[j]:
                    nonzero = True
            if nonzero:
                kplus += 1
                if with_target:
                    for j in range(n):
                        if leaf[j]:
                            for r in range(n):
                                if leaf[r]:
                                    sim[j, r] += 1
        out_kplus[b] = kplus
        if with_target:
            match = True
            for j in range(n):
                for r in range(n):
                    if sim[j, r] != target[j, r]:
                        match = False
                        break
                if not match:
                    break
            if match:
                hits += 1
    return hits
