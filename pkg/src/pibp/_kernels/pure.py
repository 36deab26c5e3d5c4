"""Pure numpy kernels (reference implementation of the compiled core).

Tree messages are kept in log space throughout, which is immune to
underflow; the compiled backend uses normalized linear-space messages
instead. Both compute the same quantities to floating-point accuracy.

State vector convention shared with the compiled backend (``scal``):
    scal[0] logdet(M)          M = Z'Z + c I, c = sigma_x^2 / sigma_a^2
    scal[1] tr(M^{-1} S)       S = Z' XX' Z
    scal[2] collapsed log-likelihood
    scal[3] c
    scal[4] p (number of data columns)
    scal[5] sigma_x^2
    scal[6] accepted-flip counter (grows until the owner resets it)
"""

import numpy as np
from scipy.linalg import cho_solve

BACKEND_NAME = "pure"

_NEG_INF = -np.inf


def up_logprob(child_ptr, child_idx, topo, parent, q, leaf_nodes, leaf_vals):
    """Log-probability of a leaf configuration under the once-on edge process.

    ``q[v]`` is the firing probability of the edge above node ``v``; the root
    starts at state 0 and a leaf is 1 iff some edge on its root path fired.
    One upward pass, O(#nodes).
    """
    m = parent.shape[0]
    la = np.zeros((m, 2))
    la[leaf_nodes, 0] = np.where(leaf_vals == 0, 0.0, _NEG_INF)
    la[leaf_nodes, 1] = np.where(leaf_vals == 1, 0.0, _NEG_INF)
    with np.errstate(divide="ignore"):  # q = 0 on zero-length edges
        logq = np.log(q)
    log1q = np.log1p(-q)
    for v in topo[:-1]:
        msg1 = la[v, 1]
        msg0 = np.logaddexp(logq[v] + la[v, 1], log1q[v] + la[v, 0])
        p = parent[v]
        la[p, 0] += msg0
        la[p, 1] += msg1
    return float(la[0, 0])


def _row_prior_logits(i, Z, Q, child_ptr, child_idx, topo, parent, leaf_nodes):
    """Log d1 - log d0 for leaf ``i`` in every column, others held fixed.

    Columns are independent given the other leaves, and none of the upward
    messages involve leaf ``i``, so one vectorized pass serves the whole row
    even though entries are resampled sequentially.
    """
    m = parent.shape[0]
    K = Z.shape[1]
    with np.errstate(divide="ignore"):  # zero-length edges never fire
        logq = np.log(Q)  # (K, m)
    log1q = np.log1p(-Q)
    la = np.zeros((m, 2, K))
    zt = Z.astype(np.float64)
    la[leaf_nodes, 0, :] = np.where(zt == 0, 0.0, _NEG_INF)
    la[leaf_nodes, 1, :] = np.where(zt == 1, 0.0, _NEG_INF)
    la[leaf_nodes[i], :, :] = 0.0
    for v in topo[:-1]:
        msg1 = la[v, 1, :]
        msg0 = np.logaddexp(logq[:, v] + la[v, 1, :], log1q[:, v] + la[v, 0, :])
        p = parent[v]
        la[p, 0, :] += msg0
        la[p, 1, :] += msg1

    path = []
    v = int(leaf_nodes[i])
    while v != 0:
        path.append(v)
        v = int(parent[v])
    path.reverse()

    d0 = np.zeros(K)
    d1 = np.full(K, _NEG_INF)
    v = 0
    for c in path:
        kids = child_idx[child_ptr[v] : child_ptr[v + 1]]
        sel = kids[kids != c]
        if sel.size:
            msg0_all = np.logaddexp(
                logq[:, sel].T + la[sel, 1, :], log1q[:, sel].T + la[sel, 0, :]
            )
            sib0 = msg0_all.sum(axis=0)
            sib1 = la[sel, 1, :].sum(axis=0)
        else:
            sib0 = np.zeros(K)
            sib1 = np.zeros(K)
        e0 = d0 + sib0
        e1 = d1 + sib1
        nd1 = np.logaddexp(e0 + logq[:, c], e1)
        d0 = e0 + log1q[:, c]
        d1 = nd1
        v = c
    return d0, d1


def leaf_conditional_logits(child_ptr, child_idx, topo, parent, q, leaf_nodes, leaf_vals, i):
    """(log d0, log d1) for leaf ``i`` given the other leaves' values."""
    Z = np.asarray(leaf_vals, dtype=np.uint8).reshape(-1, 1)
    d0, d1 = _row_prior_logits(
        i, Z, q.reshape(1, -1), child_ptr, child_idx, topo, parent, leaf_nodes
    )
    return float(d0[0]), float(d1[0])


def _flip_candidate(i, k, Z, XXT, G, H, S, cholL, c, p_obs, sigx2, T):
    """Exact log-likelihood change for flipping Z[i,k], via rank-2 identities."""
    K = G.shape[0]
    s = 1.0 - 2.0 * Z[i, k]
    zrow = Z[i].astype(np.float64)
    a = np.zeros(K)
    a[k] = 1.0
    b = s * zrow
    b[k] += 0.5
    d = s * H[:, i]
    d = d.copy()
    d[k] += 0.5 * XXT[i, i]

    at = cho_solve((cholL, True), a)
    bt = cho_solve((cholL, True), b)
    t_ab = float(b @ at)
    t_aa = float(at[k])
    t_bb = float(b @ bt)
    detW = (1.0 + t_ab) ** 2 - t_aa * t_bb
    if detW <= 0.0:
        raise FloatingPointError("flip update lost positive definiteness")
    dlogdet = np.log(detW)

    dta = float(d @ at)
    dtb = float(d @ bt)
    u1 = S @ at + a * dta + d * at[k]
    u2 = S @ bt + a * dtb + d * bt[k]
    q11 = float(bt @ u1)
    q12 = float(bt @ u2)
    q21 = float(at @ u1)
    q22 = float(at @ u2)
    corr = ((1.0 + t_ab) * q11 - t_bb * q21 - t_aa * q12 + (1.0 + t_ab) * q22) / detW
    t_new = T + 2.0 * dta - corr
    dll = -0.5 * p_obs * dlogdet + (t_new - T) / (2.0 * sigx2)
    return dll, dlogdet, t_new, s


def _commit_flip(i, k, s, Z, colsum, XXT, G, H, S, cholL, c):
    zrow = Z[i].astype(np.float64)
    hi = H[:, i].copy()
    G[k, :] += s * zrow
    G[:, k] += s * zrow
    G[k, k] += 1.0
    S[k, :] += s * hi
    S[:, k] += s * hi
    S[k, k] += XXT[i, i]
    H[k, :] += s * XXT[i, :]
    Z[i, k] ^= 1
    colsum[k] += int(s)
    K = G.shape[0]
    cholL[:, :] = np.linalg.cholesky(G + c * np.eye(K))


def gibbs_row(
    i,
    Z,
    colsum,
    Q,
    child_ptr,
    child_idx,
    topo,
    parent,
    leaf_nodes,
    XXT,
    G,
    H,
    S,
    cholL,
    scal,
    uniforms,
    allow_empty,
):
    """Resample every entry of row ``i`` from its full conditional.

    Entries whose column would otherwise become empty are pinned at 1 unless
    ``allow_empty`` (the truncated test mode): the working state only carries
    nonzero columns, and removals go through the explicit death move instead.
    Returns the number of committed flips; mutates Z, the caches and scal.
    """
    K = Z.shape[1]
    if K == 0:
        return 0
    have_like = XXT.shape[0] > 0
    d0, d1 = _row_prior_logits(i, Z, Q, child_ptr, child_idx, topo, parent, leaf_nodes)
    flips = 0
    for k in range(K):
        if not allow_empty and colsum[k] == 1 and Z[i, k] == 1:
            continue
        u = uniforms[k]
        if np.isinf(d0[k]) and np.isinf(d1[k]):
            continue
        logit = d1[k] - d0[k]
        if have_like:
            dll, dlogdet, t_new, s = _flip_candidate(
                i, k, Z, XXT, G, H, S, cholL, scal[3], scal[4], scal[5], scal[1]
            )
            logit += dll if Z[i, k] == 0 else -dll
        new = 1 if (np.log(u) - np.log1p(-u)) < logit else 0
        if new != Z[i, k]:
            if have_like:
                _commit_flip(i, k, s, Z, colsum, XXT, G, H, S, cholL, scal[3])
                scal[0] += dlogdet
                scal[1] = t_new
                scal[2] += dll
            else:
                Z[i, k] ^= 1
                colsum[k] += 1 if new else -1
            scal[6] += 1.0
            flips += 1
    return flips


def prior_draws_chunk(
    child_ptr,
    child_idx,
    topo,
    parent,
    leaf_nodes,
    edge_len,
    pks,
    keff,
    edge_u,
    target,
    out_kplus,
):
    """Forward-sample a chunk of prior draws, count exact similarity hits.

    ``pks`` is (B, Kc) stick weights, ``keff`` the per-draw number of live
    columns, ``edge_u`` (B, Kc, m) pre-drawn uniforms. When ``target`` has
    size 0 only the nonzero-column counts are recorded.
    """
    B, Kc = pks.shape
    m = parent.shape[0]
    n = leaf_nodes.shape[0]
    # ancestor-edge membership: leaf i is below edge v
    anc = np.zeros((n, m), dtype=bool)
    for j in range(n):
        v = int(leaf_nodes[j])
        while v != 0:
            anc[j, v] = True
            v = int(parent[v])
    with np.errstate(invalid="ignore"):
        q = -np.expm1(np.log1p(-pks)[:, :, None] * edge_len[None, None, :])
    fired = edge_u < q
    live = np.arange(Kc)[None, :] < keff[:, None]
    fired &= live[:, :, None]
    zvals = np.tensordot(fired, anc, axes=([2], [1])) > 0  # (B, Kc, n)
    nonzero = zvals.any(axis=2)
    out_kplus[:] = nonzero.sum(axis=1)
    if target.size == 0:
        return 0
    zf = zvals.astype(np.int64)
    sims = np.einsum("bki,bkj->bij", zf, zf)
    return int(np.sum((sims == target[None, :, :]).all(axis=(1, 2))))
