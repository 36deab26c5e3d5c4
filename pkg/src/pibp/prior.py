"""Stick-breaking weights and the tree-structured column process.

A column with weight p_k turns leaves on through a once-on-always-on
process: each edge of length t fires independently with probability
1 - (1-p_k)^t, and a leaf is 1 iff some edge on its root path fired.
Because every root-to-leaf depth is 1, the marginal of each leaf is
exactly p_k. Exact column probabilities and leaf conditionals come from a
single sum-product pass over the tree.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, expit

from . import _kernels
from .model import BinaryFactorMatrix, feature_similarity

EULER_GAMMA = float(np.euler_gamma)

STICK_CUTOFF = 1e-6
MAX_STICK_COLUMNS = 200


class StickState:
    """Beta(alpha,1) stick ratios v_k and their running products p_k."""

    def __init__(self, v, alpha):
        self.v = np.asarray(v, dtype=np.float64)
        if self.v.size and not ((self.v > 0) & (self.v < 1)).all():
            raise ValueError("stick ratios must lie in (0,1)")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)

    @property
    def p(self):
        return np.cumprod(self.v)

    def extend(self, count, rng):
        """Append ``count`` further sticks drawn lazily."""
        extra = rng.beta(self.alpha, 1.0, size=count)
        self.v = np.concatenate([self.v, extra])
        return self


def stick_draw(alpha, count, rng):
    if count < 1:
        raise ValueError("count must be >= 1")
    return StickState(rng.beta(alpha, 1.0, size=count), alpha)


def alpha_log_prior(alpha):
    """Log density of the Gamma(1,1) hyperprior."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return -float(alpha)


def active_column_rate(tree):
    """Expected nonzero-column count per unit alpha.

    A column is nonzero iff any edge fired, which happens with probability
    1-(1-p)^T for total edge length T, so the thinned column ensemble has
    mean alpha * (digamma(T+1) + euler_gamma); for the star tree this is
    alpha * H_n.
    """
    t = tree.total_edge_length
    return float(digamma(t + 1.0) + EULER_GAMMA)


def _check_config(tree, config):
    config = np.asarray(config)
    if config.shape != (tree.n_leaves,):
        raise ValueError(
            f"config length {config.shape} does not match {tree.n_leaves} leaves"
        )
    if config.size and not np.isin(config, (0, 1)).all():
        raise ValueError("config entries must be 0 or 1")
    return config.astype(np.int8)


def column_log_prob(tree, p_k, config):
    """Exact log-probability of one column's leaf configuration."""
    config = _check_config(tree, config)
    q = tree.fire_probs(p_k)
    return _kernels.up_logprob(
        tree.child_ptr, tree.child_idx, tree.topo, tree.parent, q,
        tree.leaf_nodes, config,
    )


def conditional_leaf_prob(tree, p_k, config_rest, i):
    """P(z_ik = 1 | other leaves) under the column process."""
    config = _check_config(tree, config_rest)
    if not 0 <= i < tree.n_leaves:
        raise IndexError("leaf index out of range")
    q = tree.fire_probs(p_k)
    d0, d1 = _kernels.leaf_conditional_logits(
        tree.child_ptr, tree.child_idx, tree.topo, tree.parent, q,
        tree.leaf_nodes, config, i,
    )
    return float(expit(d1 - d0))


def sample_column(tree, p_k, rng):
    """Forward-simulate one column by firing edges independently."""
    q = tree.fire_probs(p_k)
    fired = rng.random(tree.m) < q
    fired[0] = False
    state = np.zeros(tree.m, dtype=bool)
    for v in tree.topo[::-1][1:]:  # parents before children
        state[v] = fired[v] or state[tree.parent[v]]
    return state[tree.leaf_nodes].astype(np.uint8)


def _stick_block(rng, size, alphas):
    u = rng.random(size)
    return u ** (1.0 / alphas[:, None])


def sample_prior_draws(
    tree,
    draws,
    rng,
    alpha=1.0,
    alpha_mode="fixed",
    target_similarity=None,
    p_cut=STICK_CUTOFF,
    max_cols=MAX_STICK_COLUMNS,
    chunk=2048,
):
    """Monte Carlo over the truncated stick prior on the given tree.

    Returns ``(hits, kplus)`` where ``hits`` counts draws whose similarity
    matrix equals ``target_similarity`` exactly (0 when no target is given)
    and ``kplus`` holds the nonzero-column count of every draw. Sticks are
    extended until p_k < p_cut or ``max_cols`` columns.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if alpha_mode not in ("fixed", "gamma_hyperprior"):
        raise ValueError(f"unknown alpha_mode {alpha_mode!r}")
    target = (
        np.zeros((0, 0), dtype=np.int64)
        if target_similarity is None
        else np.ascontiguousarray(target_similarity, dtype=np.int64)
    )
    m = tree.m
    hits = 0
    kplus = np.empty(draws, dtype=np.int64)
    done = 0
    while done < draws:
        b = min(chunk, draws - done)
        if alpha_mode == "gamma_hyperprior":
            alphas = rng.gamma(1.0, 1.0, size=b)
            alphas = np.maximum(alphas, 1e-12)
        else:
            alphas = np.full(b, float(alpha))
        blocks = []
        last = np.ones(b)
        total = 0
        while total < max_cols and (last >= p_cut).any():
            blk = min(16, max_cols - total)
            v = _stick_block(rng, (b, blk), alphas)
            pb = last[:, None] * np.cumprod(v, axis=1)
            blocks.append(pb)
            last = pb[:, -1].copy()
            total += blk
        pks = np.ascontiguousarray(np.concatenate(blocks, axis=1))
        keff = (pks >= p_cut).sum(axis=1).astype(np.int64)
        edge_u = rng.random((b, pks.shape[1], m))
        out_k = np.empty(b, dtype=np.int64)
        hits += _kernels.prior_draws_chunk(
            tree.child_ptr, tree.child_idx, tree.topo, tree.parent,
            tree.leaf_nodes, tree.edge_len,
            pks, keff, edge_u, target, out_k,
        )
        kplus[done : done + b] = out_k
        done += b
    return hits, kplus


def prior_mass_estimate(tree, z0, draws, rng, alpha=1.0, alpha_mode="fixed", chunk=2048):
    """Monte Carlo estimate of P(ZZ' = Z0 Z0') under the truncated prior.

    Returns ``(estimate, standard_error)`` with the binomial standard error.
    """
    if isinstance(z0, BinaryFactorMatrix):
        target = feature_similarity(z0)
    else:
        target = feature_similarity(BinaryFactorMatrix(z0, n=tree.n_leaves))
    hits, _ = sample_prior_draws(
        tree, draws, rng, alpha=alpha, alpha_mode=alpha_mode,
        target_similarity=target, chunk=chunk,
    )
    est = hits / draws
    se = float(np.sqrt(est * (1.0 - est) / draws))
    return est, se
