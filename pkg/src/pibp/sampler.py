"""MCMC over (Z, sticks, alpha, variances) for IBP/pIBP factor models.

The chain state carries one stick weight per active (nonzero) column. Its
target is the active-column form of the posterior,

    prod_k [ alpha / p_k * P(column_k | p_k, tree) ] * exp(-alpha * C_T)
        * N-likelihood(X | Z) * priors(alpha, variances),

which is the law of the nonzero columns and their weights under the
stick-breaking construction (C_T is the per-alpha active-column rate of
the tree). Moves:

* per-entry Gibbs over active columns, with prior odds from the tree
  sum-product pass and likelihood odds from rank-2 cache updates; an
  entry holding its column's last 1 is pinned (removals are the death
  move's job, which keeps every move exactly invariant),
* Metropolis-Hastings birth/death of singleton columns at the current
  row, proposing tail weights p_new = u * p_min,
* logit random-walk on each stick against its conditional density,
* the conjugate Gamma(1 + K+, 1 - sum_k log v_k) draw for alpha,
* a joint log-space random walk on the variances under Gamma(1,1) priors.

One chain is one sequential unit; all randomness flows through the chain's
own Generator, so runs are reproducible bit-for-bit from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from . import _kernels
from .likelihood import LikelihoodCache
from .model import BinaryFactorMatrix, DataError, NoiseParams, feature_similarity
from .prior import active_column_rate, alpha_log_prior, column_log_prob


class ConfigError(ValueError):
    """Invalid sampler configuration."""


@dataclass
class SamplerConfig:
    iterations: int = 1000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    stick_walk_scale: float = 0.5
    variance_walk_scale: float = 0.3
    max_new_features_per_row: int = 1
    fixed_params: Optional[Tuple[float, float]] = None
    fix_alpha: Optional[float] = None
    alpha_init: float = 1.0
    sigma_init: Tuple[float, float] = (1.0, 1.0)
    # test instrumentation
    frozen_sticks: Optional[Sequence[float]] = None
    null_likelihood: bool = False

    def validate(self):
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ConfigError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.stick_walk_scale <= 0 or self.variance_walk_scale <= 0:
            raise ConfigError("proposal scales must be positive")
        if self.max_new_features_per_row < 1:
            raise ConfigError("max_new_features_per_row must be >= 1")
        if self.fix_alpha is not None and self.fix_alpha <= 0:
            raise ConfigError("fix_alpha must be positive")
        if self.alpha_init <= 0:
            raise ConfigError("alpha_init must be positive")
        if self.frozen_sticks is not None:
            if self.fixed_params is None:
                raise ConfigError("frozen_sticks requires fixed_params")
            for p in self.frozen_sticks:
                if not 0.0 < p < 1.0:
                    raise ConfigError("frozen stick weights must lie in (0,1)")


@dataclass(frozen=True)
class PosteriorSample:
    iteration: int
    z: BinaryFactorMatrix
    similarity: np.ndarray
    alpha: float
    params: NoiseParams
    log_posterior: float
    log_likelihood: float
    k_plus: int


class ChainState:
    """Full state of one chain, including the likelihood cache."""

    RECOMPUTE_EVERY = 100  # accepted flips between full cache rebuilds

    def __init__(self, X, tree, config):
        config.validate()
        self.cfg = config
        self.tree = tree
        self.n = tree.n_leaves
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self.frozen = config.frozen_sticks is not None
        self.allow_empty = self.frozen

        if config.fixed_params is not None:
            sa2, sx2 = config.fixed_params
        else:
            sa2, sx2 = config.sigma_init
        NoiseParams(sa2, sx2)  # validates positivity

        self.alpha = float(
            config.fix_alpha if config.fix_alpha is not None else config.alpha_init
        )

        if self.frozen:
            k0 = len(config.frozen_sticks)
            self.sticks = np.asarray(config.frozen_sticks, dtype=np.float64)
            z_init = np.zeros((self.n, k0), dtype=np.int8)
        else:
            self.sticks = np.zeros(0, dtype=np.float64)
            z_init = np.zeros((self.n, 0), dtype=np.int8)

        if config.null_likelihood:
            self.cache = None
            self.Z = np.ascontiguousarray(z_init)
            self.colsum = self.Z.sum(axis=0, dtype=np.int64)
            self._scal = np.zeros(8, dtype=np.float64)
            self._empty = np.zeros((0, 0), dtype=np.float64)
        else:
            if X is None:
                raise ConfigError("X is required unless null_likelihood is set")
            X = np.asarray(X, dtype=np.float64)
            if X.shape[0] != self.n:
                raise DataError(
                    f"X has {X.shape[0]} rows but the tree has {self.n} leaves"
                )
            self.cache = LikelihoodCache(X, z_init, sa2, sx2)
        self._col_rate = active_column_rate(tree)

    # -- views ---------------------------------------------------------------
    @property
    def Z(self):
        return self.cache.Z if self.cache is not None else self._Z

    @Z.setter
    def Z(self, value):
        self._Z = value

    @property
    def colsum(self):
        return self.cache.colsum if self.cache is not None else self._colsum

    @colsum.setter
    def colsum(self, value):
        self._colsum = value

    @property
    def k(self):
        return self.Z.shape[1]

    @property
    def params(self):
        if self.cache is not None:
            return NoiseParams(self.cache.sigma_a_sq, self.cache.sigma_x_sq)
        sa2, sx2 = self.cfg.fixed_params or self.cfg.sigma_init
        return NoiseParams(sa2, sx2)

    @property
    def loglik(self):
        return self.cache.loglik if self.cache is not None else 0.0

    def fire_prob_matrix(self):
        """(K, m) per-column edge firing probabilities at the current sticks."""
        return np.ascontiguousarray(
            -np.expm1(np.log1p(-self.sticks)[:, None] * self.tree.edge_len[None, :])
        )

    def log_posterior(self):
        """Unnormalized log posterior of the current state."""
        lp = self.loglik
        for k in range(self.k):
            lp += np.log(self.alpha) - np.log(self.sticks[k])
            lp += column_log_prob(self.tree, self.sticks[k], self.Z[:, k])
        lp -= self.alpha * self._col_rate
        lp += alpha_log_prior(self.alpha)
        if self.cfg.fixed_params is None and not self.cfg.null_likelihood:
            p = self.params
            lp += -p.sigma_a_sq - p.sigma_x_sq
        return float(lp)

    def record(self, iteration):
        z = BinaryFactorMatrix(self.Z.astype(np.uint8), n=self.n)
        return PosteriorSample(
            iteration=iteration,
            z=z,
            similarity=feature_similarity(z),
            alpha=self.alpha,
            params=self.params,
            log_posterior=self.log_posterior(),
            log_likelihood=self.loglik,
            k_plus=z.k,
        )

    # -- plumbing shared by the moves ----------------------------------------
    def _kernel_arrays(self):
        if self.cache is not None:
            c = self.cache
            return c.XXT, c.G, c.H, c.S, c.cholL, c.scal
        e = self._empty
        return e, e, e, e, e, self._scal

    def maybe_rebuild(self):
        if self.cache is not None and self.cache.accepted_since_rebuild >= self.RECOMPUTE_EVERY:
            self.cache.rebuild()

    def append_column(self, i, stick, pending):
        if self.cache is not None:
            self.cache.commit_birth(pending)
        else:
            col = np.zeros((self.n, 1), dtype=np.int8)
            col[i, 0] = 1
            self._Z = np.ascontiguousarray(np.hstack([self._Z, col]))
            self._colsum = np.append(self._colsum, 1)
        self.sticks = np.append(self.sticks, stick)

    def remove_column(self, j, pending):
        if self.cache is not None:
            self.cache.commit_drop(pending)
        else:
            keep = np.arange(self.k) != j
            self._Z = np.ascontiguousarray(self._Z[:, keep])
            self._colsum = self._colsum[keep]
        self.sticks = np.delete(self.sticks, j)


def verify_cache(state, rel_tol=1e-6):
    """Debug check that the chain's caches match a fresh recomputation."""
    if state.cache is not None:
        state.cache.verify(rel_tol=rel_tol)


def gibbs_sweep(state):
    """One full pass of per-entry Gibbs updates over all rows and columns."""
    k = state.k
    if k == 0:
        return state
    q = state.fire_prob_matrix()
    tree = state.tree
    xxt, g, h, s, chol, scal = state._kernel_arrays()
    for i in range(state.n):
        uniforms = state.rng.random(k)
        _kernels.gibbs_row(
            i, state.Z, state.colsum, q,
            tree.child_ptr, tree.child_idx, tree.topo, tree.parent, tree.leaf_nodes,
            xxt, g, h, s, chol, scal, uniforms, state.allow_empty,
        )
        state.maybe_rebuild()
    if not state.allow_empty and state.k and int(state.colsum.min()) < 1:
        raise RuntimeError("empty column survived a Gibbs sweep")
    return state


def _birth(state, i):
    k = state.k
    p_min = float(state.sticks.min()) if k else 1.0
    u = 1.0 - state.rng.random()
    p_new = min(u * p_min, 1.0 - 1e-15)
    if p_new <= 0.0:
        return
    config = np.zeros(state.n, dtype=np.uint8)
    config[i] = 1
    col_lp = column_log_prob(state.tree, p_new, config)
    if state.cache is not None:
        dll, pending = state.cache.singleton_birth_delta(i)
    else:
        dll, pending = 0.0, None
    log_ratio = (
        np.log(state.alpha) - np.log(p_new) + col_lp + dll + np.log(p_min)
    )
    if np.log(state.rng.random()) < log_ratio:
        state.append_column(i, p_new, pending)


def _death(state, i):
    k = state.k
    if k == 0:
        return
    j = int(np.argmin(state.sticks))
    if state.colsum[j] != 1 or state.Z[i, j] != 1:
        return
    p_j = float(state.sticks[j])
    if k > 1:
        rest = np.delete(state.sticks, j)
        p_min_after = float(rest.min())
    else:
        p_min_after = 1.0
    config = np.zeros(state.n, dtype=np.uint8)
    config[i] = 1
    col_lp = column_log_prob(state.tree, p_j, config)
    if state.cache is not None:
        dll, pending = state.cache.drop_column_delta(j)
    else:
        dll, pending = 0.0, None
    log_ratio = (
        dll + np.log(p_j) - np.log(state.alpha) - col_lp - np.log(p_min_after)
    )
    if np.log(state.rng.random()) < log_ratio:
        state.remove_column(j, pending)


def propose_new_features(state, i):
    """Birth/death of columns active only at row ``i`` (reversible pair)."""
    if state.frozen:
        return state
    for _ in range(state.cfg.max_new_features_per_row):
        if state.rng.random() < 0.5:
            _birth(state, i)
        else:
            _death(state, i)
    return state


def update_sticks(state):
    """Logit random walk on each active stick against prior x column terms."""
    if state.frozen:
        return state
    scale = state.cfg.stick_walk_scale
    for k in range(state.k):
        p = float(state.sticks[k])
        theta = np.log(p) - np.log1p(-p)
        theta_new = theta + scale * state.rng.standard_normal()
        p_new = float(expit(theta_new))
        if not 0.0 < p_new < 1.0:
            continue
        col = state.Z[:, k]
        log_acc = (
            column_log_prob(state.tree, p_new, col) + np.log1p(-p_new)
        ) - (column_log_prob(state.tree, p, col) + np.log1p(-p))
        if np.log(state.rng.random()) < log_acc:
            state.sticks[k] = p_new
    return state


def sample_alpha_conditional(v, rng):
    """Draw from the conjugate alpha conditional given stick ratios ``v``."""
    v = np.asarray(v, dtype=np.float64)
    rate = 1.0 - float(np.sum(np.log(v)))
    return float(rng.gamma(1.0 + v.size, 1.0 / rate))


def update_alpha(state):
    """Conjugate Gibbs draw for alpha given the active sticks."""
    if state.frozen or state.cfg.fix_alpha is not None:
        return state
    k = state.k
    # the sorted stick ratios telescope: sum_k log v_k = log(min stick)
    rate = 1.0 - (np.log(state.sticks.min()) if k else 0.0)
    state.alpha = float(state.rng.gamma(1.0 + k, 1.0 / rate))
    return state


def update_variances(state):
    """Joint log-space random walk on the variances, Gamma(1,1) priors."""
    if state.frozen or state.cfg.fixed_params is not None or state.cache is None:
        return state
    scale = state.cfg.variance_walk_scale
    sa2, sx2 = state.cache.sigma_a_sq, state.cache.sigma_x_sq
    la, lx = np.log(sa2), np.log(sx2)
    la_new = la + scale * state.rng.standard_normal()
    lx_new = lx + scale * state.rng.standard_normal()
    sa2_new, sx2_new = float(np.exp(la_new)), float(np.exp(lx_new))
    ll_new, pending = state.cache.loglik_for_params(sa2_new, sx2_new)
    log_acc = (
        (ll_new - state.cache.loglik)
        + (-(sa2_new + sx2_new) + la_new + lx_new)
        - (-(sa2 + sx2) + la + lx)
    )
    if np.log(state.rng.random()) < log_acc:
        state.cache.commit_params(pending)
    return state


def run_chain(X, tree, config):
    """Run one seeded chain and return the retained posterior samples."""
    state = ChainState(X, tree, config)
    samples = []
    for it in range(1, config.iterations + 1):
        gibbs_sweep(state)
        for i in range(state.n):
            propose_new_features(state, i)
        update_sticks(state)
        update_alpha(state)
        update_variances(state)
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            samples.append(state.record(it))
    return samples


def select_map_sample(samples):
    """Retained sample with the largest log posterior; earliest wins ties."""
    if not samples:
        raise ValueError("no samples to select from")
    best = samples[0]
    for s in samples[1:]:
        if s.log_posterior > best.log_posterior:
            best = s
    return best
