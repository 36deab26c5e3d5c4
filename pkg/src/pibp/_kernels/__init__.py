"""Kernel backend selection.

The hot inner loops (tree message passing inside the Gibbs scan, rank-2
likelihood updates, prior-mass Monte Carlo) exist twice: a compiled Cython
extension (``pibp._fastcore``) and a pure numpy implementation
(:mod:`pibp._kernels.pure`). The compiled backend is picked at import time
when available; set ``PIBP_PURE=1`` to force the fallback.

Both backends implement the same array-level contract and consume random
numbers identically (all randomness is drawn by the caller and passed in),
so they can be compared step by step.
"""

import os

from . import pure


def _load_fast():
    try:
        from pibp import _fastcore

        return _fastcore
    except ImportError:
        return None


if os.environ.get("PIBP_PURE", "").strip() not in ("", "0"):
    _active = pure
else:
    _active = _load_fast() or pure

BACKEND = _active.BACKEND_NAME

up_logprob = _active.up_logprob
leaf_conditional_logits = _active.leaf_conditional_logits
gibbs_row = _active.gibbs_row
prior_draws_chunk = _active.prior_draws_chunk


def get_backend(name):
    """Return a specific backend module ("pure" or "fast") for benchmarks/tests."""
    if name == "pure":
        return pure
    if name == "fast":
        fast = _load_fast()
        if fast is None:
            raise ImportError("compiled backend pibp._fastcore is not built")
        return fast
    raise ValueError(f"unknown backend {name!r}")
