"""Shared test oracles: finite differences and gradient comparison."""

import numpy as np


def finite_diff_param_grads(loss_fn, params, h=1e-5):
    """Central-difference gradient of a scalar loss w.r.t. each param array.

    `loss_fn` re-evaluates the loss with the params' current in-place values.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            lp = loss_fn()
            p[idx] = old - h
            lm = loss_fn()
            p[idx] = old
            g[idx] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-4):
    """max |a - n| / max(|a|, |n|, floor) over all entries of all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
