"""Shared test oracles: finite differences and a naive forward pass."""

from __future__ import annotations

import numpy as np


def naive_mlp_forward(weights, biases, hidden_act, out_act, x):
    """Straight-line re-implementation of the MLP forward pass."""
    a = np.asarray(x, dtype=np.float64)
    n = len(weights)
    for i in range(n):
        z = weights[i] @ a + biases[i]
        act = out_act if i == n - 1 else hidden_act
        if act == "relu":
            a = np.where(z > 0, z, 0.0)
        elif act == "tanh":
            a = np.tanh(z)
        else:
            a = z
    return a


def finite_diff_scalar(f, arrays, block, index, h=1e-5):
    """Central finite difference of scalar f(arrays) at one coordinate."""
    plus = [a.copy() for a in arrays]
    minus = [a.copy() for a in arrays]
    plus[block].flat[index] += h
    minus[block].flat[index] -= h
    return (f(plus) - f(minus)) / (2.0 * h)


def gradcheck(f, arrays, grads, rng, n_probes=20, h=1e-5, rtol=1e-4,
              floor=1e-4):
    """Compare analytic grads against central differences at random coords.

    f(arrays) -> scalar must be deterministic. Returns the worst relative
    error seen (relative to max(|analytic|, |numeric|, floor)).
    """
    worst = 0.0
    for _ in range(n_probes):
        block = int(rng.integers(0, len(arrays)))
        index = int(rng.integers(0, arrays[block].size))
        numeric = finite_diff_scalar(f, arrays, block, index, h)
        analytic = float(grads[block].flat[index])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
        assert err < rtol, (
            f"gradient mismatch at block {block} index {index}: "
            f"analytic {analytic:.10g} vs numeric {numeric:.10g} (rel {err:.3g})")
    return worst
