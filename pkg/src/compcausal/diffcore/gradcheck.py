"""Central finite-difference gradient check."""

from __future__ import annotations

import numpy as np


def grad_check(f, params: dict, eps: float = 1e-5, analytic: dict | None = None, names=None) -> float:
    """Max relative error between analytic and numeric gradients.

    ``f(params)`` must return ``(loss_value, grads)`` when ``analytic`` is
    None, otherwise a float. Parameters are perturbed in place and restored.
    The error for one parameter tensor is
    ``||a - n|| / max(||a||, ||n||, 1e-8)``; the maximum over tensors is
    returned. Inputs should sit away from relu/hinge kinks.
    """
    if analytic is None:
        _, analytic = f(params)

        def value(p):
            return float(f(p)[0])
    else:
        def value(p):
            return float(f(p))

    worst = 0.0
    for name in names if names is not None else list(analytic):
        if name not in params:
            continue
        p = params[name]
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value(params)
            flat[i] = orig - eps
            fm = value(params)
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2 * eps)
        a = analytic[name]
        err = np.linalg.norm(a - numeric) / max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, float(err))
    return worst
