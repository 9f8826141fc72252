"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .core import Tensor, backward


def grad_check(fn: Callable[[Mapping[str, Tensor]], Tensor],
               point: Mapping[str, np.ndarray], eps: float = 1e-6) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``fn`` maps a dict of leaf tensors to a scalar tensor. Every element of
    every array in ``point`` is perturbed by +-eps. The relative error of one
    element is |a - n| / max(|a|, |n|, 1e-12).
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
              for k, v in point.items()}
    out = fn(leaves)
    backward(out)
    worst = 0.0
    for name, base in point.items():
        base = np.array(base, dtype=np.float64)
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += eps
            minus[i] -= eps
            fp = _eval(fn, point, name, plus.reshape(base.shape))
            fm = _eval(fn, point, name, minus.reshape(base.shape))
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


def _eval(fn, point, name, value) -> float:
    args = {k: Tensor(value if k == name else v) for k, v in point.items()}
    return float(fn(args).data)
