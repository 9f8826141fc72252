"""Architecture weights: Softmax and Gumbel-Softmax relaxations, parameter penalty."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from ..tensor import Tensor, ops


class ArchError(ValueError):
    pass


def _logits(alpha) -> Tensor:
    t = alpha if isinstance(alpha, Tensor) else Tensor(np.asarray(alpha, dtype=np.float64))
    if t.ndim != 1 or t.shape[0] < 1:
        raise ArchError(f"architecture logits must be a non-empty vector, got shape {t.shape}")
    return t


def softmax_weights(alpha) -> Tensor:
    """lambda_i = exp(alpha_i) / sum_j exp(alpha_j)."""
    return ops.softmax(_logits(alpha), axis=-1)


def gumbel_noise(n: int, seed) -> np.ndarray:
    """G = -log(-log U), U ~ uniform(0, 1); ``seed`` is an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.uniform(size=n)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def gumbel_weights(alpha, temperature: float, seed=None, noise: np.ndarray | None = None) -> Tensor:
    """Gumbel-Softmax weights softmax((log softmax(alpha) + G) / T).

    The logits are normalised before the noise is added so the log is always
    defined. Pass ``noise`` to reuse fixed draws instead of sampling.
    """
    if not temperature > 0:
        raise ArchError(f"temperature must be positive, got {temperature}")
    a = _logits(alpha)
    g = gumbel_noise(a.shape[0], seed) if noise is None else np.asarray(noise, dtype=np.float64)
    if g.shape != a.shape:
        raise ArchError(f"noise shape {g.shape} does not match logits {a.shape}")
    return ops.softmax(ops.scale(ops.log_softmax(a) + g, 1.0 / temperature), axis=-1)


def expected_cost(weights: Mapping[str, Tensor], costs: Mapping[str, np.ndarray]) -> Tensor:
    """sum over searched layers of sum_i lambda_i P_i."""
    total = None
    for key, lam in weights.items():
        c = np.asarray(costs[key], dtype=np.float64)
        if c.shape != lam.shape:
            raise ArchError(f"{key}: {c.shape[0]} costs for {lam.shape[0]} candidates")
        term = ops.sum(lam * c)
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros(()))


def penalized_loss(loss: Tensor, weights: Mapping[str, Tensor], costs: Mapping[str, np.ndarray],
                   eta: float, cost_scale: float = 1.0) -> Tensor:
    """loss + eta * sum_{i,l} lambda_i^l P_i^l / cost_scale.

    ``weights`` are the normalised architecture weights (softmax of the
    logits), so the penalty is the expected parameter count.
    """
    if eta < 0:
        raise ArchError(f"penalty factor must be >= 0, got {eta}")
    if eta == 0:
        return loss
    return loss + ops.scale(expected_cost(weights, costs), eta / cost_scale)
