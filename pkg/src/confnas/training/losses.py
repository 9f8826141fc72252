"""CTC, attention cross-entropy and their interpolation."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.core import make_node


class LossError(ValueError):
    pass


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def ctc_alpha_beta(lp: np.ndarray, target: Sequence[int], blank: int = 0):
    """Log-domain forward and backward variables over the blank-extended target.

    Both include the emission at their own frame. Returns (alpha, beta, logp)
    where logp is the total log-probability of the target (-inf if no
    alignment fits in the available frames).
    """
    lp = np.asarray(lp, dtype=np.float64)
    t_len = lp.shape[0]
    ext = _extend(target, blank)
    s_len = ext.size
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # (T, S)
    alpha = np.full((t_len, s_len), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, t_len):
            prev = alpha[t - 1]
            acc = prev.copy()
            acc[1:] = np.logaddexp(acc[1:], prev[:-1])
            acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
            alpha[t] = acc + emit[t]
        beta = np.full((t_len, s_len), -np.inf)
        beta[-1, -1] = emit[-1, -1]
        if s_len > 1:
            beta[-1, -2] = emit[-1, -2]
        skip_next = np.zeros(s_len, dtype=bool)
        skip_next[:-2] = skip[2:]
        for t in range(t_len - 2, -1, -1):
            nxt = beta[t + 1]
            acc = nxt.copy()
            acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
            acc[:-2] = np.where(skip_next[:-2], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
            beta[t] = acc + emit[t]
    logp = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s_len > 1 else alpha[-1, -1]
    return alpha, beta, float(logp)


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames any alignment of ``target`` needs (repeats need a blank)."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def ctc_nll_and_grad(lp: np.ndarray, target: Sequence[int], blank: int = 0):
    """(-log p(target), d/d lp). Infeasible pairs give (inf, zeros)."""
    lp = np.asarray(lp, dtype=np.float64)
    if len(target) == 0:
        raise LossError("empty CTC target")
    if min_frames(target) > lp.shape[0]:
        return np.inf, np.zeros_like(lp)
    alpha, beta, logp = ctc_alpha_beta(lp, target, blank)
    ext = _extend(target, blank)
    gamma = np.exp(alpha + beta - lp[:, ext] - logp)  # (T, S) occupation
    grad = np.zeros_like(lp)
    np.add.at(grad.T, ext, -gamma.T)
    return -logp, grad


def ctc_loss(log_probs, target: Sequence[int], blank: int = 0) -> Tensor:
    """Scalar CTC loss for one (T, V) log-probability matrix."""
    log_probs = log_probs if isinstance(log_probs, Tensor) else Tensor(log_probs)
    nll, grad = ctc_nll_and_grad(log_probs.data, target, blank)
    return make_node(np.asarray(nll), (log_probs,), lambda g: (g * grad,), "ctc_loss")


def ctc_loss_batch(log_probs: Tensor, lengths: Sequence[int],
                   targets: Sequence[Sequence[int]], blank: int = 0) -> tuple[Tensor, np.ndarray]:
    """Per-utterance CTC losses (B,) from padded (B, T, V) log-probs.

    Also returns a boolean array marking utterances whose target cannot be
    aligned in the available frames (their loss is inf, gradient zero). A
    non-finite loss on an alignable utterance is left in place so that
    divergence surfaces to the caller.
    """
    b = log_probs.shape[0]
    nll = np.zeros(b)
    grads = np.zeros_like(log_probs.data)
    bad = np.zeros(b, dtype=bool)
    for i in range(b):
        n = int(lengths[i])
        nll[i], grads[i, :n] = ctc_nll_and_grad(log_probs.data[i, :n], targets[i], blank)
        bad[i] = min_frames(targets[i]) > n

    def bw(g):
        return (grads * g[:, None, None],)
    return make_node(nll, (log_probs,), bw, "ctc_loss"), bad


def ctc_loss_mean(log_probs: Tensor, lengths: Sequence[int],
                  targets: Sequence[Sequence[int]], blank: int = 0) -> tuple[Tensor, np.ndarray]:
    """Mean CTC loss over the alignable utterances of a padded batch."""
    per_utt, bad = ctc_loss_batch(log_probs, lengths, targets, blank)
    n_ok = int((~bad).sum())
    if n_ok == 0:
        raise LossError("no utterance in the batch is CTC-alignable")
    w = (~bad) / float(n_ok)
    value = np.asarray(float(np.sum(np.where(bad, 0.0, per_utt.data) * w)))
    return make_node(value, (per_utt,), lambda g: (g * w,), "mean_finite"), bad


def smoothed_targets(labels: np.ndarray, vocab_size: int, smoothing: float,
                     pad: int = -1) -> np.ndarray:
    """(B, L, V) target distributions; rows for ``pad`` labels are zero."""
    labels = np.asarray(labels)
    q = np.full(labels.shape + (vocab_size,), smoothing / vocab_size)
    valid = labels != pad
    idx = np.where(valid, labels, 0)
    np.put_along_axis(q, idx[..., None], (1.0 - smoothing) + smoothing / vocab_size, axis=-1)
    q[~valid] = 0.0
    return q


def attention_ce_loss(logits: Tensor, labels: np.ndarray, smoothing: float = 0.0,
                      pad: int = -1) -> Tensor:
    """Mean token cross-entropy of (B, L, V) logits against (B, L) labels."""
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise LossError(f"logits {logits.shape} do not match labels {labels.shape}")
    q = smoothed_targets(labels, logits.shape[-1], smoothing, pad)
    n_tok = int((labels != pad).sum())
    if n_tok == 0:
        raise LossError("no target tokens")
    logp = ops.log_softmax(logits, axis=-1)
    return ops.scale(ops.sum(logp * q), -1.0 / n_tok)


def joint_loss(ctc: Tensor, att: Tensor, ctc_weight: float) -> Tensor:
    """ctc_weight * ctc + (1 - ctc_weight) * att."""
    if not 0.0 <= ctc_weight <= 1.0:
        raise LossError(f"ctc_weight must be in [0, 1], got {ctc_weight}")
    if ctc_weight == 1.0:
        return ctc
    if ctc_weight == 0.0:
        return att
    return ops.scale(ctc, ctc_weight) + ops.scale(att, 1.0 - ctc_weight)
