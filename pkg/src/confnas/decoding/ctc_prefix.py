"""CTC prefix probabilities for label-synchronous beam search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PrefixState:
    """Forward variables of one prefix: log P(prefix, ending in non-blank / blank at t)."""

    r_n: np.ndarray   # (T,)
    r_b: np.ndarray   # (T,)
    last: int         # last label of the prefix, -1 for the empty prefix

    def full_logprob(self) -> float:
        """log p_ctc(prefix | x): the prefix is the complete label sequence."""
        return float(np.logaddexp(self.r_n[-1], self.r_b[-1]))


class CTCPrefixScorer:
    """Incremental CTC prefix scoring over one utterance's (T, V) log-probs."""

    def __init__(self, log_probs: np.ndarray, blank: int = 0):
        self.lp = np.asarray(log_probs, dtype=np.float64)
        self.blank = blank

    def initial(self) -> PrefixState:
        t = self.lp.shape[0]
        return PrefixState(np.full(t, -np.inf), np.cumsum(self.lp[:, self.blank]), -1)

    def extend(self, state: PrefixState, labels) -> tuple[np.ndarray, list[PrefixState]]:
        """Prefix log-probabilities of ``state`` + c for each c in ``labels``.

        The prefix probability sums every alignment whose label sequence
        starts with the extended prefix.
        """
        labels = np.asarray(labels, dtype=np.int64)
        lp = self.lp
        t_len = lp.shape[0]
        k = labels.size
        x = lp[:, labels]                                  # (T, K)
        prev_total = np.logaddexp(state.r_n, state.r_b)    # (T,)
        phi = np.repeat(prev_total[:, None], k, axis=1)
        same = labels == state.last
        phi[:, same] = state.r_b[:, None]
        r_n = np.full((t_len, k), -np.inf)
        r_b = np.full((t_len, k), -np.inf)
        if state.last == -1:
            r_n[0] = x[0]
        psi = r_n[0].copy()
        for t in range(1, t_len):
            r_n[t] = np.logaddexp(r_n[t - 1], phi[t - 1]) + x[t]
            r_b[t] = np.logaddexp(r_b[t - 1], r_n[t - 1]) + lp[t, self.blank]
            psi = np.logaddexp(psi, phi[t - 1] + x[t])
        states = [PrefixState(r_n[:, j].copy(), r_b[:, j].copy(), int(labels[j])) for j in range(k)]
        return psi, states


def ctc_sequence_logprob(log_probs: np.ndarray, labels, blank: int = 0) -> float:
    """log p_ctc(labels | x) by running the prefix recursion to completion."""
    scorer = CTCPrefixScorer(log_probs, blank)
    st = scorer.initial()
    for c in labels:
        _, (st,) = scorer.extend(st, [c])
    return st.full_logprob()
