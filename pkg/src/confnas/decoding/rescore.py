"""N-best rescoring with an n-gram LM and two-pass cross-system combination."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..model import network as net
from ..tensor import Tensor
from ..training.losses import ctc_nll_and_grad
from .beam import encode_utterance
from .lm import NGramLM
from .nbest import NBestError, NBestList


def lm_rescore(nbest: NBestList, lm: NGramLM, lm_weight: float) -> NBestList:
    """Fill lm_logprob (word level) and add lm_weight * lm_logprob to each combined score."""
    out = []
    for h in nbest.hyps:
        lp = lm.sentence_logprob(h.words())
        out.append(h.with_scores(lm_logprob=lp, combined_score=h.combined_score + lm_weight * lp))
    return nbest.rescored(out)


# A rescorer maps an N-best list to one (score, att, ctc) triple per hypothesis;
# att/ctc may be None when the system has no such components.
Rescorer = Callable[[NBestList], Sequence[tuple[float, float | None, float | None]]]


class ConformerRescorer:
    """Sequence log-likelihoods (1 - w) * att + w * ctc from a trained model."""

    def __init__(self, model, features: dict[str, np.ndarray], ctc_weight: float = 0.3):
        self.model = model
        self.features = features
        self.ctc_weight = ctc_weight

    def __call__(self, nbest: NBestList):
        if nbest.utt_id not in self.features:
            raise NBestError(f"no features for utterance {nbest.utt_id}")
        return score_sequences(self.model, self.features[nbest.utt_id],
                               [h.tokens for h in nbest.hyps], self.ctc_weight)


class LMRescorer:
    """Pseudo-acoustic system: a weighted word LM score."""

    def __init__(self, lm: NGramLM, weight: float = 1.0):
        self.lm = lm
        self.weight = weight

    def __call__(self, nbest: NBestList):
        return [(self.weight * self.lm.sentence_logprob(h.words()), None, None) for h in nbest.hyps]


def score_sequences(model, features: np.ndarray, token_seqs: Sequence[Sequence[str]],
                    ctc_weight: float = 0.3) -> list[tuple[float, float, float]]:
    """Teacher-forced (score, att_logprob, ctc_logprob) of each symbol sequence."""
    if not token_seqs:
        return []
    p, config, enc, lens, lp = encode_utterance(model, features)
    vocab = config.vocab
    ids = [[vocab.index(t) for t in seq] for seq in token_seqs]
    length = max(len(x) for x in ids) + 1
    n = len(ids)
    tin = np.full((n, length), vocab.eos, dtype=np.int64)
    lab = np.full((n, length), -1, dtype=np.int64)
    for i, y in enumerate(ids):
        tin[i, 0] = vocab.sos
        tin[i, 1:len(y) + 1] = y
        lab[i, :len(y)] = y
        lab[i, len(y)] = vocab.eos
    memory = Tensor(np.repeat(enc.data, n, axis=0))
    logits = net.decode_logits(p, config, memory, np.repeat(lens, n), tin).data
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = []
    for i, y in enumerate(ids):
        att = float(sum(logp[i, t, lab[i, t]] for t in range(len(y) + 1)))
        if y:
            nll, _ = ctc_nll_and_grad(lp, y, vocab.blank)
            ctc = -float(nll)
        else:
            ctc = float(lp[:, vocab.blank].sum())
        out.append(((1 - ctc_weight) * att + ctc_weight * ctc, att, ctc))
    return out


def cross_system_combine(firstpass: NBestList, rescorer: Rescorer, beta: float) -> NBestList:
    """Interpolate beta * (system A score) + (1 - beta) * (system B score).

    System A's score is the first-pass list's current combined score (after
    any LM rescoring); it is kept in firstpass_logprob. When system B
    provides attention/CTC components they replace the hypothesis's.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    scores = rescorer(firstpass)
    if len(scores) != len(firstpass.hyps):
        raise NBestError(f"{firstpass.utt_id}: rescorer returned {len(scores)} scores "
                         f"for {len(firstpass.hyps)} hypotheses")
    out = []
    for h, (sb, att, ctc) in zip(firstpass.hyps, scores):
        sa = h.combined_score
        kw = dict(firstpass_logprob=sa, combined_score=beta * sa + (1.0 - beta) * sb)
        if att is not None:
            kw["att_logprob"] = att
        if ctc is not None:
            kw["ctc_logprob"] = ctc
        out.append(h.with_scores(**kw))
    return firstpass.rescored(out)


def two_pass(firstpass: Sequence[NBestList], rescorer: Rescorer, beta: float,
             lm: NGramLM | None = None, lm_weight: float = 0.0,
             order: str = "lm-then-combine") -> list[NBestList]:
    """LM rescoring and cross-system combination in either order."""
    if order not in ("lm-then-combine", "combine-then-lm"):
        raise ValueError(f"unknown order {order!r}")
    out = []
    for nb in firstpass:
        if lm is not None and order == "lm-then-combine":
            nb = lm_rescore(nb, lm, lm_weight)
        nb = cross_system_combine(nb, rescorer, beta)
        if lm is not None and order == "combine-then-lm":
            nb = lm_rescore(nb, lm, lm_weight)
        out.append(nb)
    return out

