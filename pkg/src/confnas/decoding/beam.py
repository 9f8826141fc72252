"""Joint attention/CTC label-synchronous beam search producing N-best lists."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import network as net
from ..model.config import Vocab
from ..model.surgery import unpack
from ..tensor import Tensor
from .ctc_prefix import CTCPrefixScorer, PrefixState
from .nbest import Hypothesis, NBestList


class DecodeError(ValueError):
    pass


@dataclass
class _Live:
    ids: tuple[int, ...]
    att: float
    ctc: float
    ctc_state: PrefixState

    def score(self, w: float) -> float:
        return (1.0 - w) * self.att + w * self.ctc


def encode_utterance(model, features: np.ndarray):
    """(encoder memory Tensor, encoder length, CTC log-probs (T', V)) of one utterance."""
    base, lhuc = unpack(model)
    p = net.param_tensors(base)
    feats = np.asarray(features, dtype=np.float64)[None]
    enc, lens = net.encode(p, base.config, feats, np.array([feats.shape[1]]), lhuc=lhuc)
    lp = net.ctc_log_probs(p, enc).data[0, :lens[0]]
    return p, base.config, enc, lens, lp


def _next_logprobs(p, config, enc, lens, prefixes: list[tuple[int, ...]]) -> np.ndarray:
    """Decoder log-probs of the next token after each prefix, (H, V)."""
    vocab = config.vocab
    length = max(len(x) for x in prefixes) + 1
    tin = np.full((len(prefixes), length), vocab.eos, dtype=np.int64)
    for i, ids in enumerate(prefixes):
        tin[i, 0] = vocab.sos
        tin[i, 1:len(ids) + 1] = ids
    memory = enc if len(prefixes) == 1 else Tensor(np.repeat(enc.data, len(prefixes), axis=0))
    mlens = np.repeat(lens, len(prefixes))
    logits = net.decode_logits(p, config, memory, mlens, tin).data
    last = np.array([len(x) for x in prefixes])
    z = logits[np.arange(len(prefixes)), last]
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def beam_search_nbest(model, features: np.ndarray, utt_id: str = "", beam: int = 10,
                      nbest: int = 10, ctc_weight: float = 0.3,
                      max_len: int | None = None) -> NBestList:
    """Beam search scored by (1 - w) * attention + w * CTC prefix log-probability.

    Live prefixes are pruned by score divided by token count; finished
    hypotheses (after the end sentinel) are ranked by the raw score. Prefixes
    reaching ``max_len`` (default: encoder length) may only end.
    """
    if beam < 1 or nbest < 1:
        raise DecodeError(f"beam and nbest must be >= 1, got {beam}, {nbest}")
    if not 0.0 <= ctc_weight <= 1.0:
        raise DecodeError(f"ctc_weight must be in [0, 1], got {ctc_weight}")
    p, config, enc, lens, lp = encode_utterance(model, features)
    vocab: Vocab = config.vocab
    scorer = CTCPrefixScorer(lp, vocab.blank)
    max_len = int(lens[0]) if max_len is None else max_len
    real = np.array(vocab.real_ids, dtype=np.int64)
    w = ctc_weight
    live = [_Live((), 0.0, 0.0, scorer.initial())]
    finished: dict[tuple[int, ...], tuple[float, float]] = {}
    while live:
        att_lp = _next_logprobs(p, config, enc, lens, [h.ids for h in live])
        cands: list[_Live] = []
        for h, row in zip(live, att_lp):
            # ending the prefix
            end_att = h.att + row[vocab.eos]
            end_ctc = h.ctc_state.full_logprob() if w > 0 else 0.0
            finished[h.ids] = (end_att, end_ctc)
            if len(h.ids) >= max_len:
                continue
            if w > 0:
                psi, states = scorer.extend(h.ctc_state, real)
            else:
                psi, states = np.zeros(real.size), [h.ctc_state] * real.size
            for j, c in enumerate(real):
                cands.append(_Live(h.ids + (int(c),), h.att + row[c], float(psi[j]), states[j]))
        cands = [c for c in cands if np.isfinite(c.score(w))]
        cands.sort(key=lambda c: (-c.score(w) / len(c.ids), c.ids))
        live = cands[:beam]
        if finished and live:
            # both prefix scores only decrease with extension, so stop once no
            # live prefix can beat the N-th finished hypothesis
            ranked = sorted(((1 - w) * a + w * b for a, b in finished.values()), reverse=True)
            if len(ranked) >= nbest and max(c.score(w) for c in live) < ranked[nbest - 1]:
                break
    hyps = []
    for ids, (a, c) in finished.items():
        s = (1 - w) * a + w * c
        if not np.isfinite(s):
            continue
        hyps.append(Hypothesis(tuple(vocab.symbols[i] for i in ids), float(a),
                               float(c) if w > 0 else None, None, None, float(s)))
    hyps.sort(key=lambda h: (-h.combined_score, h.tokens))
    return NBestList(utt_id, hyps[:nbest])
