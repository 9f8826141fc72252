"""Interpolated modified Kneser-Ney n-gram language models and ARPA I/O.

Estimation follows the usual recipe: the highest order uses raw counts,
lower orders use continuation counts (number of distinct left contexts),
except for n-grams that start with ``<s>``, which have no left context and
keep their raw counts. Each order has three discounts D1, D2, D3+ from its
count-of-counts; the lowest order interpolates with a uniform distribution
over the vocabulary (words, ``</s>`` and ``<unk>``; ``<s>`` is never
predicted).

The estimated model is stored in back-off form: for every seen n-gram the
interpolated probability, for every seen context its back-off weight gamma.
That is exactly what an ARPA file holds, so trained and loaded models share
one query path. Probabilities are natural-log internally and log10 on disk.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
LN10 = math.log(10.0)


class LMError(ValueError):
    pass


def modified_kn_discounts(counts: Iterable[int]) -> tuple[float, float, float]:
    """(D1, D2, D3+) from count-of-counts n1..n4.

    When some n_k is zero, or an estimate leaves (0, k], all three fall back
    to the single absolute discount n1 / (n1 + 2 n2) (0.5 if that is undefined).
    """
    coc = Counter(min(c, 4) for c in counts if c > 0)
    n1, n2, n3, n4 = (coc.get(k, 0) for k in (1, 2, 3, 4))
    if n1 and n2 and n3 and n4:
        y = n1 / (n1 + 2 * n2)
        d = (1 - 2 * y * n2 / n1, 2 - 3 * y * n3 / n2, 3 - 4 * y * n4 / n3)
        if all(0 < dk <= k + 1 for k, dk in enumerate(d)):
            return d
    single = n1 / (n1 + 2 * n2) if n1 + n2 > 0 and n1 > 0 else 0.5
    return (single, single, single)


@dataclass
class NGramLM:
    order: int
    vocab: tuple[str, ...]                                   # predictable words incl. </s>, <unk>
    probs: dict[tuple[str, ...], float] = field(default_factory=dict)      # ngram -> ln p
    backoffs: dict[tuple[str, ...], float] = field(default_factory=dict)   # context -> ln gamma
    discounts: dict[int, tuple[float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self._vocab_set = set(self.vocab)

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        """ln p(word | context); only the last order-1 context words matter."""
        if word not in self._vocab_set:
            if UNK not in self._vocab_set:
                raise LMError(f"out-of-vocabulary word {word!r} and no {UNK} class")
            word = UNK
        ctx = tuple(UNK if (w not in self._vocab_set and w != BOS) else w for w in context)
        ctx = ctx[max(len(ctx) - (self.order - 1), 0):] if self.order > 1 else ()
        bow = 0.0
        while True:
            p = self.probs.get(ctx + (word,))
            if p is not None:
                return bow + p
            if not ctx:
                raise LMError(f"no unigram entry for {word!r}")
            bow += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]

    def sentence_logprob(self, words: Sequence[str], eos: bool = True) -> float:
        hist = [BOS]
        total = 0.0
        for w in list(words) + ([EOS] if eos else []):
            total += self.logprob(w, hist)
            hist.append(w)
        return total

    def contexts(self) -> set[tuple[str, ...]]:
        """Every context of a stored n-gram (the empty context included)."""
        return {g[:-1] for g in self.probs}


def _ngrams(sent: Sequence[str], n: int):
    for i in range(len(sent) - n + 1):
        yield tuple(sent[i:i + n])


def train_kn_lm(corpus: Iterable[Sequence[str]], order: int = 4) -> NGramLM:
    """Estimate an interpolated modified-KN model from tokenised sentences."""
    if order < 1:
        raise LMError(f"order must be >= 1, got {order}")
    sents = [[BOS, *s, EOS] for s in corpus]
    if not sents:
        raise LMError("empty LM training corpus")
    words = sorted({w for s in sents for w in s[1:-1]})
    vocab = tuple(words + [EOS, UNK])
    if len(vocab) - 1 < 2:   # <unk> alone does not count as a real symbol
        raise LMError(f"vocabulary of size {len(vocab) - 1} is too small")

    raw: dict[int, Counter] = {n: Counter() for n in range(1, order + 1)}
    for s in sents:
        for n in range(1, order + 1):
            raw[n].update(g for g in _ngrams(s, n) if g != (BOS,))
    # adjusted counts: raw at the top order and for <s>-initial grams, else continuation
    adj: dict[int, Counter] = {order: raw[order]}
    for n in range(order - 1, 0, -1):
        cont = Counter(g[1:] for g in raw[n + 1])
        adj[n] = Counter({g: (c if g[0] == BOS else cont[g]) for g, c in raw[n].items()})

    lm = NGramLM(order, vocab)
    uniform = -math.log(len(vocab))
    for n in range(1, order + 1):
        counts = adj[n]
        d1, d2, d3 = modified_kn_discounts(counts.values())
        lm.discounts[n] = (d1, d2, d3)
        by_ctx: dict[tuple[str, ...], list[tuple[str, int]]] = defaultdict(list)
        for g, c in counts.items():
            if c > 0:
                by_ctx[g[:-1]].append((g[-1], c))
        current: dict[tuple[str, ...], float] = {}
        for ctx, items in by_ctx.items():
            total = sum(c for _, c in items)
            nk = [0, 0, 0]
            for _, c in items:
                nk[min(c, 3) - 1] += 1
            gamma = (d1 * nk[0] + d2 * nk[1] + d3 * nk[2]) / total
            for w, c in items:
                disc = (d1, d2, d3)[min(c, 3) - 1]
                low = uniform if n == 1 else lm.logprob(w, ctx[1:])
                current[ctx + (w,)] = math.log(max(c - disc, 0.0) / total + gamma * math.exp(low))
            lm.backoffs[ctx] = math.log(gamma)
        if n == 1:
            # every vocabulary word gets a unigram, seen or not
            for w in vocab:
                if (w,) not in current:
                    gamma = math.exp(lm.backoffs[()])
                    current[(w,)] = math.log(gamma) + uniform
        # queries at the next order interpolate with the model built so far
        lm.probs.update(current)
    return lm


# ---------------------------------------------------------------- ARPA

def arpa_dumps(lm: NGramLM) -> str:
    by_order: dict[int, list[tuple[str, ...]]] = defaultdict(list)
    for g in lm.probs:
        by_order[len(g)].append(g)
    by_order[1].append((BOS,))
    lines = ["", "\\data\\"]
    for n in range(1, lm.order + 1):
        lines.append(f"ngram {n}={len(by_order[n])}")
    for n in range(1, lm.order + 1):
        lines += ["", f"\\{n}-grams:"]
        for g in sorted(by_order[n]):
            lp = -99.0 if g == (BOS,) else lm.probs[g] / LN10
            parts = [repr(lp), " ".join(g)]
            if n < lm.order and g in lm.backoffs:
                b = lm.backoffs[g]
                parts.append(repr(b / LN10 if math.isfinite(b) else -99.0))
            lines.append("\t".join(parts))
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def arpa_loads(text: str) -> NGramLM:
    order = 0
    section = None
    probs: dict[tuple[str, ...], float] = {}
    backoffs: dict[tuple[str, ...], float] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            section = "data"
            continue
        if line == "\\end\\":
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            section = int(line[1:line.index("-")])
            continue
        if section == "data":
            if line.startswith("ngram "):
                order = max(order, int(line[6:].split("=")[0]))
            continue
        if isinstance(section, int):
            parts = line.split("\t") if "\t" in line else line.split()
            if "\t" in line:
                lp, gram = float(parts[0]), tuple(parts[1].split())
                bo = float(parts[2]) if len(parts) > 2 else None
            else:
                lp, gram = float(parts[0]), tuple(parts[1:1 + section])
                bo = float(parts[1 + section]) if len(parts) > 1 + section else None
            if len(gram) != section:
                raise LMError(f"malformed {section}-gram line: {raw!r}")
            if gram != (BOS,):
                probs[gram] = lp * LN10
            if bo is not None:
                backoffs[gram] = bo * LN10 if bo > -99.0 else -math.inf
    if order == 0:
        raise LMError("no \\data\\ section")
    vocab = tuple(sorted(g[0] for g in probs if len(g) == 1))
    return NGramLM(order, vocab, probs, backoffs)


def save_arpa(path, lm: NGramLM) -> None:
    Path(path).write_text(arpa_dumps(lm), encoding="utf-8")


def load_arpa(path) -> NGramLM:
    p = Path(path)
    if not p.exists():
        raise LMError(f"missing LM file {p}")
    return arpa_loads(p.read_text(encoding="utf-8"))
