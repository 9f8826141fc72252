"""N-best hypothesis lists and their line-oriented file format.

File format, one hypothesis per line (UTF-8)::

    utt_id<TAB>rank<TAB>att<TAB>ctc<TAB>lm<TAB>firstpass<TAB>token token ...

Scores are natural-log values written with ``repr`` precision (so they
round-trip exactly); an absent score is ``NA``. Ranks start at 1. The combined
score is not stored: it is recomputed by whoever reads the file.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


class NBestError(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[str, ...]            # output symbols, end sentinel stripped
    att_logprob: float | None = None
    ctc_logprob: float | None = None
    lm_logprob: float | None = None
    firstpass_logprob: float | None = None
    combined_score: float = 0.0

    def with_scores(self, **kw) -> "Hypothesis":
        return replace(self, **kw)

    def words(self, space: str = "<space>") -> list[str]:
        """Whitespace-delimited words recovered from a character sequence."""
        out, cur = [], []
        for tok in self.tokens:
            if tok == space:
                if cur:
                    out.append("".join(cur))
                cur = []
            else:
                cur.append(tok)
        if cur:
            out.append("".join(cur))
        return out


@dataclass
class NBestList:
    utt_id: str
    hyps: list[Hypothesis] = field(default_factory=list)

    def __post_init__(self):
        self.hyps = sorted(self.hyps, key=lambda h: -h.combined_score)
        seen = set()
        for h in self.hyps:
            if h.tokens in seen:
                raise NBestError(f"{self.utt_id}: duplicate hypothesis {' '.join(h.tokens)!r}")
            seen.add(h.tokens)

    def __len__(self) -> int:
        return len(self.hyps)

    def best(self) -> Hypothesis:
        if not self.hyps:
            raise NBestError(f"{self.utt_id}: empty N-best list")
        return self.hyps[0]

    def rescored(self, hyps: Iterable[Hypothesis]) -> "NBestList":
        return NBestList(self.utt_id, list(hyps))


def _fmt(x: float | None) -> str:
    return "NA" if x is None else repr(float(x))


def _parse(s: str) -> float | None:
    return None if s == "NA" else float(s)


def dumps(lists: Sequence[NBestList]) -> str:
    lines = []
    for nb in lists:
        for rank, h in enumerate(nb.hyps, start=1):
            lines.append("\t".join([nb.utt_id, str(rank), _fmt(h.att_logprob), _fmt(h.ctc_logprob),
                                    _fmt(h.lm_logprob), _fmt(h.firstpass_logprob),
                                    " ".join(h.tokens)]))
    return "".join(line + "\n" for line in lines)


def loads(text: str, score=None) -> list[NBestList]:
    """Parse N-best text. ``score(h)`` recomputes each combined score (default: file order)."""
    groups: dict[str, list[tuple[int, Hypothesis]]] = {}
    order: list[str] = []
    for n, line in enumerate(text.splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 7:
            raise NBestError(f"line {n}: expected 7 tab-separated fields, got {len(parts)}")
        utt, rank = parts[0], int(parts[1])
        toks = tuple(parts[6].split(" ")) if parts[6] else ()
        h = Hypothesis(toks, *(_parse(p) for p in parts[2:6]))
        if utt not in groups:
            groups[utt] = []
            order.append(utt)
        groups[utt].append((rank, h))
    out = []
    for utt in order:
        items = sorted(groups[utt], key=lambda x: x[0])
        if score is None:
            hyps = [h.with_scores(combined_score=-float(r)) for r, h in items]
        else:
            hyps = [h.with_scores(combined_score=float(score(h))) for _, h in items]
        out.append(NBestList(utt, hyps))
    return out


def save(path, lists: Sequence[NBestList]) -> None:
    Path(path).write_text(dumps(lists), encoding="utf-8")


def load(path, score=None) -> list[NBestList]:
    p = Path(path)
    if not p.exists():
        raise NBestError(f"missing N-best file {p}")
    return loads(p.read_text(encoding="utf-8"), score)
