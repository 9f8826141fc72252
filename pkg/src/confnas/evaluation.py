"""Word error rate with group breakdowns, and the matched-pairs (MAPSSWE) test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

GROUPS = ("INV-dev", "PAR-dev", "INV-eval", "PAR-eval")


class EvalError(ValueError):
    pass


def align_wer(ref: Sequence[str], hyp: Sequence[str]):
    """Minimum edit alignment with unit costs.

    Returns (S, D, I, alignment); alignment is a list of (op, ref, hyp) with op
    one of ``=``, ``S``, ``D``, ``I``. Among equal-cost paths the backtrace
    prefers substitution (or match), then insertion, then deletion.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise EvalError("empty reference")
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                          d[i, j - 1] + 1, d[i - 1, j] + 1)
    i, j = n, m
    s = dl = ins = 0
    align = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            same = ref[i - 1] == hyp[j - 1]
            align.append(("=" if same else "S", ref[i - 1], hyp[j - 1]))
            s += not same
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            align.append(("I", None, hyp[j - 1]))
            ins += 1
            j -= 1
        else:
            align.append(("D", ref[i - 1], None))
            dl += 1
            i -= 1
    align.reverse()
    return s, dl, ins, align


@dataclass
class UttScore:
    utt_id: str
    group: str
    sub: int
    dele: int
    ins: int
    ref_len: int
    missing: bool = False

    @property
    def errors(self) -> int:
        return self.sub + self.dele + self.ins


@dataclass
class WERReport:
    utts: list[UttScore]
    missing: list[str] = field(default_factory=list)

    def cell(self, groups: Sequence[str] | None = None) -> float:
        """Pooled WER% over the utterances whose group is in ``groups`` (all if None).

        NaN when the selection holds no reference words.
        """
        sel = [u for u in self.utts if groups is None or u.group in groups]
        ref = sum(u.ref_len for u in sel)
        return 100.0 * sum(u.errors for u in sel) / ref if ref else math.nan

    def table(self) -> dict[str, float]:
        """Dev/Eval x INV/PAR cells, per-split totals and the pooled "All"."""
        out = {}
        for split in ("dev", "eval"):
            for role in ("INV", "PAR"):
                out[f"{split}.{role}"] = self.cell([f"{role}-{split}"])
            out[f"{split}.all"] = self.cell([f"INV-{split}", f"PAR-{split}"])
        out["all"] = self.cell()
        return out

    def errors_by_utt(self) -> dict[str, int]:
        return {u.utt_id: u.errors for u in self.utts}

    def to_text(self) -> str:
        t = {k: (f"{v:8.2f}" if math.isfinite(v) else f"{'-':>8s}") for k, v in self.table().items()}
        head = f"{'':8s}{'INV':>8s}{'PAR':>8s}{'All':>8s}"
        lines = [head]
        for split in ("dev", "eval"):
            lines.append(f"{split.capitalize():8s}{t[f'{split}.INV']}{t[f'{split}.PAR']}"
                         f"{t[f'{split}.all']}")
        lines.append(f"{'All':8s}{'':16s}{t['all']}")
        if self.missing:
            lines.append(f"missing hypotheses ({len(self.missing)}): {' '.join(self.missing)}")
        return "\n".join(lines) + "\n"

    def to_keyvalue(self) -> str:
        t = self.table()
        lines = [f"wer.{k}={v!r}" for k, v in t.items()]
        lines.append(f"utterances={len(self.utts)}")
        lines.append(f"ref_words={sum(u.ref_len for u in self.utts)}")
        lines.append(f"errors={sum(u.errors for u in self.utts)}")
        lines.append(f"missing={','.join(self.missing)}")
        return "\n".join(lines) + "\n"


def wer_report(refs: Mapping[str, tuple[str, Sequence[str]]],
               hyps: Mapping[str, Sequence[str]]) -> WERReport:
    """Score ``hyps`` (utt_id -> words) against ``refs`` (utt_id -> (group, words)).

    A missing hypothesis counts as all deletions and is listed in the report.
    """
    utts, missing = [], []
    for utt_id in sorted(refs):
        group, ref = refs[utt_id]
        if utt_id not in hyps:
            missing.append(utt_id)
            utts.append(UttScore(utt_id, group, 0, len(ref), 0, len(ref), True))
            continue
        s, d, i, _ = align_wer(ref, hyps[utt_id])
        utts.append(UttScore(utt_id, group, s, d, i, len(ref)))
    return WERReport(utts, missing)


@dataclass
class MAPSSWEResult:
    diffs: np.ndarray
    n: int
    mean: float
    variance: float
    z: float
    p_value: float
    alpha: float
    significant: bool
    degenerate: bool    # zero variance of the differences

    def to_text(self) -> str:
        verdict = "significant" if self.significant else "not significant"
        flag = " (zero variance)" if self.degenerate else ""
        return (f"n={self.n} mean={self.mean:.6f} var={self.variance:.6f} Z={self.z:.6f} "
                f"p={self.p_value:.6g} alpha={self.alpha} -> {verdict}{flag}\n")


def mapsswe(errors1: Sequence[float] | Mapping[str, float], errors2: Sequence[float] | Mapping[str, float],
            alpha: float = 0.05) -> MAPSSWEResult:
    """Matched-pairs test on per-segment error counts (one segment per utterance).

    Z = mean(d) / sqrt(var(d) / n) with the unbiased sample variance and a
    two-sided normal test. Zero variance is flagged; any nonzero mean is then
    significant (Z = +-inf), a zero mean is not.
    """
    if isinstance(errors1, Mapping) or isinstance(errors2, Mapping):
        if not (isinstance(errors1, Mapping) and isinstance(errors2, Mapping)) \
                or set(errors1) != set(errors2):
            raise EvalError("error counts are not paired over the same utterances")
        keys = sorted(errors1)
        errors1 = [errors1[k] for k in keys]
        errors2 = [errors2[k] for k in keys]
    a = np.asarray(errors1, dtype=np.float64)
    b = np.asarray(errors2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvalError(f"unpaired error vectors of shapes {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise EvalError("need at least two segments")
    d = a - b
    mean = float(d.mean())
    var = float(d.var(ddof=1))
    if var == 0.0:
        z = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        degenerate = True
    else:
        z = mean / math.sqrt(var / n)
        degenerate = False
    p = 2.0 * (1.0 - NormalDist().cdf(abs(z))) if math.isfinite(z) else 0.0
    crit = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    return MAPSSWEResult(d, n, mean, var, z, p, alpha, abs(z) > crit, degenerate)
