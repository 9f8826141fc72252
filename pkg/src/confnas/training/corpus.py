"""Synthetic speaker-distorted transduction corpora and their on-disk form.

Each symbol of the character vocabulary owns a short feature template. An
utterance renders its transcript as the concatenation of templates framed by
silence, stretched in time, then distorted per speaker (speaking-rate drift,
a per-dimension channel gain) and corrupted with additive noise. Speakers
tagged PAR get stronger distortion than INV speakers.

The "language" (lexicon, word bigram chain, templates) depends only on
``language_seed`` so source- and target-domain corpora can share it.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..model.config import SPACE, Vocab
from ..tensor import checkpoint
from .augment import speed_perturb

SPLITS = ("train", "dev", "eval")
ROLES = ("INV", "PAR")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    alphabet: str = "abcdef"
    feature_dim: int = 8
    num_words: int = 12
    word_len: tuple[int, int] = (1, 3)
    sentence_words: tuple[int, int] = (1, 3)
    template_frames: tuple[int, int] = (3, 6)
    frame_rate: float = 2.0
    silence_frames: int = 2
    train_speakers: int = 8
    test_speakers: int = 4
    utts_per_speaker: int = 20
    par_fraction: float = 0.5
    disjoint_test_speakers: bool = True
    noise: float = 0.1
    channel_spread: float = 0.3
    rate_drift: float = 0.1
    par_severity: float = 2.0
    domain_shift: float = 0.0
    language_seed: int = 0

    def vocab(self) -> Vocab:
        return Vocab.from_alphabet(self.alphabet)


@dataclass
class Speaker:
    speaker_id: str
    role: str
    gain: np.ndarray       # (F,) channel scaling
    rate: float            # speaking-rate factor (>1 is slower)


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    group_tag: str         # e.g. "PAR-dev"
    text: str
    features: np.ndarray   # (T, F)

    @property
    def role(self) -> str:
        return self.group_tag.split("-")[0]

    @property
    def split(self) -> str:
        return self.group_tag.split("-")[1]

    def tokens(self, vocab: Vocab) -> list[int]:
        return vocab.encode(self.text)


# ---------------------------------------------------------------- language

@dataclass
class Language:
    symbols: list[str]                   # template order: vocab real symbols + silence
    templates: dict[str, np.ndarray]
    lexicon: list[str]
    bigram: np.ndarray                   # (W+1, W+1) word transition probs, row 0 = start

    def sentence(self, rng: np.random.Generator, n_words: int) -> str:
        words, prev = [], 0
        for _ in range(n_words):
            w = int(rng.choice(len(self.lexicon), p=self.bigram[prev, 1:] / self.bigram[prev, 1:].sum()))
            words.append(self.lexicon[w])
            prev = w + 1
        return " ".join(words)


def make_language(spec: CorpusSpec) -> Language:
    if not spec.alphabet.strip():
        raise CorpusError("empty alphabet")
    rng = np.random.default_rng(spec.language_seed)
    vocab = spec.vocab()
    chars = [s for s in vocab.symbols[1:-2] if s not in (SPACE, "'")]
    lexicon: list[str] = []
    while len(lexicon) < spec.num_words:
        n = int(rng.integers(spec.word_len[0], spec.word_len[1] + 1))
        w = "".join(rng.choice(chars, size=n))
        if w not in lexicon:
            lexicon.append(w)
        if len(lexicon) < spec.num_words and len(chars) ** spec.word_len[1] <= len(lexicon):
            raise CorpusError("alphabet too small for the requested lexicon")
    w = len(lexicon)
    # sparse-ish chain so an n-gram model has structure to learn
    bigram = rng.dirichlet(np.full(w, 0.3), size=w + 1)
    bigram = np.concatenate([np.zeros((w + 1, 1)), bigram], axis=1)
    symbols = [s for s in vocab.symbols[1:-2]] + ["<sil>"]
    templates = {}
    for s in symbols:
        if s == "<sil>":
            templates[s] = np.zeros((spec.silence_frames or 1, spec.feature_dim))
            continue
        n = int(rng.integers(spec.template_frames[0], spec.template_frames[1] + 1))
        templates[s] = rng.normal(size=(n, spec.feature_dim))
    if spec.domain_shift:
        drng = np.random.default_rng(spec.language_seed + 7919)
        for s in symbols:
            if s != "<sil>":
                templates[s] = templates[s] + spec.domain_shift * drng.normal(size=templates[s].shape)
    return Language(symbols, templates, lexicon, bigram)


def render(text: str, lang: Language, spec: CorpusSpec) -> np.ndarray:
    """Undistorted feature rendering of a transcript (no stretch, no noise)."""
    parts = []
    if spec.silence_frames:
        parts.append(lang.templates["<sil>"])
    for ch in text:
        parts.append(lang.templates[SPACE if ch == " " else ch])
    if spec.silence_frames:
        parts.append(lang.templates["<sil>"])
    return np.concatenate(parts, axis=0)


def template_decode(features: np.ndarray, lang: Language, atol: float = 1e-9) -> str:
    """Greedy exact template matching; recovers text from undistorted features."""
    out, t = [], 0
    while t < features.shape[0]:
        for sym in lang.symbols:
            tpl = lang.templates[sym]
            seg = features[t:t + tpl.shape[0]]
            if seg.shape == tpl.shape and np.allclose(seg, tpl, atol=atol, rtol=0):
                if sym != "<sil>":
                    out.append(" " if sym == SPACE else sym)
                t += tpl.shape[0]
                break
        else:
            raise CorpusError(f"no template matches frame {t}")
    return "".join(out)


# ---------------------------------------------------------------- synthesis

def make_speakers(spec: CorpusSpec, rng: np.random.Generator, prefix: str, n: int) -> list[Speaker]:
    out = []
    n_par = int(round(n * spec.par_fraction))
    for i in range(n):
        role = "PAR" if i < n_par else "INV"
        sev = spec.par_severity if role == "PAR" else 1.0
        gain = np.exp(sev * spec.channel_spread * rng.normal(size=spec.feature_dim))
        rate = float(np.exp(sev * spec.rate_drift * rng.normal()))
        out.append(Speaker(f"{prefix}{i:02d}", role, gain, rate))
    return out


def distort(clean: np.ndarray, spk: Speaker, spec: CorpusSpec, rng: np.random.Generator) -> np.ndarray:
    x = clean
    stretch = spec.frame_rate * spk.rate
    if stretch != 1.0:
        x = speed_perturb(x, 1.0 / stretch)
    x = x * spk.gain
    if spec.noise:
        x = x + spec.noise * rng.normal(size=x.shape)
    return x


def synth_corpus(spec: CorpusSpec, seed: int) -> dict[str, list[Utterance]]:
    """Deterministic train/dev/eval corpus for ``spec`` and ``seed``."""
    lang = make_language(spec)
    rng = np.random.default_rng(seed)
    train_spk = make_speakers(spec, rng, "tr", spec.train_speakers)
    test_spk = (make_speakers(spec, rng, "ts", spec.test_speakers)
                if spec.disjoint_test_speakers else train_spk)
    corpus: dict[str, list[Utterance]] = {s: [] for s in SPLITS}

    def emit(spk: Speaker, split: str, k: int):
        n_words = int(rng.integers(spec.sentence_words[0], spec.sentence_words[1] + 1))
        text = lang.sentence(rng, n_words)
        feats = distort(render(text, lang, spec), spk, spec, rng)
        corpus[split].append(Utterance(f"{spk.speaker_id}-{split}-{k:03d}", spk.speaker_id,
                                       f"{spk.role}-{split}", text, feats))

    for spk in train_spk:
        for k in range(spec.utts_per_speaker):
            emit(spk, "train", k)
    for spk in test_spk:
        half = spec.utts_per_speaker // 2
        for k in range(half):
            emit(spk, "dev", k)
        for k in range(spec.utts_per_speaker - half):
            emit(spk, "eval", k)
    return corpus


def speakers_of(spec: CorpusSpec, seed: int) -> dict[str, Speaker]:
    """Speaker table of ``synth_corpus(spec, seed)`` (same generator order)."""
    rng = np.random.default_rng(seed)
    spk = make_speakers(spec, rng, "tr", spec.train_speakers)
    if spec.disjoint_test_speakers:
        spk += make_speakers(spec, rng, "ts", spec.test_speakers)
    return {s.speaker_id: s for s in spk}


# ---------------------------------------------------------------- on-disk form
# <dir>/manifest.tsv : utt_id, speaker_id, group_tag, text (tab separated)
# <dir>/feats/<utt_id>.bin : checkpoint container with one "features" entry

def save_corpus(corpus: dict[str, list[Utterance]], directory) -> None:
    d = Path(directory)
    (d / "feats").mkdir(parents=True, exist_ok=True)
    lines = []
    for split in SPLITS:
        for u in corpus.get(split, []):
            lines.append(f"{u.utt_id}\t{u.speaker_id}\t{u.group_tag}\t{u.text}\n")
            checkpoint.save(d / "feats" / f"{u.utt_id}.bin", {"features": u.features})
    (d / "manifest.tsv").write_text("".join(lines), encoding="utf-8")


def load_corpus(directory) -> dict[str, list[Utterance]]:
    d = Path(directory)
    manifest = d / "manifest.tsv"
    if not manifest.exists():
        raise CorpusError(f"missing corpus manifest {manifest}")
    corpus: dict[str, list[Utterance]] = {s: [] for s in SPLITS}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        utt_id, spk, tag, text = line.split("\t")
        feats = checkpoint.load(d / "feats" / f"{utt_id}.bin")["features"]
        corpus[tag.split("-")[1]].append(Utterance(utt_id, spk, tag, text, feats))
    return corpus


def spec_dumps(spec: CorpusSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["corpus"] = {f.name: _fmt(getattr(spec, f.name)) for f in fields(spec)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def spec_from_section(section) -> CorpusSpec:
    kwargs = {}
    defaults = asdict(CorpusSpec())
    for f in fields(CorpusSpec):
        if f.name not in section:
            continue
        raw, default = section[f.name], defaults[f.name]
        if isinstance(default, bool):
            kwargs[f.name] = raw.strip().lower() in ("1", "true", "yes")
        elif isinstance(default, tuple):
            kwargs[f.name] = tuple(int(x) for x in raw.split())
        elif isinstance(default, (int, float, str)):
            kwargs[f.name] = type(default)(raw)
    return CorpusSpec(**kwargs)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)
