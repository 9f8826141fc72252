"""Conformer system configuration, vocabulary and their text serialisation."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

BLANK = "<blank>"
SPACE = "<space>"
APOSTROPHE = "'"
SOS = "<sos>"
EOS = "<eos>"
SENTINELS = (BLANK, SOS, EOS)

# feedforward dimensionality indices used in the compact architecture notation
FULL_FD_SCOPE = (512, 1024, 2048, 3072, 4096)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Output symbol inventory; blank is index 0, sos/eos are the last two."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        syms = self.symbols
        if len(set(syms)) != len(syms):
            raise ConfigError("vocab has duplicate symbols")
        if syms[:1] != (BLANK,) or syms[-2:] != (SOS, EOS):
            raise ConfigError("vocab must start with <blank> and end with <sos> <eos>")
        if SPACE not in syms or APOSTROPHE not in syms:
            raise ConfigError("vocab must contain <space> and the apostrophe")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(syms)})

    @classmethod
    def from_alphabet(cls, alphabet: str) -> "Vocab":
        chars = [c for c in dict.fromkeys(alphabet) if c not in (" ", APOSTROPHE)]
        if not chars:
            raise ConfigError("empty alphabet")
        return cls((BLANK, *chars, SPACE, APOSTROPHE, SOS, EOS))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return 0

    @property
    def sos(self) -> int:
        return len(self.symbols) - 2

    @property
    def eos(self) -> int:
        return len(self.symbols) - 1

    @property
    def real_ids(self) -> list[int]:
        """Ids a transcript can contain (everything but the sentinels)."""
        return list(range(1, len(self.symbols) - 2))

    def index(self, sym: str) -> int:
        return self._index[sym]

    def encode(self, text: str) -> list[int]:
        out = []
        for ch in text:
            sym = SPACE if ch == " " else ch
            if sym not in self._index:
                raise ConfigError(f"symbol {ch!r} not in vocab")
            out.append(self._index[sym])
        return out

    def decode(self, ids: Sequence[int]) -> str:
        chars = []
        for i in ids:
            sym = self.symbols[i]
            if sym in SENTINELS:
                continue
            chars.append(" " if sym == SPACE else sym)
        return "".join(chars)


@dataclass(frozen=True)
class BlockConfig:
    ff_dims: tuple[int, int]
    num_heads: int
    head_dim: int
    conv_kernel: int
    model_dim: int

    def validate(self) -> None:
        if self.num_heads < 1 or self.num_heads * self.head_dim != self.model_dim:
            raise ConfigError(
                f"num_heads x head_dim must equal model_dim "
                f"({self.num_heads} x {self.head_dim} != {self.model_dim})")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd and >= 1, got {self.conv_kernel}")
        if len(self.ff_dims) != 2 or min(self.ff_dims) < 1:
            raise ConfigError(f"ff_dims must be two positive sizes, got {self.ff_dims}")

    @classmethod
    def make(cls, model_dim: int, ff: int | tuple[int, int], heads: int, kernel: int) -> "BlockConfig":
        ff_dims = (ff, ff) if isinstance(ff, int) else tuple(ff)
        if heads < 1 or model_dim % heads:
            raise ConfigError(f"num_heads {heads} does not divide model_dim {model_dim}")
        return cls(ff_dims, heads, model_dim // heads, kernel, model_dim)


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    model_dim: int
    encoder_blocks: tuple[BlockConfig, ...]
    decoder_layers: int
    decoder_heads: int
    decoder_ff: int
    vocab: Vocab
    max_rel_dist: int = 64
    subsampling: int = field(default=4, init=False)

    def validate(self) -> "ModelConfig":
        if self.feature_dim < 7:
            raise ConfigError("feature_dim must be >= 7 for two unpadded 3x3 stride-2 convolutions")
        if not self.encoder_blocks:
            raise ConfigError("at least one encoder block is required")
        for i, b in enumerate(self.encoder_blocks):
            try:
                b.validate()
            except ConfigError as e:
                raise ConfigError(f"encoder block {i}: {e}") from None
            if b.model_dim != self.model_dim:
                raise ConfigError(f"encoder block {i}: model_dim {b.model_dim} != {self.model_dim}")
        if self.decoder_layers < 0 or self.decoder_ff < 1:
            raise ConfigError("decoder_layers must be >= 0 and decoder_ff >= 1")
        if self.decoder_heads < 1 or self.model_dim % self.decoder_heads:
            raise ConfigError(
                f"decoder_heads {self.decoder_heads} does not divide model_dim {self.model_dim}")
        if self.max_rel_dist < 1:
            raise ConfigError("max_rel_dist must be >= 1")
        return self

    @property
    def num_blocks(self) -> int:
        return len(self.encoder_blocks)

    def with_blocks(self, blocks: Sequence[BlockConfig]) -> "ModelConfig":
        return replace(self, encoder_blocks=tuple(blocks))

    def with_vocab(self, vocab: Vocab) -> "ModelConfig":
        return replace(self, vocab=vocab)


def uniform_config(*, feature_dim: int, model_dim: int, num_blocks: int, ff: int,
                   heads: int, kernel: int, decoder_layers: int, decoder_heads: int | None = None,
                   decoder_ff: int | None = None, vocab: Vocab, max_rel_dist: int = 64) -> ModelConfig:
    block = BlockConfig.make(model_dim, ff, heads, kernel)
    return ModelConfig(
        feature_dim=feature_dim, model_dim=model_dim, encoder_blocks=(block,) * num_blocks,
        decoder_layers=decoder_layers, decoder_heads=decoder_heads or heads,
        decoder_ff=decoder_ff or ff, vocab=vocab, max_rel_dist=max_rel_dist,
    ).validate()


# ---------------------------------------------------------------- compact architecture notation

def parse_fd(text: str, scope: Sequence[int] = FULL_FD_SCOPE) -> list[tuple[int, int]]:
    """'(1,1);(0,3)' -> [(1024, 1024), (512, 3072)]; 'x6' style repeats are allowed."""
    out = []
    for item in _split_layers(text):
        a, b = item.strip("() ").replace(":", ",").split(",")
        out.append((scope[int(a)], scope[int(b)]))
    return out


def parse_ints(text: str) -> list[int]:
    return [int(x.strip("() ")) for x in _split_layers(text)]


def _split_layers(text: str) -> list[str]:
    items = []
    for part in text.replace(" ", "").split(";"):
        if not part:
            continue
        if "x" in part or "×" in part:
            body, times = part.replace("×", "x").rsplit("x", 1)
            items.extend([body] * int(times))
        else:
            items.append(part)
    return items


def format_fd(config: ModelConfig, scope: Sequence[int] = FULL_FD_SCOPE) -> str:
    idx = {v: i for i, v in enumerate(scope)}
    parts = []
    for b in config.encoder_blocks:
        a, c = b.ff_dims
        parts.append(f"({idx.get(a, a)},{idx.get(c, c)})")
    return ";".join(parts)


def format_ah(config: ModelConfig) -> str:
    return ";".join(str(b.num_heads) for b in config.encoder_blocks)


def format_ck(config: ModelConfig) -> str:
    return ";".join(str(b.conv_kernel) for b in config.encoder_blocks)


# Full-scale reference systems with their published parameter counts.
REFERENCE_SYSTEMS = {
    1: dict(fd="(2,2)x12", ah="(4)x12", ck="(31)x12", decoder=6, params=42.3e6),
    2: dict(fd="(2,2)x12", ah="(4)x12", ck="(7)x12", decoder=12, params=51.8e6),
    5: dict(fd="(1,1);(1,3);(0,3);(0,2);(0,0);(0,0);(0,0);(0,0);(0,0);(0,0);(0,1);(1,0)",
            ah="(4)x12", ck="(7)x12", decoder=12, params=37.6e6),
    8: dict(fd="(1,1);(1,3);(0,3);(0,2);(0,0);(0,0);(0,0);(0,0);(0,0);(0,0);(0,1);(1,0)",
            ah="8;8;4;4;8;8;8;2;2;4;8;8", ck="(7)x12", decoder=12, params=39.5e6),
    12: dict(fd="(1,1);(1,3);(0,3);(0,2);(0,0);(0,0);(0,0);(0,0);(0,0);(0,0);(0,1);(1,0)",
             ah="8;8;4;4;8;8;8;2;2;4;8;8", ck="7;7;3;7;5;5;7;7;7;7;7;7", decoder=12,
             params=39.5e6),
}


def reference_vocab() -> Vocab:
    return Vocab.from_alphabet("abcdefghijklmnopqrstuvwxyz")


def reference_config(system: int = 1) -> ModelConfig:
    """Full-scale configuration of a reference system (40-dim FBK input, d=256)."""
    row = REFERENCE_SYSTEMS[system]
    fds, ahs, cks = parse_fd(row["fd"]), parse_ints(row["ah"]), parse_ints(row["ck"])
    blocks = tuple(BlockConfig.make(256, fd, ah, ck) for fd, ah, ck in zip(fds, ahs, cks))
    return ModelConfig(feature_dim=40, model_dim=256, encoder_blocks=blocks,
                       decoder_layers=row["decoder"], decoder_heads=4, decoder_ff=2048,
                       vocab=reference_vocab()).validate()


# ---------------------------------------------------------------- text round trip

def dumps(config: ModelConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["model"] = {
        "feature_dim": str(config.feature_dim),
        "model_dim": str(config.model_dim),
        "decoder_layers": str(config.decoder_layers),
        "decoder_heads": str(config.decoder_heads),
        "decoder_ff": str(config.decoder_ff),
        "max_rel_dist": str(config.max_rel_dist),
        "vocab": " ".join(config.vocab.symbols),
        "num_blocks": str(config.num_blocks),
    }
    for i, b in enumerate(config.encoder_blocks):
        cp[f"encoder.{i}"] = {
            "ff_dims": f"{b.ff_dims[0]} {b.ff_dims[1]}",
            "num_heads": str(b.num_heads),
            "head_dim": str(b.head_dim),
            "conv_kernel": str(b.conv_kernel),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def loads(text: str) -> ModelConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
        m = cp["model"]
        d = m.getint("model_dim")
        blocks = []
        for i in range(m.getint("num_blocks")):
            s = cp[f"encoder.{i}"]
            a, b = (int(x) for x in s["ff_dims"].split())
            blocks.append(BlockConfig((a, b), s.getint("num_heads"), s.getint("head_dim"),
                                      s.getint("conv_kernel"), d))
        cfg = ModelConfig(
            feature_dim=m.getint("feature_dim"), model_dim=d, encoder_blocks=tuple(blocks),
            decoder_layers=m.getint("decoder_layers"), decoder_heads=m.getint("decoder_heads"),
            decoder_ff=m.getint("decoder_ff"), vocab=Vocab(tuple(m["vocab"].split(" "))),
            max_rel_dist=m.getint("max_rel_dist"))
    except (KeyError, ValueError, TypeError, configparser.Error) as e:
        raise ConfigError(f"malformed model config: {e}") from None
    return cfg.validate()


def save(path, config: ModelConfig) -> None:
    Path(path).write_text(dumps(config), encoding="utf-8")


def load(path) -> ModelConfig:
    return loads(Path(path).read_text(encoding="utf-8"))
