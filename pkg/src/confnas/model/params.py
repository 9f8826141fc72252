"""Parameter layout, exact parameter accounting and initialisation."""
from __future__ import annotations

import hashlib
from collections.abc import Mapping
from typing import Iterable, Iterator

import numpy as np

from ..tensor import checkpoint
from .config import ModelConfig


class ParameterSet(Mapping):
    """Immutable name -> float64 array mapping tied to a :class:`ModelConfig`.

    Arrays are marked read-only; derived sets share unchanged arrays.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray], config: ModelConfig | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for k, v in arrays.items():
            a = np.array(v, dtype=np.float64) if v.flags.writeable else v
            a.setflags(write=False)
            self._arrays[k] = a
        self.config = config

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def size(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def replace(self, updates: Mapping[str, np.ndarray], config: ModelConfig | None = None,
                drop: Iterable[str] = ()) -> "ParameterSet":
        drop = set(drop)
        merged = {k: v for k, v in self._arrays.items() if k not in drop}
        merged.update(updates)
        return ParameterSet(merged, config if config is not None else self.config)

    def checksum(self, names: Iterable[str] | None = None) -> str:
        h = hashlib.sha256()
        for k in (self._arrays if names is None else names):
            a = self._arrays[k]
            h.update(k.encode())
            h.update(repr(a.shape).encode())
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        checkpoint.save(path, self._arrays)

    @classmethod
    def load(cls, path, config: ModelConfig | None = None) -> "ParameterSet":
        return cls(checkpoint.load(path), config)


# ---------------------------------------------------------------- layout

def frontend_freq_out(feature_dim: int) -> int:
    f = (feature_dim - 3) // 2 + 1
    return (f - 3) // 2 + 1


def ln_shapes(prefix: str, d: int) -> dict:
    return {f"{prefix}.g": (d,), f"{prefix}.b": (d,)}


def ffn_shapes(prefix: str, d: int, f: int, with_norm: bool = True) -> dict:
    out = ln_shapes(f"{prefix}.ln", d) if with_norm else {}
    out.update({f"{prefix}.w1": (d, f), f"{prefix}.b1": (f,),
                f"{prefix}.w2": (f, d), f"{prefix}.b2": (d,)})
    return out


def attn_proj_shapes(prefix: str, d: int) -> dict:
    out = ln_shapes(f"{prefix}.ln", d)
    for m in "qkvo":
        out[f"{prefix}.w{m}"] = (d, d)
        out[f"{prefix}.b{m}"] = (d,)
    return out


def conv_shapes(prefix: str, d: int, kernel: int) -> dict:
    out = ln_shapes(f"{prefix}.ln", d)
    out.update({f"{prefix}.pw1_w": (d, 2 * d), f"{prefix}.pw1_b": (2 * d,),
                f"{prefix}.dw_w": (kernel, d), f"{prefix}.dw_b": (d,)})
    out.update(ln_shapes(f"{prefix}.norm", d))
    out.update({f"{prefix}.pw2_w": (d, d), f"{prefix}.pw2_b": (d,)})
    return out


def block_shapes(prefix: str, block, max_rel: int) -> dict:
    d = block.model_dim
    out = ffn_shapes(f"{prefix}.ff1", d, block.ff_dims[0])
    out.update(attn_proj_shapes(f"{prefix}.attn", d))
    out[f"{prefix}.attn.rel_bias"] = (block.num_heads, 2 * max_rel + 1)
    out.update(conv_shapes(f"{prefix}.conv", d, block.conv_kernel))
    out.update(ffn_shapes(f"{prefix}.ff2", d, block.ff_dims[1]))
    out.update(ln_shapes(f"{prefix}.ln_out", d))
    return out


def frontend_shapes(config: ModelConfig) -> dict:
    c = d = config.model_dim
    fo = frontend_freq_out(config.feature_dim)
    return {"fe.conv1.w": (9, c), "fe.conv1.b": (c,),
            "fe.conv2.w": (9 * c, c), "fe.conv2.b": (c,),
            "fe.out.w": (fo * c, d), "fe.out.b": (d,)}


def decoder_shapes(config: ModelConfig) -> dict:
    d, v = config.model_dim, len(config.vocab)
    out = {"dec.embed": (v, d)}
    for j in range(config.decoder_layers):
        out.update(attn_proj_shapes(f"dec.{j}.self_attn", d))
        out.update(attn_proj_shapes(f"dec.{j}.src_attn", d))
        out.update(ffn_shapes(f"dec.{j}.ff", d, config.decoder_ff))
    out.update(ln_shapes("dec.after_norm", d))
    out.update({"dec.out.w": (d, v), "dec.out.b": (v,)})
    return out


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map of every trainable array."""
    config.validate()
    out = frontend_shapes(config)
    for i, b in enumerate(config.encoder_blocks):
        out.update(block_shapes(f"enc.{i}", b, config.max_rel_dist))
    out.update(ln_shapes("enc.after_norm", config.model_dim))
    d, v = config.model_dim, len(config.vocab)
    out.update({"ctc.w": (d, v), "ctc.b": (v,)})
    out.update(decoder_shapes(config))
    return out


PROJECTIONS = ("ctc.w", "ctc.b", "dec.out.w", "dec.out.b")


# ---------------------------------------------------------------- accounting
# Closed-form counts, kept independent of param_shapes so the two cross-check.

def ffn_count(d: int, f: int) -> int:
    return 2 * d + d * f + f + f * d + d


def attn_count(d: int, heads: int, max_rel: int) -> int:
    return 2 * d + 4 * (d * d + d) + heads * (2 * max_rel + 1)


def conv_count(d: int, kernel: int) -> int:
    return 2 * d + (2 * d * d + 2 * d) + (kernel * d + d) + 2 * d + (d * d + d)


def block_count(block, max_rel: int) -> int:
    d = block.model_dim
    return (ffn_count(d, block.ff_dims[0]) + attn_count(d, block.num_heads, max_rel)
            + conv_count(d, block.conv_kernel) + ffn_count(d, block.ff_dims[1]) + 2 * d)


def count_params(config: ModelConfig) -> int:
    """Exact number of trainable scalars of ``build_model(config)``."""
    config.validate()
    d, v = config.model_dim, len(config.vocab)
    fo = frontend_freq_out(config.feature_dim)
    n = (9 * d + d) + (9 * d * d + d) + (fo * d * d + d)
    n += sum(block_count(b, config.max_rel_dist) for b in config.encoder_blocks)
    n += 2 * d + (d * v + v)
    per_dec = 2 * (2 * d + 4 * (d * d + d)) + ffn_count(d, config.decoder_ff)
    n += v * d + config.decoder_layers * per_dec + 2 * d + (d * v + v)
    return n


# ---------------------------------------------------------------- initialisation

def init_array(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "g":
        return np.ones(shape)
    if len(shape) == 1 or leaf == "rel_bias":
        return np.zeros(shape)
    if leaf == "dw_w":
        fan_in, fan_out = shape[0], shape[0]
    else:
        fan_in, fan_out = shape[0], shape[1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(shapes: Mapping[str, tuple[int, ...]], rng: np.random.Generator) -> dict:
    return {k: init_array(k, s, rng) for k, s in shapes.items()}


def build_model(config: ModelConfig, seed: int) -> ParameterSet:
    """Initialise every parameter of ``config`` from a seeded generator."""
    shapes = param_shapes(config)
    rng = np.random.default_rng(seed)
    return ParameterSet(init_params(shapes, rng), config)
