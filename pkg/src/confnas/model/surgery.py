"""Structural surgery for adaptation: output-layer replacement and LHUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor
from .config import SENTINELS, ConfigError, Vocab
from .params import PROJECTIONS, ParameterSet, init_array, param_shapes


def replace_projections(params: ParameterSet, new_vocab: Vocab, seed: int) -> ParameterSet:
    """Re-initialise the CTC and decoder output layers for ``new_vocab``.

    Everything else (including the decoder embedding, which keeps its rows
    when the vocabulary size is unchanged) is shared with ``params``. When the
    size changes the embedding is re-sized too: kept rows for symbols present
    in both vocabularies, fresh rows otherwise.
    """
    if len(new_vocab) <= len(SENTINELS):
        raise ConfigError(f"vocab of size {len(new_vocab)} has no real symbols")
    config = params.config.with_vocab(new_vocab)
    shapes = param_shapes(config)
    rng = np.random.default_rng(seed)
    updates = {k: init_array(k, shapes[k], rng) for k in PROJECTIONS}
    old_vocab = params.config.vocab
    if old_vocab != new_vocab:
        emb = init_array("dec.embed", shapes["dec.embed"], rng)
        old = params["dec.embed"]
        for i, sym in enumerate(new_vocab.symbols):
            if sym in old_vocab.symbols:
                emb[i] = old[old_vocab.index(sym)]
        updates["dec.embed"] = emb
    return params.replace(updates, config=config)


@dataclass
class LhucState:
    """Per-speaker LHUC logits, one vector per encoder block output."""

    speaker_id: str
    r: np.ndarray  # (num_blocks, model_dim)

    @classmethod
    def zeros(cls, speaker_id: str, config) -> "LhucState":
        return cls(speaker_id, np.zeros((config.num_blocks, config.model_dim)))

    def amplitudes(self) -> np.ndarray:
        return 2.0 / (1.0 + np.exp(-self.r))


@dataclass(frozen=True)
class AdaptedParams:
    """Read-only view pairing base parameters with one speaker's LHUC state."""

    base: ParameterSet
    lhuc: LhucState

    @property
    def config(self):
        return self.base.config

    def lhuc_tensors(self, requires_grad: bool = False) -> dict[int, Tensor]:
        return {i: Tensor(self.lhuc.r[i], requires_grad=requires_grad, name=f"lhuc.{i}")
                for i in range(self.lhuc.r.shape[0])}


def apply_lhuc(params: ParameterSet, lhuc: LhucState) -> AdaptedParams:
    cfg = params.config
    want = (cfg.num_blocks, cfg.model_dim)
    if lhuc.r.shape != want:
        raise ConfigError(f"LHUC logits have shape {lhuc.r.shape}, model needs {want}")
    return AdaptedParams(params, LhucState(lhuc.speaker_id, np.array(lhuc.r, dtype=np.float64)))


def unpack(model) -> tuple[ParameterSet, dict | None]:
    """(base params, LHUC tensor map or None) for a ParameterSet or AdaptedParams."""
    if isinstance(model, AdaptedParams):
        return model.base, model.lhuc_tensors()
    return model, None
