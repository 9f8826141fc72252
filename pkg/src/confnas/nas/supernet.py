"""Search spaces over encoder hyper-parameters and weight-sharing supernets.

One :class:`CandidateSet` covers one sublayer slot of one encoder block:
``ff1``/``ff2`` (group FD), ``attn`` (AH) or ``conv`` (CK). Branch sharing:

* FD: every width has its own ``enc.i.ffX.c{f}.{w1,b1,w2,b2}``; the
  pre-norm is shared.
* AH: q/k/v/o projections are shared; each head count has its own
  relative-position bias table ``enc.i.attn.h{H}.rel_bias``.
* CK: a single depthwise kernel of the largest size; smaller kernels are its
  centre slices.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from ..model.config import BlockConfig, ModelConfig
from ..model.network import BlockPlan, Mixture, plain_plan
from ..model.params import (ParameterSet, attn_count, build_model, conv_count, ffn_count,
                            init_array)
from .weights import ArchError

STAGES = ("FD", "AH", "CK")
SLOTS = {"FD": ("ff1", "ff2"), "AH": ("attn",), "CK": ("conv",)}


@dataclass(frozen=True)
class CandidateSet:
    layer: int
    group: str                  # FD, AH or CK
    slot: str                   # ff1, ff2, attn or conv
    candidates: tuple[int, ...]
    costs: tuple[int, ...]      # P_i: trainable scalars of the sublayer with candidate i

    @property
    def key(self) -> str:
        return f"enc.{self.layer}.{self.slot}"

    def __len__(self) -> int:
        return len(self.candidates)


def slot_value(block: BlockConfig, slot: str) -> int:
    return {"ff1": block.ff_dims[0], "ff2": block.ff_dims[1],
            "attn": block.num_heads, "conv": block.conv_kernel}[slot]


def with_slot(block: BlockConfig, slot: str, value: int) -> BlockConfig:
    if slot == "ff1":
        return replace(block, ff_dims=(value, block.ff_dims[1]))
    if slot == "ff2":
        return replace(block, ff_dims=(block.ff_dims[0], value))
    if slot == "attn":
        return BlockConfig.make(block.model_dim, block.ff_dims, value, block.conv_kernel)
    if slot == "conv":
        return replace(block, conv_kernel=value)
    raise ArchError(f"unknown slot {slot!r}")


def apply_choices(config: ModelConfig, choices: Mapping[str, int]) -> ModelConfig:
    """Pin slot values, ``choices`` maps 'enc.i.slot' -> value."""
    blocks = list(config.encoder_blocks)
    for key, value in choices.items():
        _, i, slot = key.split(".")
        blocks[int(i)] = with_slot(blocks[int(i)], slot, int(value))
    return config.with_blocks(blocks).validate()


def branch_cost(config: ModelConfig, slot: str, value: int) -> int:
    d = config.model_dim
    if slot in ("ff1", "ff2"):
        return ffn_count(d, value)
    if slot == "attn":
        return attn_count(d, value, config.max_rel_dist)
    if slot == "conv":
        return conv_count(d, value)
    raise ArchError(f"unknown slot {slot!r}")


def _layer_scopes(scopes, stage: str, n_layers: int) -> list[dict[str, tuple[int, ...]]]:
    """Normalise ``scopes`` to one {slot: candidates} dict per layer.

    Accepts a flat candidate list (every layer, every slot of the stage), or a
    per-layer list whose items are candidate lists or {slot: list} dicts.
    """
    slots = SLOTS[stage]
    if scopes and all(isinstance(s, (int, np.integer)) for s in scopes):
        return [{s: tuple(int(v) for v in scopes) for s in slots} for _ in range(n_layers)]
    if len(scopes) != n_layers:
        raise ArchError(f"{len(scopes)} per-layer scopes for {n_layers} encoder blocks")
    out = []
    for item in scopes:
        if isinstance(item, Mapping):
            out.append({s: tuple(int(v) for v in item[s]) for s in item})
        else:
            out.append({s: tuple(int(v) for v in item) for s in slots})
    return out


def arch_space(config: ModelConfig, stage: str, scopes) -> list[CandidateSet]:
    """Candidate sets of one search stage (no parameters materialised)."""
    if stage not in STAGES:
        raise ArchError(f"unknown stage {stage!r}; expected one of {STAGES}")
    config.validate()
    out = []
    for i, per_slot in enumerate(_layer_scopes(scopes, stage, config.num_blocks)):
        for slot in SLOTS[stage]:
            if slot not in per_slot:
                continue
            cands = per_slot[slot]
            if not cands:
                raise ArchError(f"empty scope for enc.{i}.{slot}")
            for v in cands:   # validates each candidate
                with_slot(config.encoder_blocks[i], slot, v).validate()
            out.append(CandidateSet(i, stage, slot, cands,
                                    tuple(branch_cost(config, slot, v) for v in cands)))
    return out


@dataclass
class ArchParams:
    logits: dict[str, np.ndarray]
    mode: str = "gumbel"            # softmax or gumbel
    temperature: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        if self.mode not in ("softmax", "gumbel"):
            raise ArchError(f"unknown weighting mode {self.mode!r}")
        if self.eta < 0:
            raise ArchError(f"penalty factor must be >= 0, got {self.eta}")

    @classmethod
    def zeros(cls, space: Sequence[CandidateSet], **kw) -> "ArchParams":
        return cls({c.key: np.zeros(len(c)) for c in space}, **kw)


@dataclass
class Supernet:
    config: ModelConfig               # pinned choices; searched slots hold candidate 0
    space: list[CandidateSet]
    params: ParameterSet
    arch: ArchParams
    stage: str = ""
    _sets: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._sets = {c.key: c for c in self.space}

    def candidate_set(self, key: str) -> CandidateSet:
        return self._sets[key]

    def costs(self) -> dict[str, np.ndarray]:
        return {c.key: np.array(c.costs, dtype=np.float64) for c in self.space}

    def plans(self, weights: Mapping[str, object]) -> list[BlockPlan]:
        """Block plans with architecture weights ``weights[key]`` on searched slots."""
        out = []
        for i in range(self.config.num_blocks):
            plan = plain_plan(self.config, i)
            for slot in ("ff1", "ff2", "attn", "conv"):
                key = f"enc.{i}.{slot}"
                if key not in self._sets:
                    continue
                cs = self._sets[key]
                setattr(plan, slot, Mixture(cs.candidates, branch_names(i, slot, cs.candidates),
                                            weights[key]))
            out.append(plan)
        return out

    def discretize(self, selection: Mapping[str, int]) -> ParameterSet:
        """Plain model for per-key candidate indices, inheriting supernet weights."""
        choices = {k: self._sets[k].candidates[idx] for k, idx in selection.items()}
        config = apply_choices(self.config, choices)
        arrays = {}
        renamed = {}
        for key, idx in selection.items():
            cs = self._sets[key]
            i, slot, v = cs.layer, cs.slot, cs.candidates[idx]
            name = branch_names(i, slot, [v])[0]
            if slot in ("ff1", "ff2"):
                for leaf in ("w1", "b1", "w2", "b2"):
                    renamed[f"{key}.{leaf}"] = self.params[f"{name}.{leaf}"]
            elif slot == "attn":
                renamed[f"{key}.rel_bias"] = self.params[name]
            else:
                full = self.params[name]
                lo = (full.shape[0] - v) // 2
                renamed[f"{key}.dw_w"] = full[lo:lo + v]
        branch_prefixes = tuple(f"enc.{c.layer}.{c.slot}.c" for c in self.space) + \
            tuple(f"enc.{c.layer}.attn.h" for c in self.space)
        for k, v in self.params.items():
            if not k.startswith(branch_prefixes):
                arrays[k] = v
        arrays.update(renamed)
        return ParameterSet(arrays, config)


def branch_names(layer: int, slot: str, candidates: Sequence[int]) -> list[str]:
    pre = f"enc.{layer}.{slot}"
    if slot in ("ff1", "ff2"):
        return [f"{pre}.c{v}" for v in candidates]
    if slot == "attn":
        return [f"{pre}.h{v}.rel_bias" for v in candidates]
    return [f"{pre}.dw_w" for _ in candidates]


def _embed_kernel(w: np.ndarray, size: int, rng) -> np.ndarray:
    """Kernel of ``size`` rows whose centre holds ``w`` (or ``w``'s centre)."""
    k = w.shape[0]
    if k >= size:
        lo = (k - size) // 2
        return w[lo:lo + size].copy()
    out = init_array("dw_w", (size, w.shape[1]), rng)
    lo = (size - k) // 2
    out[lo:lo + k] = w
    return out


def build_supernet(base, stage: str, scopes, fixed_choices: Mapping[str, int] | None = None,
                   seed: int = 0, mode: str = "gumbel", eta: float = 0.0) -> Supernet:
    """Supernet for one stage over ``base`` (a ModelConfig or a ParameterSet).

    ``fixed_choices`` pins previously searched slots. With a ParameterSet
    base, arrays are inherited wherever shapes allow (a branch whose value
    equals the base's gets the base's weights); the rest is initialised from
    ``seed``.
    """
    if stage not in STAGES:
        raise ArchError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if isinstance(base, ParameterSet):
        base_params, config = base, base.config
    else:
        base_params, config = None, base
    if fixed_choices:
        config = apply_choices(config, fixed_choices)
    space = arch_space(config, stage, scopes)
    searched = {c.key for c in space}
    if base_params is not None:
        for i, (a, b) in enumerate(zip(base_params.config.encoder_blocks, config.encoder_blocks)):
            for slot in ("ff1", "ff2", "attn", "conv"):
                if f"enc.{i}.{slot}" not in searched and slot_value(a, slot) != slot_value(b, slot):
                    raise ArchError(f"fixed choice for enc.{i}.{slot} disagrees with the base parameters")
    config = apply_choices(config, {c.key: c.candidates[0] for c in space})
    rng = np.random.default_rng(seed)
    fresh = build_model(config, seed) if base_params is None else None
    src = base_params if base_params is not None else fresh
    src_cfg = src.config
    arrays = dict(src.items())
    d = config.model_dim
    r = config.max_rel_dist
    for cs in space:
        i, slot, key = cs.layer, cs.slot, cs.key
        base_value = slot_value(src_cfg.encoder_blocks[i], slot)
        if slot in ("ff1", "ff2"):
            for leaf in ("w1", "b1", "w2", "b2"):
                arrays.pop(f"{key}.{leaf}", None)
            for v in cs.candidates:
                name = f"{key}.c{v}"
                shapes = {"w1": (d, v), "b1": (v,), "w2": (v, d), "b2": (d,)}
                for leaf, shape in shapes.items():
                    if v == base_value:
                        arrays[f"{name}.{leaf}"] = src[f"{key}.{leaf}"]
                    else:
                        arrays[f"{name}.{leaf}"] = init_array(leaf, shape, rng)
        elif slot == "attn":
            old = arrays.pop(f"{key}.rel_bias")
            for v in cs.candidates:
                arrays[f"{key}.h{v}.rel_bias"] = (old if v == base_value
                                                  else init_array("rel_bias", (v, 2 * r + 1), rng))
        else:
            kmax = max(cs.candidates)
            arrays[f"{key}.dw_w"] = _embed_kernel(src[f"{key}.dw_w"], kmax, rng)
    arch = ArchParams.zeros(space, mode=mode, eta=eta)
    return Supernet(config, space, ParameterSet(arrays, config), arch, stage)


def enumerate_architectures(space: Sequence[CandidateSet]) -> list[dict[str, int]]:
    """Every discrete selection (key -> candidate index) reachable in ``space``."""
    keys = [c.key for c in space]
    return [dict(zip(keys, combo)) for combo in product(*(range(len(c)) for c in space))]
