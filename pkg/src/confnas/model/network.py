"""Conformer encoder / Transformer decoder forward pass on the autodiff engine.

Inputs are padded batches: ``feats`` (B, T, F) with ``lengths`` (B,). Padded
frames are zeroed before every time-mixing operation, so a batched forward
matches per-utterance forwards.

Each encoder sublayer is described by a :class:`Mixture`. A plain model has
one candidate per sublayer and no weights; a supernet supplies architecture
weights and the output becomes the weighted sum of candidate branches.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..tensor import Tensor, ops
from .config import ModelConfig

NEG_INF = -1e9


@dataclass
class Mixture:
    values: Sequence[int]          # candidate hyper-parameter values
    names: Sequence[str]           # parameter prefix (or array name) per candidate
    weights: Tensor | None = None  # architecture weights, one per candidate


@dataclass
class BlockPlan:
    ff1: Mixture
    attn: Mixture
    conv: Mixture
    ff2: Mixture


def plain_plan(config: ModelConfig, i: int) -> BlockPlan:
    b = config.encoder_blocks[i]
    pre = f"enc.{i}"
    return BlockPlan(
        ff1=Mixture([b.ff_dims[0]], [f"{pre}.ff1"]),
        attn=Mixture([b.num_heads], [f"{pre}.attn.rel_bias"]),
        conv=Mixture([b.conv_kernel], [f"{pre}.conv.dw_w"]),
        ff2=Mixture([b.ff_dims[1]], [f"{pre}.ff2"]),
    )


def param_tensors(params: Mapping[str, np.ndarray], trainable=()) -> dict[str, Tensor]:
    trainable = set(trainable)
    return {k: Tensor(v, requires_grad=k in trainable, name=k) for k, v in params.items()}


def _mix(outputs: list[Tensor], weights: Tensor | None) -> Tensor:
    if weights is None:
        return outputs[0]
    acc = outputs[0] * weights[0]
    for i in range(1, len(outputs)):
        acc = acc + outputs[i] * weights[i]
    return acc


def layer_norm(x: Tensor, p, prefix: str) -> Tensor:
    return ops.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def ffn_core(h: Tensor, p, prefix: str, act=ops.swish) -> Tensor:
    y = act(ops.linear(h, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return ops.linear(y, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return ops.transpose(ops.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: np.ndarray | None,
              bias: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention over pre-projected (B, T, d) inputs."""
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    dh = qh.shape[-1]
    scores = ops.scale(qh @ ops.transpose(kh, (0, 1, 3, 2)), 1.0 / np.sqrt(dh))
    if bias is not None:
        scores = scores + bias
    if mask is not None:
        scores = ops.masked_fill(scores, mask, NEG_INF)
    return merge_heads(ops.softmax(scores, axis=-1) @ vh)


def rel_index(t: int, max_rel: int) -> np.ndarray:
    pos = np.arange(t)
    return np.clip(pos[None, :] - pos[:, None], -max_rel, max_rel) + max_rel


def time_mask(lengths: np.ndarray, t: int) -> np.ndarray:
    """(B, T, 1) float mask, 1 on valid frames."""
    return (np.arange(t)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)[..., None]


def key_padding_mask(lengths: np.ndarray, t: int) -> np.ndarray:
    """(B, 1, 1, T) bool mask, True on padded keys."""
    return (np.arange(t)[None, :] >= np.asarray(lengths)[:, None])[:, None, None, :]


# ---------------------------------------------------------------- encoder

def frontend(p, feats: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Two 3x3 stride-2 convolution blocks, then a projection to model_dim."""
    feats = np.asarray(feats, dtype=np.float64)
    b, t, _ = feats.shape
    lengths = np.asarray(lengths)
    m0 = time_mask(lengths, t)
    x = Tensor((feats * m0)[..., None])
    h = ops.relu(ops.linear(ops.patches2d(x), p["fe.conv1.w"], p["fe.conv1.b"]))
    l2 = lengths // 2
    h = h * time_mask(l2, h.shape[1])[..., None]
    h = ops.relu(ops.linear(ops.patches2d(h), p["fe.conv2.w"], p["fe.conv2.b"]))
    l4 = l2 // 2
    bb, t4, f4, c = h.shape
    h = ops.reshape(h, (bb, t4, f4 * c))
    return ops.linear(h, p["fe.out.w"], p["fe.out.b"]), l4


def encoder_block(x: Tensor, p, prefix: str, plan: BlockPlan, tmask: np.ndarray,
                  kmask: np.ndarray, rel_idx: np.ndarray) -> Tensor:
    # macaron feedforward, half step
    h = layer_norm(x, p, f"{prefix}.ff1.ln")
    y = _mix([ffn_core(h, p, n) for n in plan.ff1.names], plan.ff1.weights)
    x = x + ops.scale(y, 0.5)

    # self-attention with learned relative-position bias
    a = f"{prefix}.attn"
    h = layer_norm(x, p, f"{a}.ln")
    q = ops.linear(h, p[f"{a}.wq"], p[f"{a}.bq"])
    k = ops.linear(h, p[f"{a}.wk"], p[f"{a}.bk"])
    v = ops.linear(h, p[f"{a}.wv"], p[f"{a}.bv"])
    outs = []
    for heads, bias_name in zip(plan.attn.values, plan.attn.names):
        bias = ops.take(p[bias_name], rel_idx, axis=1)
        ctx = attention(q, k, v, heads, kmask, bias)
        outs.append(ops.linear(ctx, p[f"{a}.wo"], p[f"{a}.bo"]))
    x = x + _mix(outs, plan.attn.weights)

    # convolution module: pointwise + GLU, depthwise, norm, swish, pointwise
    c = f"{prefix}.conv"
    h = layer_norm(x, p, f"{c}.ln")
    g = ops.glu(ops.linear(h, p[f"{c}.pw1_w"], p[f"{c}.pw1_b"]), axis=-1)
    g = g * tmask
    outs = []
    for kernel, w_name in zip(plan.conv.values, plan.conv.names):
        w = p[w_name]
        full = w.shape[0]
        if kernel != full:
            lo = (full - kernel) // 2
            w = w[lo:lo + kernel]
        y = ops.depthwise_conv1d(g, w) + p[f"{c}.dw_b"]
        y = ops.swish(layer_norm(y, p, f"{c}.norm"))
        outs.append(ops.linear(y, p[f"{c}.pw2_w"], p[f"{c}.pw2_b"]))
    x = x + _mix(outs, plan.conv.weights)

    h = layer_norm(x, p, f"{prefix}.ff2.ln")
    y = _mix([ffn_core(h, p, n) for n in plan.ff2.names], plan.ff2.weights)
    x = x + ops.scale(y, 0.5)
    return layer_norm(x, p, f"{prefix}.ln_out")


def lhuc_scale(r) -> Tensor:
    """Amplitude 2 * sigmoid(r) in (0, 2)."""
    return ops.scale(ops.sigmoid(r), 2.0)


def encode(p, config: ModelConfig, feats: np.ndarray, lengths: np.ndarray,
           plans: Sequence[BlockPlan] | None = None, lhuc=None) -> tuple[Tensor, np.ndarray]:
    """Encoder output (B, T/4, d) and its valid lengths.

    ``lhuc`` optionally maps block index -> logit vector (model_dim,) that
    rescales that block's output.
    """
    x, lens = frontend(p, feats, lengths)
    t = x.shape[1]
    tmask = time_mask(lens, t)
    kmask = key_padding_mask(lens, t)
    ridx = rel_index(t, config.max_rel_dist)
    for i in range(config.num_blocks):
        plan = plans[i] if plans is not None else plain_plan(config, i)
        x = encoder_block(x, p, f"enc.{i}", plan, tmask, kmask, ridx)
        if lhuc is not None and i in lhuc:
            x = x * lhuc_scale(lhuc[i])
    return layer_norm(x, p, "enc.after_norm"), lens


def ctc_log_probs(p, enc: Tensor) -> Tensor:
    return ops.log_softmax(ops.linear(enc, p["ctc.w"], p["ctc.b"]), axis=-1)


# ---------------------------------------------------------------- decoder

def sinusoid(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-np.log(10000.0) / d))
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d // 2])
    return pe


def _mha(p, prefix: str, xq: Tensor, xkv: Tensor, heads: int, mask) -> Tensor:
    q = ops.linear(xq, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = ops.linear(xkv, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = ops.linear(xkv, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    return ops.linear(attention(q, k, v, heads, mask), p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def decode_logits(p, config: ModelConfig, memory: Tensor, mem_lengths: np.ndarray,
                  tokens_in: np.ndarray) -> Tensor:
    """Teacher-forced decoder logits (B, L, V) for input token ids (B, L)."""
    tokens_in = np.asarray(tokens_in, dtype=np.int64)
    b, length = tokens_in.shape
    d = config.model_dim
    x = ops.scale(ops.embedding(p["dec.embed"], tokens_in), np.sqrt(d)) + sinusoid(length, d)
    causal = np.triu(np.ones((length, length), dtype=bool), k=1)[None, None]
    src_mask = key_padding_mask(mem_lengths, memory.shape[1])
    for j in range(config.decoder_layers):
        pre = f"dec.{j}"
        h = layer_norm(x, p, f"{pre}.self_attn.ln")
        x = x + _mha(p, f"{pre}.self_attn", h, h, config.decoder_heads, causal)
        h = layer_norm(x, p, f"{pre}.src_attn.ln")
        x = x + _mha(p, f"{pre}.src_attn", h, memory, config.decoder_heads, src_mask)
        h = layer_norm(x, p, f"{pre}.ff.ln")
        x = x + ffn_core(h, p, f"{pre}.ff", act=ops.relu)
    x = layer_norm(x, p, "dec.after_norm")
    return ops.linear(x, p["dec.out.w"], p["dec.out.b"])


def forward(p, config: ModelConfig, feats, lengths, tokens_in, plans=None, lhuc=None):
    """Joint forward: (ctc log-probs, decoder logits, encoder lengths)."""
    enc, lens = encode(p, config, feats, lengths, plans=plans, lhuc=lhuc)
    return ctc_log_probs(p, enc), decode_logits(p, config, enc, lens, tokens_in), lens
