"""Joint CTC+attention training and the domain / speaker adaptation loops."""
from __future__ import annotations

import configparser
import fnmatch
import io
import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from ..model import network as net
from ..model.params import ParameterSet
from ..model.surgery import AdaptedParams, LhucState, apply_lhuc, replace_projections
from ..tensor import Tensor, backward
from .augment import SpecAugmentPolicy, spec_augment, speed_perturb
from .corpus import Utterance
from .losses import attention_ce_loss, ctc_loss_mean, joint_loss

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainRecipe:
    ctc_weight: float = 0.3
    step_size: float = 0.5
    warmup_steps: int = 25
    batch_size: int = 16
    epochs: int = 30
    label_smoothing: float = 0.1
    adam: bool = False
    adam_betas: tuple[float, float] = (0.9, 0.98)
    grad_clip: float = 5.0
    speed_factors: tuple[float, ...] = ()
    spec_augment: bool = False
    freeze: tuple[str, ...] = ()      # parameter names or glob patterns
    keep_best: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError(f"ctc_weight must be in [0, 1], got {self.ctc_weight}")

    def frozen(self, name: str) -> bool:
        return any(fnmatch.fnmatchcase(name, pat) for pat in self.freeze)


def recipe_dumps(recipe: TrainRecipe) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    sec = {}
    for f in fields(recipe):
        v = getattr(recipe, f.name)
        sec[f.name] = " ".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
    cp["recipe"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def recipe_from_section(section) -> TrainRecipe:
    kw = {}
    for f in fields(TrainRecipe):
        if f.name not in section:
            continue
        raw = section[f.name]
        default = getattr(TrainRecipe(), f.name)
        if isinstance(default, bool):
            kw[f.name] = raw.strip().lower() in ("1", "true", "yes")
        elif f.name == "freeze":
            kw[f.name] = tuple(raw.split())
        elif isinstance(default, tuple):
            kw[f.name] = tuple(float(x) for x in raw.split())
        else:
            kw[f.name] = type(default)(raw)
    return TrainRecipe(**kw)


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    utt_ids: list[str]
    feats: np.ndarray        # (B, T, F)
    lengths: np.ndarray      # (B,)
    targets: list[list[int]]
    tokens_in: np.ndarray    # (B, L+1) sos + tokens, eos padded
    labels: np.ndarray       # (B, L+1) tokens + eos, -1 padded


def make_batch(utts: Sequence[Utterance], vocab, feats: Sequence[np.ndarray] | None = None) -> Batch:
    feats = [u.features for u in utts] if feats is None else list(feats)
    targets = [u.tokens(vocab) for u in utts]
    b = len(utts)
    t = max(f.shape[0] for f in feats)
    x = np.zeros((b, t, feats[0].shape[1]))
    for i, f in enumerate(feats):
        x[i, :f.shape[0]] = f
    length = max(len(y) for y in targets) + 1
    tin = np.full((b, length), vocab.eos, dtype=np.int64)
    lab = np.full((b, length), -1, dtype=np.int64)
    for i, y in enumerate(targets):
        tin[i, 0] = vocab.sos
        tin[i, 1:len(y) + 1] = y
        lab[i, :len(y)] = y
        lab[i, len(y)] = vocab.eos
    return Batch([u.utt_id for u in utts], x, np.array([f.shape[0] for f in feats]),
                 targets, tin, lab)


def batches(utts: Sequence[Utterance], batch_size: int, rng: np.random.Generator | None = None):
    order = sorted(range(len(utts)), key=lambda i: utts[i].utt_id)
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    for s in range(0, len(order), batch_size):
        yield [utts[i] for i in order[s:s + batch_size]]


def augment_features(utts, recipe: TrainRecipe, rng: np.random.Generator):
    out = []
    for u in utts:
        f = u.features
        if recipe.speed_factors:
            f = speed_perturb(f, float(rng.choice(recipe.speed_factors)))
        if recipe.spec_augment:
            f = spec_augment(f, rng, SpecAugmentPolicy())
        out.append(f)
    return out


# ---------------------------------------------------------------- loss

def batch_loss(p, config, batch: Batch, recipe: TrainRecipe, plans=None, lhuc=None,
               smoothing: float | None = None) -> Tensor:
    """Joint CTC+attention loss of one batch (the L_Conformer scalar)."""
    lp, logits, lens = net.forward(p, config, batch.feats, batch.lengths, batch.tokens_in,
                                   plans=plans, lhuc=lhuc)
    ls = recipe.label_smoothing if smoothing is None else smoothing
    w = recipe.ctc_weight
    att = attention_ce_loss(logits, batch.labels, ls) if w < 1.0 else None
    ctc = None
    if w > 0.0:
        ctc, _ = ctc_loss_mean(lp, lens, batch.targets, config.vocab.blank)
    if att is None:
        return ctc
    if ctc is None:
        return att
    return joint_loss(ctc, att, w)


def joint_loss_value(params, utts: Sequence[Utterance], recipe: TrainRecipe,
                     batch_size: int | None = None, smoothing: float = 0.0) -> float:
    """Utterance-weighted mean joint loss over ``utts`` (no augmentation)."""
    base, lhuc = _unpack(params)
    p = net.param_tensors(base)
    total, n = 0.0, 0
    for group in batches(utts, batch_size or recipe.batch_size):
        b = make_batch(group, base.config.vocab)
        total += batch_loss(p, base.config, b, recipe, lhuc=lhuc, smoothing=smoothing).item() * len(group)
        n += len(group)
    return total / max(n, 1)


def _unpack(model):
    if isinstance(model, AdaptedParams):
        return model.base, model.lhuc_tensors()
    return model, None


# ---------------------------------------------------------------- optimisation

class Optimizer:
    """Gradient descent with an inverse-square-root warmup schedule, optional Adam moments."""

    def __init__(self, recipe: TrainRecipe):
        self.recipe = recipe
        self.step_num = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def lr(self) -> float:
        s, w = self.step_num, self.recipe.warmup_steps
        if w <= 0:
            return self.recipe.step_size
        return self.recipe.step_size * min(s / w, np.sqrt(w / s))

    def step(self, state: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.step_num += 1
        lr = self.lr()
        names = [k for k in state if grads.get(k) is not None]
        if self.recipe.grad_clip > 0:
            norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in names))
            if not np.isfinite(norm):
                raise TrainingDivergence("non-finite gradient norm")
            if norm > self.recipe.grad_clip:
                grads = {k: grads[k] * (self.recipe.grad_clip / norm) for k in names}
        for k in names:
            g = grads[k]
            if self.recipe.adam:
                b1, b2 = self.recipe.adam_betas
                m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
                v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
                self.m[k], self.v[k] = m, v
                mh = m / (1 - b1 ** self.step_num)
                vh = v / (1 - b2 ** self.step_num)
                state[k] = state[k] - lr * mh / (np.sqrt(vh) + 1e-9)
            else:
                state[k] = state[k] - lr * g


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float


@dataclass
class TrainResult:
    params: object
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def fit(state: dict[str, np.ndarray], step_loss: Callable[[dict, list], Tensor],
        dev_loss: Callable[[dict], float], train_utts: Sequence[Utterance],
        recipe: TrainRecipe, seed: int) -> tuple[dict[str, np.ndarray], list[EpochStats], int]:
    """Generic epoch loop over trainable arrays ``state``.

    ``step_loss(tensors, utts)`` builds the loss for a batch from leaf tensors
    of ``state``; ``dev_loss(state)`` scores a snapshot. Returns the best (or
    last) state, the per-epoch history and the chosen epoch (0 = initial).
    """
    rng = np.random.default_rng(seed)
    opt = Optimizer(recipe)
    state = dict(state)
    d0 = dev_loss(state)
    history = [EpochStats(0, float("nan"), d0)]
    best, best_dev, best_epoch = dict(state), d0, 0
    for epoch in range(1, recipe.epochs + 1):
        tot, n = 0.0, 0
        for group in batches(train_utts, recipe.batch_size, rng):
            leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in state.items()}
            loss = step_loss(leaves, group, rng)
            val = loss.item()
            if not np.isfinite(val):
                raise TrainingDivergence(f"loss became {val} at epoch {epoch}")
            backward(loss)
            opt.step(state, {k: t.grad for k, t in leaves.items()})
            tot += val * len(group)
            n += len(group)
        dv = dev_loss(state)
        if not np.isfinite(dv):
            raise TrainingDivergence(f"dev loss became {dv} at epoch {epoch}")
        history.append(EpochStats(epoch, tot / max(n, 1), dv))
        log.debug("epoch %d train %.4f dev %.4f", epoch, tot / max(n, 1), dv)
        if dv < best_dev:
            best, best_dev, best_epoch = dict(state), dv, epoch
    if recipe.keep_best:
        return best, history, best_epoch
    return state, history, recipe.epochs


def train(params: ParameterSet, corpus: Mapping[str, Sequence[Utterance]], recipe: TrainRecipe,
          seed: int, plans=None) -> TrainResult:
    """Train all non-frozen parameters on ``corpus['train']``, tracking ``corpus['dev']``."""
    config = params.config
    trainable = [k for k in params if not recipe.frozen(k)]
    if recipe.epochs == 0 or not trainable:
        dev = joint_loss_value(params, corpus.get("dev", []), recipe) if corpus.get("dev") else float("nan")
        return TrainResult(params, [EpochStats(0, float("nan"), dev)], 0)
    fixed = {k: v for k, v in params.items() if k not in set(trainable)}
    fixed_t = net.param_tensors(fixed)
    dev_utts = corpus.get("dev") or corpus["train"]

    def step_loss(leaves, group, rng):
        p = dict(fixed_t)
        p.update(leaves)
        feats = augment_features(group, recipe, rng)
        return batch_loss(p, config, make_batch(group, config.vocab, feats), recipe)

    def dev_loss(state):
        return joint_loss_value(params.replace(state), dev_utts, recipe)

    state = {k: np.array(params[k]) for k in trainable}
    state, history, best = fit(state, step_loss, dev_loss, corpus["train"], recipe, seed)
    return TrainResult(params.replace(state), history, best)


def adapt_domain(pretrained: ParameterSet, target_corpus, recipe: TrainRecipe, seed: int,
                 new_vocab=None) -> TrainResult:
    """Replace the output projections, then fine-tune on the target domain."""
    vocab = new_vocab if new_vocab is not None else pretrained.config.vocab
    fresh = replace_projections(pretrained, vocab, seed)
    return train(fresh, target_corpus, recipe, seed)


def adapt_speaker(params: ParameterSet, speaker_utts: Sequence[Utterance], epochs: int,
                  recipe: TrainRecipe | None = None, seed: int = 0) -> LhucState:
    """Learn one speaker's LHUC logits with all base parameters frozen."""
    speakers = {u.speaker_id for u in speaker_utts}
    if len(speakers) != 1:
        raise ValueError(f"adapt_speaker needs one speaker, got {sorted(speakers)}")
    (spk,) = speakers
    state0 = LhucState.zeros(spk, params.config)
    if epochs == 0:
        return state0
    recipe = recipe or TrainRecipe(step_size=0.05, warmup_steps=0, batch_size=8)
    recipe = TrainRecipe(**{**{f.name: getattr(recipe, f.name) for f in fields(recipe)},
                            "epochs": epochs, "keep_best": False,
                            "speed_factors": (), "spec_augment": False})
    config = params.config
    base = net.param_tensors(params)
    n_blocks = config.num_blocks

    def step_loss(leaves, group, rng):
        lhuc = {i: leaves[f"lhuc.{i}"] for i in range(n_blocks)}
        return batch_loss(base, config, make_batch(group, config.vocab), recipe, lhuc=lhuc)

    state = {f"lhuc.{i}": state0.r[i].copy() for i in range(n_blocks)}
    state, _, _ = fit(state, step_loss, lambda s: 0.0, speaker_utts, recipe, seed)
    r = np.stack([state[f"lhuc.{i}"] for i in range(n_blocks)])
    return LhucState(spk, r)


def adapted_loss(params: ParameterSet, lhuc: LhucState, utts, recipe: TrainRecipe) -> float:
    return joint_loss_value(apply_lhuc(params, lhuc), utts, recipe)
