"""Pipelined (decoupled) architecture search, progressive staging and selection."""
from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from ..model import network as net
from ..model.config import (FULL_FD_SCOPE, ModelConfig, format_ah, format_ck, format_fd)
from ..model.params import ParameterSet, count_params
from ..tensor import Tensor, backward
from ..training.corpus import Utterance
from ..training.trainer import (Optimizer, TrainingDivergence, TrainRecipe, batch_loss, batches,
                                make_batch)
from .supernet import (STAGES, ArchParams, CandidateSet, Supernet, apply_choices, arch_space,
                       build_supernet)
from .weights import ArchError, expected_cost, gumbel_noise, gumbel_weights, penalized_loss, softmax_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSettings:
    mode: str = "gumbel"            # softmax or gumbel
    eta: float = 0.0                # penalty factor
    cost_scale: float = 1e6         # penalty counts parameters in millions
    t_start: float = 1.0
    t_end: float = 0.1
    epochs: int = 10
    warmup_epochs: int = 2          # base-only epochs before logits move
    arch_step_size: float = 0.05
    arch_batch_size: int = 16

    def temperature(self, step: int, total: int) -> float:
        """Exponential decay from t_start to t_end over ``total`` logit steps."""
        if total <= 1:
            return self.t_start
        return self.t_start * (self.t_end / self.t_start) ** (step / (total - 1))


def settings_dumps(s: SearchSettings) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["search"] = {f.name: str(getattr(s, f.name)) for f in fields(s)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def settings_from_section(section) -> SearchSettings:
    kw = {}
    for f in fields(SearchSettings):
        if f.name in section:
            kw[f.name] = type(getattr(SearchSettings(), f.name))(section[f.name])
    return SearchSettings(**kw)


@dataclass
class TraceStep:
    step: int
    temperature: float
    penalty: float
    weights: dict[str, np.ndarray]  # softmax(alpha) per searched key


@dataclass
class SearchReport:
    stage: str
    space: list[CandidateSet]
    trace: list[TraceStep]
    selection: dict[str, int]
    config: ModelConfig
    param_count: int
    arch: ArchParams | None = None

    def chosen(self) -> dict[str, int]:
        sets = {c.key: c for c in self.space}
        return {k: sets[k].candidates[i] for k, i in self.selection.items()}

    def to_text(self, fd_scope: Sequence[int] = FULL_FD_SCOPE) -> str:
        """Per-step trace followed by the selected architecture in compact notation."""
        lines = [f"# stage {self.stage}", "[trace]"]
        for t in self.trace:
            for key in sorted(t.weights):
                vec = " ".join(f"{x:.6f}" for x in t.weights[key])
                lines.append(f"step={t.step}\tT={t.temperature:.6f}\tpenalty={t.penalty:.6f}\t"
                             f"{key}\t{vec}")
        lines += ["[selection]",
                  f"FD: {format_fd(self.config, fd_scope)}",
                  f"AH: {format_ah(self.config)}",
                  f"CK: {format_ck(self.config)}",
                  f"params: {self.param_count}", ""]
        return "\n".join(lines)


def select_architecture(arch: ArchParams, space: Sequence[CandidateSet]) -> dict[str, int]:
    """Largest weight per searched slot; exact ties go to the cheaper candidate."""
    out = {}
    for cs in space:
        a = np.asarray(arch.logits[cs.key], dtype=np.float64)
        best = np.flatnonzero(a == a.max())
        out[cs.key] = int(min(best, key=lambda i: (cs.costs[i], i)))
    return out


def _weights(arch: ArchParams, leaves: Mapping[str, Tensor], temperature: float,
             rng: np.random.Generator) -> dict[str, Tensor]:
    if arch.mode == "softmax":
        return {k: softmax_weights(a) for k, a in leaves.items()}
    return {k: gumbel_weights(a, temperature, noise=gumbel_noise(a.shape[0], rng))
            for k, a in leaves.items()}


def pipelined_search(supernet: Supernet, train_utts: Sequence[Utterance],
                     heldout_utts: Sequence[Utterance], recipe: TrainRecipe,
                     settings: SearchSettings, seed: int) -> tuple[SearchReport, ParameterSet]:
    """Alternate base-parameter steps on ``train_utts`` and logit steps on ``heldout_utts``.

    Base steps hold the architecture logits fixed; logit steps minimise the
    penalised loss with base parameters fixed. In gumbel mode both phases
    use sampled weights and the temperature decays per logit step. Returns
    the report and the trained supernet parameters.
    """
    train_ids = {u.utt_id for u in train_utts}
    overlap = train_ids & {u.utt_id for u in heldout_utts}
    if overlap:
        raise ArchError(f"train and held-out splits share {len(overlap)} utterances")
    arch = ArchParams({k: np.array(v, dtype=np.float64) for k, v in supernet.arch.logits.items()},
                      mode=settings.mode, eta=settings.eta)
    space = supernet.space
    costs = supernet.costs()
    config = supernet.config
    searched = {c.key for c in space if len(c) > 1}
    trace: list[TraceStep] = []

    def record(step, temp, penalty):
        trace.append(TraceStep(step, temp, penalty,
                               {k: softmax_weights(v).data for k, v in arch.logits.items()}))

    state = {k: np.array(v) for k, v in supernet.params.items()}
    if not searched:
        record(0, settings.t_start, 0.0)
        sel = select_architecture(arch, space)
        final = apply_choices(config, {c.key: c.candidates[sel[c.key]] for c in space})
        return SearchReport(supernet.stage, space, trace, sel, final, count_params(final), arch), \
            supernet.params

    rng = np.random.default_rng(seed)
    n_train_batches = -(-len(train_utts) // recipe.batch_size)
    arch_epochs = max(settings.epochs - settings.warmup_epochs, 0)
    total_arch = arch_epochs * n_train_batches
    base_opt = Optimizer(recipe)
    arch_opt = Optimizer(TrainRecipe(step_size=settings.arch_step_size, warmup_steps=0,
                                     adam=True, grad_clip=0.0))
    held = list(heldout_utts)
    held_iter = iter(())
    arch_step = 0
    temp = settings.t_start
    record(0, temp, 0.0)
    for epoch in range(1, settings.epochs + 1):
        searching = epoch > settings.warmup_epochs
        for group in batches(train_utts, recipe.batch_size, rng):
            # (a) base step, architecture fixed
            leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in state.items()}
            fixed_a = {k: Tensor(v) for k, v in arch.logits.items()}
            lam = _weights(arch, fixed_a, temp, rng)
            loss = batch_loss(leaves, config, make_batch(group, config.vocab), recipe,
                              plans=supernet.plans(lam))
            if not np.isfinite(loss.item()):
                raise TrainingDivergence(f"supernet loss became {loss.item()} at epoch {epoch}")
            backward(loss)
            base_opt.step(state, {k: t.grad for k, t in leaves.items()})
            if not searching:
                continue
            # (b) logit step on held-out data, base fixed
            temp = settings.temperature(arch_step, total_arch)
            hgroup = next(held_iter, None)
            if hgroup is None:
                held_iter = batches(held, settings.arch_batch_size, rng)
                hgroup = next(held_iter)
            p = net.param_tensors(state)
            a_leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in arch.logits.items()}
            lam = _weights(arch, a_leaves, temp, rng)
            l_conf = batch_loss(p, config, make_batch(hgroup, config.vocab), recipe,
                                plans=supernet.plans(lam))
            expected = {k: softmax_weights(a) for k, a in a_leaves.items()}
            total = penalized_loss(l_conf, expected, costs, settings.eta, settings.cost_scale)
            backward(total)
            grads = {k: a_leaves[k].grad if k in searched else None for k in a_leaves}
            arch_opt.step(arch.logits, grads)
            arch_step += 1
            penalty = settings.eta * expected_cost(expected, costs).item() / settings.cost_scale
            record(arch_step, temp, penalty)
        log.debug("search epoch %d done (%d logit steps)", epoch, arch_step)
    arch.temperature = temp
    sel = select_architecture(arch, space)
    final = apply_choices(config, {c.key: c.candidates[sel[c.key]] for c in space})
    return (SearchReport(supernet.stage, space, trace, sel, final, count_params(final), arch),
            ParameterSet(state, config))


def injected_report(config: ModelConfig, stage: str, scopes,
                    weights: Mapping[str, Sequence[float]]) -> SearchReport:
    """Selection from externally supplied weights (no supernet, no training)."""
    space = arch_space(config, stage, scopes)
    logits = {}
    for cs in space:
        w = np.asarray(weights.get(cs.key, np.full(len(cs), 1.0 / len(cs))), dtype=np.float64)
        if w.shape != (len(cs),) or np.any(w <= 0):
            raise ArchError(f"{cs.key}: need {len(cs)} positive weights, got {w}")
        logits[cs.key] = np.log(w)
    arch = ArchParams(logits, mode="softmax")
    sel = select_architecture(arch, space)
    final = apply_choices(config, {c.key: c.candidates[sel[c.key]] for c in space})
    trace = [TraceStep(0, 1.0, 0.0, {k: softmax_weights(v).data for k, v in logits.items()})]
    return SearchReport(stage, space, trace, sel, final, count_params(final), arch)


def progressive_search(base_config: ModelConfig, scopes: Mapping[str, object],
                       settings: SearchSettings, recipe: TrainRecipe | None = None,
                       train_utts: Sequence[Utterance] = (), heldout_utts: Sequence[Utterance] = (),
                       seed: int = 0,
                       inject: Mapping[str, Mapping[str, Sequence[float]]] | None = None,
                       ) -> tuple[ModelConfig, list[SearchReport]]:
    """Search FD, then AH, then CK, pinning each stage's winners.

    ``scopes`` maps stage name to its candidate scope (stages missing are
    skipped). ``inject`` maps stage name to per-key weights that replace the
    search for that stage. Every stage's supernet is built fresh from
    ``seed`` over the current configuration.
    """
    config = base_config
    reports = []
    for k, stage in enumerate(STAGES):
        if stage not in scopes:
            continue
        if inject and stage in inject:
            rep = injected_report(config, stage, scopes[stage], inject[stage])
        else:
            space = arch_space(config, stage, scopes[stage])
            if all(len(c) == 1 for c in space):
                rep = injected_report(config, stage, scopes[stage], {})
            else:
                if recipe is None:
                    raise ArchError("a training recipe is required to search")
                sn = build_supernet(config, stage, scopes[stage], seed=seed + k,
                                    mode=settings.mode, eta=settings.eta)
                rep, _ = pipelined_search(sn, train_utts, heldout_utts, recipe, settings, seed + k)
        config = rep.config
        reports.append(rep)
    return config, reports
