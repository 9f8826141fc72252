"""Command-line driver for the desk-scale pipeline.

Every subcommand reads one experiment config (INI text, see configs/) and
writes its artifacts to fresh paths; inputs are never modified. Exit status:
0 success, 2 configuration error, 3 data error or missing artifact,
4 numerical divergence.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import evaluation
from .decoding import (ConformerRescorer, DecodeError, LMError, NBestError, beam_search_nbest,
                       cross_system_combine, lm_rescore, load_arpa, save_arpa, train_kn_lm)
from .decoding import nbest as nbest_io
from .model import config as mconfig
from .model.config import REFERENCE_SYSTEMS, ConfigError, reference_config, uniform_config
from .model.params import ParameterSet, build_model, count_params
from .model.surgery import LhucState, apply_lhuc
from .nas import ArchError, progressive_search
from .nas.search import settings_from_section
from .tensor import checkpoint
from .tensor.checkpoint import CheckpointError
from .training.corpus import (CorpusError, load_corpus, save_corpus, spec_dumps, spec_from_section,
                              synth_corpus)
from .training.trainer import (TrainingDivergence, TrainRecipe, adapt_domain, adapt_speaker,
                               recipe_from_section, train)

log = logging.getLogger("confnas")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class MissingArtifact(FileNotFoundError):
    pass


# ---------------------------------------------------------------- config

class Experiment:
    """Thin wrapper over the experiment config file."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        self.cp = configparser.ConfigParser(interpolation=None)
        if self.path is not None:
            if not self.path.exists():
                raise ConfigError(f"config file {self.path} not found")
            try:
                self.cp.read_string(self.path.read_text(encoding="utf-8"))
            except configparser.Error as e:
                raise ConfigError(f"{self.path}: {e}") from None

    def section(self, name: str, fallback: str | None = None):
        for n in (name, fallback):
            if n and self.cp.has_section(n):
                return self.cp[n]
        if fallback is None:
            raise ConfigError(f"config has no [{name}] section")
        raise ConfigError(f"config has neither [{name}] nor [{fallback}]")

    def get(self, section: str, key: str, default=None, cast=str):
        if not self.cp.has_section(section) or key not in self.cp[section]:
            return default
        try:
            return cast(self.cp[section][key])
        except ValueError as e:
            raise ConfigError(f"[{section}] {key}: {e}") from None

    def seed(self, key: str, override: int | None) -> int:
        if override is not None:
            return override
        s = self.get("seeds", key, cast=int)
        if s is None:
            raise ConfigError(f"no seed for {key!r}: pass --seed or set [seeds] {key}")
        return s

    def recipe(self, name: str, fallback: str | None = None) -> TrainRecipe:
        try:
            return recipe_from_section(self.section(name, fallback))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"[{name}]: {e}") from None


def model_config_from(exp: Experiment, vocab) -> mconfig.ModelConfig:
    m = exp.section("model")
    try:
        return uniform_config(
            feature_dim=m.getint("feature_dim"), model_dim=m.getint("model_dim"),
            num_blocks=m.getint("num_blocks"), ff=m.getint("ff"), heads=m.getint("heads"),
            kernel=m.getint("kernel"), decoder_layers=m.getint("decoder_layers"),
            decoder_heads=m.getint("decoder_heads", fallback=None),
            decoder_ff=m.getint("decoder_ff", fallback=None), vocab=vocab,
            max_rel_dist=m.getint("max_rel_dist", fallback=64))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[model]: {e}") from None


def parse_scope(text: str):
    """'1 3 5' (every layer) or '1 5; 3 5' (one list per layer)."""
    parts = [p.split() for p in text.split(";")]
    try:
        if len(parts) == 1:
            return [int(x) for x in parts[0]]
        return [[int(x) for x in p] for p in parts]
    except ValueError as e:
        raise ConfigError(f"bad candidate scope {text!r}: {e}") from None


# ---------------------------------------------------------------- artifacts

def sha256_of(path) -> str:
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for f in sorted(x for x in p.rglob("*") if x.is_file()):
            h.update(f.relative_to(p).as_posix().encode())
            h.update(b"\0")
            h.update(hashlib.sha256(f.read_bytes()).digest())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


def require(path, what: str):
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"missing prerequisite {what}: {p}")
    return p


def check_outputs(inputs: Sequence, outputs: Sequence) -> None:
    ins = [Path(p).resolve() for p in inputs if p]
    for o in outputs:
        o = Path(o).resolve()
        for i in ins:
            if o == i or i in o.parents or o in i.parents:
                raise ConfigError(f"output {o} would overwrite input {i}")


def save_model(directory, params: ParameterSet, history=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params.save(d / "params.bin")
    mconfig.save(d / "model.cfg", params.config)
    if history is not None:
        lines = ["epoch\ttrain_loss\tdev_loss\n"]
        lines += [f"{h.epoch}\t{h.train_loss!r}\t{h.dev_loss!r}\n" for h in history]
        (d / "history.tsv").write_text("".join(lines), encoding="utf-8")


def load_model(directory) -> ParameterSet:
    d = require(directory, "model directory")
    cfg = mconfig.load(require(d / "model.cfg", "model config"))
    return ParameterSet.load(require(d / "params.bin", "model parameters"), cfg)


def save_lhuc(directory, states: Sequence[LhucState]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for s in states:
        checkpoint.save(d / f"{s.speaker_id}.bin", {"r": s.r})


def load_lhuc(directory) -> dict[str, LhucState]:
    d = require(directory, "LHUC directory")
    return {f.stem: LhucState(f.stem, checkpoint.load(f)["r"]) for f in sorted(d.glob("*.bin"))}


def load_data(directory):
    d = require(directory, "corpus directory")
    spec = spec_from_section(_read_ini(require(d / "corpus.cfg", "corpus spec"))["corpus"])
    return spec, load_corpus(d)


def _read_ini(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(Path(path).read_text(encoding="utf-8"))
    return cp


def split_utts(corpus, split: str):
    if split == "test":
        return corpus["dev"] + corpus["eval"]
    if split not in corpus:
        raise ConfigError(f"unknown split {split!r}")
    return corpus[split]


def nbest_score_fn(exp: Experiment):
    """Recompute a hypothesis's combined score from its stored columns."""
    w = exp.get("decode", "ctc_weight", 0.3, float)
    lam = exp.get("lm", "weight", 0.0, float)
    beta = exp.get("combine", "beta", 0.5, float)
    order = exp.get("combine", "order", "lm-then-combine")

    def score(h):
        att = h.att_logprob or 0.0
        ac = att if h.ctc_logprob is None else (1 - w) * att + w * h.ctc_logprob
        if h.firstpass_logprob is None:
            return ac + (lam * h.lm_logprob if h.lm_logprob is not None else 0.0)
        s = beta * h.firstpass_logprob + (1 - beta) * ac
        if order == "combine-then-lm" and h.lm_logprob is not None:
            s += lam * h.lm_logprob
        return s
    return score


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _decode_one(task):
    model, feats, utt_id, beam, n, w = task
    return beam_search_nbest(model, feats, utt_id, beam=beam, nbest=n, ctc_weight=w)


def _combine_one(task):
    nb, model, feats, w, beta = task
    return cross_system_combine(nb, ConformerRescorer(model, {nb.utt_id: feats}, w), beta)


# ---------------------------------------------------------------- subcommands
# each returns (inputs, outputs) for the manifest

def cmd_synth_data(args, exp):
    section = args.section
    spec = spec_from_section(exp.section(section))
    seed = exp.seed(section, args.seed)
    out = Path(args.out)
    corpus = synth_corpus(spec, seed)
    save_corpus(corpus, out)
    (out / "corpus.cfg").write_text(spec_dumps(spec), encoding="utf-8")
    print(" ".join(f"{s}={len(u)}" for s, u in corpus.items()))
    return [], [out]


def _train_model(args, exp, config, recipe_name, seed_key, recipe_fallback=None):
    require(args.data, "training data")
    check_outputs([args.data], [args.out])
    _, corpus = load_data(args.data)
    recipe = exp.recipe(recipe_name, recipe_fallback)
    seed = exp.seed(seed_key, args.seed)
    res = train(build_model(config, seed), corpus, recipe, seed)
    save_model(args.out, res.params, res.history)
    print(f"best_epoch={res.best_epoch} params={res.params.size()}")
    return [args.data], [args.out]


def cmd_pretrain(args, exp):
    spec, _ = load_data(args.data)
    return _train_model(args, exp, model_config_from(exp, spec.vocab()), "pretrain", "pretrain")


def cmd_train(args, exp):
    spec, _ = load_data(args.data)
    if args.model_config:
        config = mconfig.load(require(args.model_config, "model config")).with_vocab(spec.vocab())
    else:
        config = model_config_from(exp, spec.vocab())
    ins, outs = _train_model(args, exp, config, "train", "train", recipe_fallback="pretrain")
    return ins + ([args.model_config] if args.model_config else []), outs


def cmd_search(args, exp):
    check_outputs([args.data], [args.out])
    spec, corpus = load_data(args.data)
    sec = exp.section("search")
    settings = settings_from_section(sec)
    scopes = {st: parse_scope(sec[st.lower()]) for st in ("FD", "AH", "CK") if st.lower() in sec}
    if not scopes:
        raise ConfigError("[search] names no candidate scope (fd, ah, ck)")
    every = exp.get("search", "heldout_every", 5, int)
    utts = sorted(corpus["train"], key=lambda u: u.utt_id)
    train_utts = [u for i, u in enumerate(utts) if i % every != every - 1]
    held = [u for i, u in enumerate(utts) if i % every == every - 1]
    recipe = exp.recipe("search_recipe", "pretrain")
    seed = exp.seed("search", args.seed)
    base = model_config_from(exp, spec.vocab())
    config, reports = progressive_search(base, scopes, settings, recipe, train_utts, held, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fd_scope = scopes.get("FD", mconfig.FULL_FD_SCOPE)
    if fd_scope and isinstance(fd_scope[0], list):
        fd_scope = sorted({v for layer in fd_scope for v in layer})
    for rep in reports:
        (out / f"report.{rep.stage}.txt").write_text(rep.to_text(fd_scope), encoding="utf-8")
    mconfig.save(out / "model.cfg", config)
    print(f"FD: {mconfig.format_fd(config, fd_scope)}\nAH: {mconfig.format_ah(config)}\n"
          f"CK: {mconfig.format_ck(config)}\nparams: {count_params(config)}")
    return [args.data], [out]


def cmd_adapt_domain(args, exp):
    check_outputs([args.model, args.data], [args.out])
    pre = load_model(args.model)
    spec, corpus = load_data(args.data)
    seed = exp.seed("adapt_domain", args.seed)
    res = adapt_domain(pre, corpus, exp.recipe("adapt"), seed, new_vocab=spec.vocab())
    save_model(args.out, res.params, res.history)
    print(f"best_epoch={res.best_epoch}")
    return [args.model, args.data], [args.out]


def cmd_adapt_speaker(args, exp):
    check_outputs([args.model, args.data], [args.out])
    params = load_model(args.model)
    _, corpus = load_data(args.data)
    epochs = exp.get("lhuc", "epochs", 10, int)
    recipe = TrainRecipe(step_size=exp.get("lhuc", "step_size", 0.05, float), warmup_steps=0,
                         batch_size=exp.get("lhuc", "batch_size", 8, int),
                         ctc_weight=exp.get("lhuc", "ctc_weight", 0.3, float))
    seed = exp.seed("adapt_speaker", args.seed)
    by_spk: dict[str, list] = {}
    for u in split_utts(corpus, args.split):
        by_spk.setdefault(u.speaker_id, []).append(u)
    states = [adapt_speaker(params, by_spk[s], epochs, recipe, seed) for s in sorted(by_spk)]
    save_lhuc(args.out, states)
    print(f"speakers={len(states)}")
    return [args.model, args.data], [args.out]


def cmd_decode(args, exp):
    check_outputs([args.model, args.data, args.lhuc], [args.out])
    params = load_model(args.model)
    _, corpus = load_data(args.data)
    lhuc = load_lhuc(args.lhuc) if args.lhuc else {}
    beam = exp.get("decode", "beam", 10, int)
    n = exp.get("decode", "nbest", 10, int)
    w = exp.get("decode", "ctc_weight", 0.3, float)
    utts = sorted(split_utts(corpus, args.split), key=lambda u: u.utt_id)
    tasks = [(apply_lhuc(params, lhuc[u.speaker_id]) if u.speaker_id in lhuc else params,
              u.features, u.utt_id, beam, n, w) for u in utts]
    lists = _pmap(_decode_one, tasks, args.jobs)
    nbest_io.save(args.out, lists)
    print(f"utterances={len(lists)}")
    return [args.model, args.data] + ([args.lhuc] if args.lhuc else []), [args.out]


def cmd_train_lm(args, exp):
    check_outputs([args.data], [args.out])
    _, corpus = load_data(args.data)
    order = exp.get("lm", "order", 4, int)
    lm = train_kn_lm([u.text.split() for u in split_utts(corpus, args.split)], order)
    save_arpa(args.out, lm)
    print(f"order={order} vocab={len(lm.vocab)}")
    return [args.data], [args.out]


def cmd_rescore(args, exp):
    check_outputs([args.nbest, args.lm], [args.out])
    lists = nbest_io.load(args.nbest, nbest_score_fn(exp))
    lm = load_arpa(args.lm)
    lam = exp.get("lm", "weight", 0.0, float)
    nbest_io.save(args.out, [lm_rescore(nb, lm, lam) for nb in lists])
    return [args.nbest, args.lm], [args.out]


def cmd_combine(args, exp):
    check_outputs([args.nbest, args.model, args.data], [args.out])
    lists = nbest_io.load(args.nbest, nbest_score_fn(exp))
    model_b = load_model(args.model)
    _, corpus = load_data(args.data)
    feats = {u.utt_id: u.features for s in corpus.values() for u in s}
    missing = [nb.utt_id for nb in lists if nb.utt_id not in feats]
    if missing:
        raise NBestError(f"no features for {len(missing)} utterances, e.g. {missing[0]}")
    beta = args.beta if args.beta is not None else exp.get("combine", "beta", 0.5, float)
    w = exp.get("decode", "ctc_weight", 0.3, float)
    out = _pmap(_combine_one, [(nb, model_b, feats[nb.utt_id], w, beta) for nb in lists], args.jobs)
    nbest_io.save(args.out, out)
    return [args.nbest, args.model, args.data], [args.out]


def _refs(corpus, split):
    return {u.utt_id: (u.group_tag, u.text.split()) for u in split_utts(corpus, split)}


def _hyps(path, exp):
    return {nb.utt_id: nb.best().words() for nb in nbest_io.load(path, nbest_score_fn(exp)) if nb.hyps}


def cmd_score(args, exp):
    _, corpus = load_data(args.data)
    report = evaluation.wer_report(_refs(corpus, args.split), _hyps(args.nbest, exp))
    text = report.to_text()
    sys.stdout.write(text)
    outs = []
    if args.out:
        check_outputs([args.nbest, args.data], [args.out])
        Path(args.out).write_text(text, encoding="utf-8")
        Path(str(args.out) + ".kv").write_text(report.to_keyvalue(), encoding="utf-8")
        outs = [args.out, str(args.out) + ".kv"]
    return [args.nbest, args.data], outs


def cmd_sigtest(args, exp):
    _, corpus = load_data(args.data)
    refs = _refs(corpus, args.split)
    e1 = evaluation.wer_report(refs, _hyps(args.nbest1, exp)).errors_by_utt()
    e2 = evaluation.wer_report(refs, _hyps(args.nbest2, exp)).errors_by_utt()
    res = evaluation.mapsswe(e1, e2, exp.get("score", "alpha", 0.05, float))
    sys.stdout.write(res.to_text())
    if args.out:
        Path(args.out).write_text(res.to_text(), encoding="utf-8")
    return [args.nbest1, args.nbest2, args.data], [args.out] if args.out else []


def cmd_count_params(args, exp):
    if args.system is not None:
        if args.system not in REFERENCE_SYSTEMS:
            raise ConfigError(f"no reference system {args.system}; have {sorted(REFERENCE_SYSTEMS)}")
        config = reference_config(args.system)
    elif exp.path is not None and exp.cp.has_section("encoder.0"):
        config = mconfig.load(exp.path)
    elif exp.path is not None:
        config = model_config_from(exp, mconfig.Vocab.from_alphabet(
            exp.get("corpus", "alphabet", "abcdef")))
    else:
        config = reference_config(1)
    n = count_params(config)
    print(f"{n}\t{n / 1e6:.1f}M")
    return [exp.path] if exp.path else [], []


def cmd_replay_table1(args, exp):
    print(f"{'sys':>4s} {'FD':>44s} {'AH':>6s} {'CK':>6s} {'params':>12s} {'ref':>8s} {'rel.err':>8s}")
    for row in (1, 2, 5):
        cfg = reference_config(row)
        n = count_params(cfg)
        ref = REFERENCE_SYSTEMS[row]["params"]
        ah = sorted({b.num_heads for b in cfg.encoder_blocks})
        ck = sorted({b.conv_kernel for b in cfg.encoder_blocks})
        print(f"{row:4d} {mconfig.format_fd(cfg)[:44]:>44s} {','.join(map(str, ah)):>6s} "
              f"{','.join(map(str, ck)):>6s} {n / 1e6:11.2f}M {ref / 1e6:7.1f}M "
              f"{(n - ref) / ref:+8.2%}")
    return [], []


# ---------------------------------------------------------------- pipeline

PIPELINE_SEEDS = ("corpus", "target_corpus", "pretrain", "search", "train", "adapt_domain",
                  "adapt_speaker")


def cmd_pipeline(args, exp):
    """All stages in order; writes <out>/manifest.json."""
    out = Path(args.out)
    seeds = {k: (args.seed + i if args.seed is not None else exp.seed(k, None))
             for i, k in enumerate(PIPELINE_SEEDS)}
    p = {k: out / v for k, v in dict(
        source="data/source", target="data/target", model_a="models/source_a",
        search="search", model_b="models/source_b", target_a="models/target_a",
        target_b="models/target_b", lhuc="lhuc/target_a", nb_a="nbest/a.dev.txt",
        nb_b="nbest/b.dev.txt", lm="lm/target.arpa", nb_a_lm="nbest/a_lm.dev.txt",
        nb_comb="nbest/combined.dev.txt", wer_a="scores/a.txt", wer_b="scores/b.txt",
        wer_a_lm="scores/a_lm.txt", wer_comb="scores/combined.txt",
        sig="scores/sigtest.txt").items()}
    for d in ("nbest", "lm", "scores", "models"):
        (out / d).mkdir(parents=True, exist_ok=True)

    def ns(**kw):
        base = dict(seed=None, jobs=args.jobs, split="dev", out=None, lhuc=None, beta=None,
                    model_config=None)
        base.update(kw)
        return argparse.Namespace(**base)

    b_config = p["search"] / "model.cfg"
    stages = [
        ("synth-source", cmd_synth_data, ns(section="corpus", seed=seeds["corpus"], out=p["source"])),
        ("synth-target", cmd_synth_data, ns(section="target_corpus", seed=seeds["target_corpus"],
                                            out=p["target"])),
        ("pretrain", cmd_pretrain, ns(data=p["source"], seed=seeds["pretrain"], out=p["model_a"])),
        ("search", cmd_search, ns(data=p["source"], seed=seeds["search"], out=p["search"])),
        ("train", cmd_train, ns(data=p["source"], seed=seeds["train"], out=p["model_b"],
                                model_config=b_config)),
        ("adapt-domain-a", cmd_adapt_domain, ns(model=p["model_a"], data=p["target"],
                                                seed=seeds["adapt_domain"], out=p["target_a"])),
        ("adapt-domain-b", cmd_adapt_domain, ns(model=p["model_b"], data=p["target"],
                                                seed=seeds["adapt_domain"], out=p["target_b"])),
        ("adapt-speaker", cmd_adapt_speaker, ns(model=p["target_a"], data=p["target"], split="eval",
                                                seed=seeds["adapt_speaker"], out=p["lhuc"])),
        ("decode-a", cmd_decode, ns(model=p["target_a"], data=p["target"], lhuc=p["lhuc"],
                                    out=p["nb_a"])),
        ("decode-b", cmd_decode, ns(model=p["target_b"], data=p["target"], out=p["nb_b"])),
        ("train-lm", cmd_train_lm, ns(data=p["target"], split="train", out=p["lm"])),
        ("rescore", cmd_rescore, ns(nbest=p["nb_a"], lm=p["lm"], out=p["nb_a_lm"])),
        ("combine", cmd_combine, ns(nbest=p["nb_a_lm"], model=p["target_b"], data=p["target"],
                                    out=p["nb_comb"])),
        ("score-a", cmd_score, ns(nbest=p["nb_a"], data=p["target"], out=p["wer_a"])),
        ("score-b", cmd_score, ns(nbest=p["nb_b"], data=p["target"], out=p["wer_b"])),
        ("score-a-lm", cmd_score, ns(nbest=p["nb_a_lm"], data=p["target"], out=p["wer_a_lm"])),
        ("score-combined", cmd_score, ns(nbest=p["nb_comb"], data=p["target"], out=p["wer_comb"])),
        ("sigtest", cmd_sigtest, ns(nbest1=p["nb_a_lm"], nbest2=p["nb_comb"], data=p["target"],
                                    out=p["sig"])),
    ]
    manifest = {"config": str(exp.path), "config_sha256": sha256_of(exp.path), "stages": []}
    for name, fn, a in stages:
        log.info("stage %s", name)
        print(f"== {name}")
        ins, outs = fn(a, exp)
        manifest["stages"].append(_record(name, exp, a.seed, ins, outs, root=out))
    write_manifest(out / "manifest.json", manifest)
    return [], [out]


def _rel(path, root) -> str:
    p = Path(path)
    if root is not None:
        try:
            return p.resolve().relative_to(Path(root).resolve()).as_posix()
        except ValueError:
            pass
    return p.as_posix()


def _record(stage, exp, seed, inputs, outputs, root=None) -> dict:
    return {"stage": stage, "config": str(exp.path) if exp.path else None, "seed": seed,
            "inputs": {_rel(i, root): sha256_of(i) for i in inputs if i},
            "outputs": {_rel(o, root): sha256_of(o) for o in outputs if o}}


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="confnas", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, seed=False, jobs=False, config_required=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=config_required, help="experiment config (INI)")
        if seed:
            p.add_argument("--seed", type=int, help="overrides the config's [seeds] entry")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--manifest", help="append a stage record to this JSON manifest")
        p.set_defaults(func=fn)
        return p

    p = add("synth-data", cmd_synth_data, "synthesize a corpus", seed=True)
    p.add_argument("--section", default="corpus", help="config section with the corpus spec")
    p.add_argument("--out", required=True)
    for name, fn, h in (("pretrain", cmd_pretrain, "train the [model] config on a corpus"),
                        ("train", cmd_train, "train a given model config from scratch")):
        p = add(name, fn, h, seed=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        if name == "train":
            p.add_argument("--model-config", help="model config file (default: [model])")
    p = add("search", cmd_search, "progressive FD/AH/CK architecture search", seed=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p = add("adapt-domain", cmd_adapt_domain, "fine-tune a model on a target corpus", seed=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p = add("adapt-speaker", cmd_adapt_speaker, "learn per-speaker LHUC scalings", seed=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="eval", help="adaptation utterances (dev, eval or test)")
    p.add_argument("--out", required=True)
    p = add("decode", cmd_decode, "beam search N-best lists", jobs=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lhuc", help="directory of per-speaker LHUC states")
    p.add_argument("--split", default="dev")
    p.add_argument("--out", required=True)
    p = add("train-lm", cmd_train_lm, "modified Kneser-Ney LM on corpus transcripts")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p = add("rescore", cmd_rescore, "add LM scores to an N-best file")
    p.add_argument("--nbest", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--out", required=True)
    p = add("combine", cmd_combine, "two-pass cross-system rescoring", jobs=True)
    p.add_argument("--nbest", required=True, help="first-pass (system A) N-best file")
    p.add_argument("--model", required=True, help="system B model directory")
    p.add_argument("--data", required=True)
    p.add_argument("--beta", type=float, help="overrides [combine] beta")
    p.add_argument("--out", required=True)
    p = add("score", cmd_score, "WER table of the 1-best hypotheses", config_required=False)
    p.add_argument("--nbest", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--out")
    p = add("sigtest", cmd_sigtest, "MAPSSWE test between two systems", config_required=False)
    p.add_argument("--nbest1", required=True)
    p.add_argument("--nbest2", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--out")
    p = add("count-params", cmd_count_params, "parameter count of a model config",
            config_required=False)
    p.add_argument("--system", type=int, help="reference system number (full scale)")
    add("replay-table1", cmd_replay_table1, "full-scale parameter counts of reference systems 1, 2, 5",
        config_required=False)
    p = add("pipeline", cmd_pipeline, "run every stage in order", seed=True, jobs=True)
    p.add_argument("--out", required=True)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for attr, val in (("seed", None), ("jobs", 1)):
        if not hasattr(args, attr):
            setattr(args, attr, val)
    try:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        exp = Experiment(args.config)
        inputs, outputs = args.func(args, exp)
        if args.manifest:
            mpath = Path(args.manifest)
            manifest = json.loads(mpath.read_text()) if mpath.exists() else {"stages": []}
            manifest["stages"].append(_record(args.command, exp, args.seed, inputs, outputs))
            write_manifest(mpath, manifest)
    except TrainingDivergence as e:
        print(f"error: numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ArchError, configparser.Error) as e:
        print(f"error: configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FileNotFoundError, CorpusError, CheckpointError, NBestError, LMError,
            DecodeError, evaluation.EvalError) as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
