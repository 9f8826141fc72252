import json
import shutil
from pathlib import Path

import pytest

from confnas import cli
from confnas.decoding import Hypothesis, NBestList
from confnas.decoding import nbest as nbest_io
from confnas.model import count_params, reference_config
from confnas.training.corpus import load_corpus

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = CONFIGS / "tiny.cfg"


def tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "source"
    assert cli.main(["synth-data", "--config", str(TINY), "--out", str(out)]) == 0
    return out


def reference_nbest(data, path, split="dev", drop_last_word=()):
    corpus = load_corpus(data)
    lists = []
    for u in corpus[split]:
        words = u.text.split()
        if u.utt_id in drop_last_word and len(words) > 1:
            words = words[:-1]
        toks = tuple(" ".join(words).replace(" ", "\x00").replace("\x00", " <space> ").split())
        lists.append(NBestList(u.utt_id, [Hypothesis(toks, -1.0, None, None, None, 0.0)]))
    nbest_io.save(path, lists)
    return corpus


class TestCountParams:
    def test_system_one(self, capsys):
        assert cli.main(["count-params", "--system", "1"]) == 0
        n = int(capsys.readouterr().out.split()[0])
        assert abs(n - 42.3e6) / 42.3e6 <= 0.05

    def test_model_config_file(self, capsys):
        assert cli.main(["count-params", "--config", str(CONFIGS / "full_sys5.cfg")]) == 0
        assert int(capsys.readouterr().out.split()[0]) == count_params(reference_config(5))

    def test_unknown_system(self):
        assert cli.main(["count-params", "--system", "99"]) == cli.EXIT_CONFIG

    def test_replay_reference_rows(self, capsys):
        assert cli.main(["replay-table1"]) == 0
        rows = capsys.readouterr().out.splitlines()[1:]
        assert [int(r.split()[0]) for r in rows] == [1, 2, 5]
        for r in rows:
            assert abs(float(r.split()[-1].rstrip("%"))) <= 5.0


class TestScoring:
    def test_hypotheses_equal_references(self, tiny_data, tmp_path, capsys):
        nb = tmp_path / "ref.txt"
        reference_nbest(tiny_data, nb)
        out = tmp_path / "wer.txt"
        assert cli.main(["score", "--config", str(TINY), "--nbest", str(nb), "--data", str(tiny_data),
                         "--out", str(out)]) == 0
        kv = dict(x.split("=", 1) for x in Path(str(out) + ".kv").read_text().splitlines())
        assert float(kv["wer.all"]) == 0.0
        assert "0.00" in capsys.readouterr().out

    def test_sigtest_between_systems(self, tiny_data, tmp_path, capsys):
        corpus = load_corpus(tiny_data)
        drop = {u.utt_id for u in corpus["dev"]}
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        reference_nbest(tiny_data, a)
        reference_nbest(tiny_data, b, drop_last_word=drop)
        assert cli.main(["sigtest", "--config", str(TINY), "--nbest1", str(a), "--nbest2", str(a),
                         "--data", str(tiny_data)]) == 0
        assert "not significant" in capsys.readouterr().out
        assert cli.main(["sigtest", "--nbest1", str(b), "--nbest2", str(a),
                         "--data", str(tiny_data)]) == 0
        assert "-> significant" in capsys.readouterr().out


class TestExitCodes:
    def test_missing_seed_is_config_error(self, tmp_path):
        cfg = tmp_path / "noseed.cfg"
        cfg.write_text(TINY.read_text().split("[corpus]")[0].replace("corpus = 11", "")
                       + "[corpus]\ntrain_speakers = 2\n")
        assert cli.main(["synth-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == cli.EXIT_CONFIG
        assert cli.main(["synth-data", "--config", str(cfg), "--seed", "3",
                         "--out", str(tmp_path / "d")]) == 0

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["synth-data", "--config", str(tmp_path / "nope.cfg"),
                         "--out", str(tmp_path / "d")]) == cli.EXIT_CONFIG

    def test_missing_artifact_is_data_error(self, tiny_data, tmp_path):
        assert cli.main(["decode", "--config", str(TINY), "--model", str(tmp_path / "no_model"),
                         "--data", str(tiny_data), "--out", str(tmp_path / "n.txt")]) == cli.EXIT_DATA
        assert cli.main(["rescore", "--config", str(TINY), "--nbest", str(tmp_path / "none.txt"),
                         "--lm", str(tmp_path / "none.arpa"), "--out", str(tmp_path / "o.txt")]) \
            == cli.EXIT_DATA

    def test_bad_jobs(self, tiny_data, tmp_path):
        assert cli.main(["decode", "--config", str(TINY), "--model", "m", "--data", str(tiny_data),
                         "--jobs", "0", "--out", str(tmp_path / "n.txt")]) == cli.EXIT_CONFIG

    def test_divergence(self, tiny_data, tmp_path):
        cfg = tmp_path / "boom.cfg"
        cfg.write_text(TINY.read_text().replace("[pretrain]\n", "[pretrain]\nstep_size = 1e200\n"
                                                "grad_clip = 0\n"))
        assert cli.main(["pretrain", "--config", str(cfg), "--data", str(tiny_data),
                         "--out", str(tmp_path / "m")]) == cli.EXIT_DIVERGED

    def test_output_may_not_overwrite_input(self, tiny_data, tmp_path):
        nb = tmp_path / "ref.txt"
        reference_nbest(tiny_data, nb)
        assert cli.main(["score", "--config", str(TINY), "--nbest", str(nb), "--data", str(tiny_data),
                         "--out", str(nb)]) != 0


class TestStages:
    def test_stage_manifest_records_hashes(self, tiny_data, tmp_path):
        man = tmp_path / "m.json"
        lm = tmp_path / "lm.arpa"
        assert cli.main(["train-lm", "--config", str(TINY), "--data", str(tiny_data), "--out", str(lm),
                         "--manifest", str(man)]) == 0
        assert cli.main(["train-lm", "--config", str(TINY), "--data", str(tiny_data),
                         "--out", str(tmp_path / "lm2.arpa"), "--manifest", str(man)]) == 0
        stages = json.loads(man.read_text())["stages"]
        assert [s["stage"] for s in stages] == ["train-lm", "train-lm"]
        assert stages[0]["outputs"][str(lm)] == cli.sha256_of(lm)
        assert lm.read_bytes() == (tmp_path / "lm2.arpa").read_bytes()


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    runs = []
    for jobs in ("2", "1"):
        out = tmp_path_factory.mktemp(f"run{jobs}")
        assert cli.main(["pipeline", "--config", str(TINY), "--jobs", jobs, "--out", str(out)]) == 0
        runs.append(out)
    yield runs
    for r in runs:
        shutil.rmtree(r, ignore_errors=True)


class TestPipeline:
    def test_byte_identical_reruns(self, tiny_runs):
        a, b = (tree_bytes(r) for r in tiny_runs)
        assert a.keys() == b.keys()
        assert [k for k in a if a[k] != b[k]] == []

    def test_manifest_lists_every_stage(self, tiny_runs):
        man = json.loads((tiny_runs[0] / "manifest.json").read_text())
        names = [s["stage"] for s in man["stages"]]
        assert names[:3] == ["synth-source", "synth-target", "pretrain"]
        assert names[-1] == "sigtest" and len(names) == 18
        for s in man["stages"]:
            for rel, digest in s["outputs"].items():
                assert cli.sha256_of(tiny_runs[0] / rel) == digest

    def test_expected_artifacts(self, tiny_runs):
        root = tiny_runs[0]
        for rel in ("search/report.CK.txt", "search/model.cfg", "lm/target.arpa",
                    "nbest/combined.dev.txt", "scores/combined.txt", "scores/sigtest.txt"):
            assert (root / rel).is_file(), rel
        assert any((root / "lhuc/target_a").glob("*.bin"))
