import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kgalign import cli
from kgalign.errors import DivergenceError
from kgalign.graph import load_graph_pair

ROOT = Path(__file__).resolve().parents[1]

SMALL = {
    "synthetic": {"num_entities_per_side": 30, "rng_seed": 1},
    "model": {"layer_dims": [12, 10, 8]},
    "train": {"max_epochs": 15},
}


def write_config(tmp_path, body, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body), encoding="utf-8")
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestTrainEvaluate:
    def test_train_then_evaluate(self, tmp_path, capsys):
        config = write_config(tmp_path, SMALL)
        out = tmp_path / "out"
        code, _, _ = run(["train", "--config", config, "--out", out], capsys)
        assert code == 0
        assert {"checkpoint.txt", "history.tsv", "report.json"} <= {p.name for p in out.iterdir()}
        trained = json.loads((out / "report.json").read_text())

        code, text, _ = run(["evaluate", "--config", config, "--checkpoint", out / "checkpoint.txt",
                             "--out", out], capsys)
        assert code == 0 and "Hits@1" in text
        evaluated = json.loads((out / "report_csls.json").read_text())
        assert evaluated["hits"] == trained["hits"] and evaluated["mrr"] == trained["mrr"]

        code, _, _ = run(["evaluate", "--config", config, "--checkpoint", out / "checkpoint.txt",
                          "--out", out, "--similarity", "euclidean"], capsys)
        assert code == 0
        assert json.loads((out / "report_euclidean.json").read_text())["similarity"] == "euclidean"

        code, text, _ = run(["evaluate", "--config", config, "--checkpoint", out / "checkpoint.txt",
                             "--out", out, "--per-layer"], capsys)
        assert code == 0
        layers = json.loads((out / "report_csls_layers.json").read_text())
        assert [r["label"] for r in layers] == ["input", "layer1", "layer2", "combined"]

    def test_dimension_mismatch(self, tmp_path, capsys):
        config = write_config(tmp_path, SMALL)
        out = tmp_path / "out"
        assert run(["train", "--config", config, "--out", out], capsys)[0] == 0
        other = write_config(tmp_path, dict(SMALL, model={"layer_dims": [12, 6]}), "other.json")
        code, _, err = run(["evaluate", "--config", other, "--checkpoint", out / "checkpoint.txt"], capsys)
        assert code == 2 and "dims" in err

    def test_divergence_exit(self, tmp_path, capsys, monkeypatch):
        import kgalign.pipeline as pipeline

        def boom(*args, **kwargs):
            raise DivergenceError(4)

        monkeypatch.setattr(pipeline, "train", boom)
        code, _, err = run(["train", "--config", write_config(tmp_path, SMALL), "--out", tmp_path], capsys)
        assert code == 3 and "epoch 4" in err

    def test_file_dataset_with_relative_paths(self, tmp_path, capsys):
        gen = write_config(tmp_path, {"synthetic": {"num_entities_per_side": 30}}, "gen.json")
        assert run(["generate", "--config", gen, "--out", tmp_path / "data"], capsys)[0] == 0
        body = dict(SMALL, data={"triples1": "data/triples_1.tsv", "triples2": "data/triples_2.tsv",
                                 "links": "data/links.tsv"})
        config = write_config(tmp_path, body)
        code, _, _ = run(["train", "--config", config, "--out", tmp_path / "out"], capsys)
        assert code == 0


class TestErrors:
    def test_missing_config(self, tmp_path, capsys):
        code, _, err = run(["train", "--config", tmp_path / "nope.json"], capsys)
        assert code == 2 and "nope.json" in err

    def test_unknown_key(self, tmp_path, capsys):
        code, _, err = run(["train", "--config", write_config(tmp_path, {"foo": 1})], capsys)
        assert code == 2 and "'foo'" in err

    def test_unknown_nested_key(self, tmp_path, capsys):
        code, _, err = run(["train", "--config", write_config(tmp_path, {"train": {"foo": 1}})], capsys)
        assert code == 2 and "train.foo" in err

    def test_bad_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{", encoding="utf-8")
        assert run(["train", "--config", path], capsys)[0] == 2

    def test_impossible_generate(self, tmp_path, capsys):
        config = write_config(tmp_path, {"synthetic": {"num_entities_per_side": 5, "avg_degree": 10.0}})
        assert run(["generate", "--config", config, "--out", tmp_path], capsys)[0] == 2


class TestGenerate:
    def test_round_trip_isomorphic(self, tmp_path, capsys):
        config = write_config(tmp_path, {"synthetic": {"num_entities_per_side": 50, "rewire_fraction": 0.0}})
        out = tmp_path / "g"
        assert run(["generate", "--config", config, "--out", out], capsys)[0] == 0
        pair, alignment = load_graph_pair(out / "triples_1.tsv", out / "triples_2.tsv", out / "links.tsv")
        assert len(alignment) == 50
        m = dict(alignment)
        e1 = {frozenset((m[h], m[t])) for h, _, t in pair.iter_triples() if pair.side_of(h) == 1}
        e2 = {frozenset((h, t)) for h, _, t in pair.iter_triples() if pair.side_of(h) == 2}
        assert e1 == e2

    def test_deterministic_files(self, tmp_path, capsys):
        config = write_config(tmp_path, {"synthetic": {"num_entities_per_side": 40, "rewire_fraction": 0.3}})
        run(["generate", "--config", config, "--out", tmp_path / "a"], capsys)
        run(["generate", "--config", config, "--out", tmp_path / "b"], capsys)
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


class TestGradcheck:
    def test_passes_and_lists_parameters(self, tmp_path, capsys):
        code, out, _ = run(["gradcheck", "--config", write_config(tmp_path, {})], capsys)
        assert code == 0
        names = {line.split()[0] for line in out.splitlines()[:-1]}
        for expected in ("H0", "layer1.W", "layer2.W", "layer1.hop2.W", "layer1.hop2.M1", "layer1.hop2.M2",
                         "layer2.hop2.gate_M", "layer2.hop2.gate_b"):
            assert expected in names

    def test_scaled_gradient_fails(self, tmp_path, capsys):
        config = write_config(tmp_path, {"gradcheck": {"debug_scale_param": "layer1.hop2.M2"}})
        code, _, err = run(["gradcheck", "--config", config], capsys)
        assert code == 4 and "layer1.hop2.M2" in err

    def test_unknown_debug_param(self, tmp_path, capsys):
        config = write_config(tmp_path, {"gradcheck": {"debug_scale_param": "nope"}})
        assert run(["gradcheck", "--config", config], capsys)[0] == 2


def test_console_entry_point(tmp_path):
    config = write_config(tmp_path, {})
    proc = subprocess.run([sys.executable, "-m", "kgalign", "gradcheck", "--config", str(config)],
                          capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == 0, proc.stderr
    assert "max relative error" in proc.stdout


def test_bundled_smoke_config_parses():
    from kgalign.config import load_config

    cfg = load_config(ROOT / "configs" / "smoke.json")
    assert cfg.model.layer_dims == [32, 32, 32]


def test_defaults_match_reference_setting():
    from kgalign.config import parse_config

    cfg = parse_config({})
    assert (cfg.loss.margin, cfg.loss.alpha1, cfg.loss.alpha2, cfg.loss.negatives_per_pair) == (1.5, 0.1, 0.01, 10)
    assert cfg.train.learning_rate == 0.001 and cfg.train.patience == 5
    m = cfg.model
    assert (m.layer_dims, m.num_layers, m.hops) == ([500, 400, 300], 2, 2)
    assert (m.aggregation_activation, m.gate_activation) == ("tanh", "relu")
