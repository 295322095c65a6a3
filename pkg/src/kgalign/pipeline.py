"""End-to-end helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigurationError
from .evaluator import EvalConfig, evaluate, evaluate_layers
from .graph import (
    AlignmentSet,
    KnowledgeGraphPair,
    _read_tsv,
    generate_synthetic_pair,
    load_graph_pair,
    split_alignment,
    write_links,
    write_triples,
)
from .model import forward, save_checkpoint
from .trainer import PreparedGraph, prepare_graph, train


@dataclass
class Dataset:
    pair: KnowledgeGraphPair
    train: AlignmentSet
    valid: AlignmentSet
    test: AlignmentSet

    @property
    def reference(self) -> AlignmentSet:
        return self.train + self.valid + self.test


def carve_validation(seed: AlignmentSet, fraction: float, rng_seed: int):
    """Split ``fraction`` of the seed off as validation; no split if either part would be empty."""
    if fraction <= 0 or len(seed) < 2:
        return seed, AlignmentSet.from_pairs([])
    n_train = int(math.floor((1.0 - fraction) * len(seed) + 1e-9))
    if n_train < 1 or n_train >= len(seed):
        return seed, AlignmentSet.from_pairs([])
    return split_alignment(seed, 1.0 - fraction, rng_seed)


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data.is_set:
        d = cfg.data
        if d.triples2 is None or d.links is None:
            raise ConfigurationError("data needs triples1, triples2 and links")
        for p in (d.triples1, d.triples2, d.links):
            if not Path(p).exists():
                raise ConfigurationError(f"data file not found: {p}")
        pair, alignment = load_graph_pair(d.triples1, d.triples2, d.links)
        seed, test = split_alignment(alignment, d.train_fraction, d.split_seed)
    else:
        pair, seed, test = generate_synthetic_pair(cfg.synthetic)
    if cfg.data.valid_links is not None:
        valid = AlignmentSet.from_pairs((pair.entity_id(a, 1), pair.entity_id(b, 2))
                                        for a, b in _read_tsv(cfg.data.valid_links, 2))
        valid.validate(pair)
        held = set(valid.sources.tolist())
        seed = AlignmentSet(seed.pairs[[s not in held for s in seed.sources.tolist()]])
        test = AlignmentSet(test.pairs[[s not in held for s in test.sources.tolist()]])
        train_seed = seed
    else:
        train_seed, valid = carve_validation(seed, cfg.train.valid_fraction, cfg.train.rng_seed)
    return Dataset(pair, train_seed, valid, test)


def prepare(cfg: RunConfig, data: Dataset) -> PreparedGraph:
    return prepare_graph(data.pair, data.train, cfg.model, cfg.train.use_augmentation)


def evaluate_run(params, cfg: RunConfig, data: Dataset, prepared: PreparedGraph,
                 eval_cfg: EvalConfig | None = None, per_layer: bool = False):
    eval_cfg = eval_cfg or cfg.eval
    trace = forward(params, prepared.structure, cfg.model)
    if per_layer:
        return trace, evaluate_layers(trace, data.test, eval_cfg, prepared.structure, data.reference)
    from .model import select_representation

    emb = select_representation(trace, eval_cfg.layer_selector)
    return trace, [evaluate(emb, data.test, eval_cfg, prepared.structure, data.reference,
                            label=eval_cfg.layer_selector)]


@dataclass
class RunResult:
    params: dict
    history: object
    report: object
    data: Dataset
    prepared: PreparedGraph


def run_training(cfg: RunConfig, out_dir=None) -> RunResult:
    data = load_dataset(cfg)
    prepared = prepare(cfg, data)
    params, history = train(data.pair, data.train, data.valid, cfg.train_config(), cfg.eval, prepared)
    report = None
    if len(data.test):
        _, (report,) = evaluate_run(params, cfg, data, prepared)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.txt", params, cfg.model, {"run": cfg.to_dict()})
        history.write_tsv(out / "history.tsv")
        (out / "report.json").write_text((report.to_json() if report else "{}") + "\n", encoding="utf-8")
    return RunResult(params, history, report, data, prepared)


def write_dataset(cfg: RunConfig, out_dir) -> list[Path]:
    """Generate the synthetic pair and write it in the TSV layout."""
    pair, seed, test = generate_synthetic_pair(cfg.synthetic)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "triples_1.tsv", out / "triples_2.tsv", out / "links.tsv",
             out / "train_links.tsv", out / "test_links.tsv"]
    write_triples(pair, 1, files[0])
    write_triples(pair, 2, files[1])
    truth = seed + test
    truth = AlignmentSet(truth.pairs[np.argsort(truth.pairs[:, 0], kind="stable")])
    write_links(pair, truth, files[2])
    write_links(pair, seed, files[3])
    write_links(pair, test, files[4])
    return files
