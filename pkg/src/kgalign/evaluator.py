"""Nearest-neighbor alignment prediction and ranked-retrieval metrics.

Similarities are computed in row tiles whose size is bounded by
``EvalConfig.memory_budget_mb``; results never depend on the tile size.
Ties are broken by ascending entity id.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, EvaluationError
from .graph import AlignmentSet, NeighborStructure

SIMILARITIES = ("euclidean", "cosine", "csls")


@dataclass
class EvalConfig:
    similarity: str = "csls"
    csls_k: int = 10
    hits_ks: list = field(default_factory=lambda: [1, 10])
    layer_selector: str = "combined"
    memory_budget_mb: float = 256.0

    def __post_init__(self):
        if self.similarity not in SIMILARITIES:
            raise ConfigurationError(f"unknown similarity {self.similarity!r}; expected one of {SIMILARITIES}")
        if self.csls_k < 1:
            raise ConfigurationError("csls_k must be >= 1")
        if not self.hits_ks or any(k < 1 for k in self.hits_ks):
            raise ConfigurationError("hits_ks must be a nonempty list of positive integers")
        self.hits_ks = sorted(int(k) for k in self.hits_ks)


@dataclass
class EvalReport:
    hits: dict
    mrr: float
    num_test_pairs: int
    mean_overlap_coefficient: float | None = None
    label: str = "combined"
    similarity: str = "csls"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hits"] = {str(k): v for k, v in self.hits.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def format_reports(reports) -> str:
    """Aligned plain-text table, one row per report."""
    reports = list(reports)
    ks = sorted({k for r in reports for k in r.hits})
    head = ["representation", "similarity"] + [f"Hits@{k}" for k in ks] + ["MRR", "pairs", "OC"]
    rows = []
    for r in reports:
        oc = "-" if r.mean_overlap_coefficient is None else f"{r.mean_overlap_coefficient:.4f}"
        rows.append([r.label, r.similarity] + [f"{r.hits.get(k, float('nan')):.4f}" for k in ks]
                    + [f"{r.mrr:.4f}", str(r.num_test_pairs), oc])
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)


def _tile_rows(n_cols: int, budget_mb: float) -> int:
    return max(1, int(budget_mb * 2 ** 20 / (8 * 3 * max(n_cols, 1))))


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def _topk_mean(sim: np.ndarray, k: int) -> np.ndarray:
    k = min(k, sim.shape[1])
    part = np.partition(sim, sim.shape[1] - k, axis=1)[:, sim.shape[1] - k:]
    return part.mean(axis=1)


class _Scorer:
    """Yields score tiles (higher is better) of sources against targets."""

    def __init__(self, emb, source_ids, target_ids, cfg: EvalConfig):
        if len(target_ids) == 0:
            raise ConfigurationError("empty target set")
        if len(source_ids) == 0:
            raise ConfigurationError("empty source set")
        self.cfg = cfg
        self.tile = _tile_rows(len(target_ids), cfg.memory_budget_mb)
        self.src = np.asarray(emb[np.asarray(source_ids)], dtype=np.float64)
        self.tgt = np.asarray(emb[np.asarray(target_ids)], dtype=np.float64)
        if cfg.similarity in ("cosine", "csls"):
            self.src = _unit_rows(self.src)
            self.tgt = _unit_rows(self.tgt)
        if cfg.similarity == "csls":
            k = cfg.csls_k
            self.r_src = np.concatenate([_topk_mean(self.src[a:a + self.tile] @ self.tgt.T, k)
                                         for a in range(0, len(self.src), self.tile)])
            tile_t = _tile_rows(len(self.src), cfg.memory_budget_mb)
            self.r_tgt = np.concatenate([_topk_mean(self.tgt[a:a + tile_t] @ self.src.T, k)
                                         for a in range(0, len(self.tgt), tile_t)])

    def tiles(self):
        for a in range(0, len(self.src), self.tile):
            block = self.src[a:a + self.tile]
            if self.cfg.similarity == "euclidean":
                scores = -cdist(block, self.tgt)
            elif self.cfg.similarity == "cosine":
                scores = block @ self.tgt.T
            else:
                scores = 2.0 * (block @ self.tgt.T) - self.r_src[a:a + self.tile, None] - self.r_tgt[None, :]
            yield a, scores


def predict_alignment(emb, source_ids, target_ids, cfg: EvalConfig, top_n: int | None = None) -> np.ndarray:
    """Target entity ids ranked best-first for every source (row per source)."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    scorer = _Scorer(emb, source_ids, target_ids, cfg)
    # stable argsort over (targets by ascending id) makes ties resolve by id
    by_id = np.argsort(target_ids, kind="stable")
    n_out = len(target_ids) if top_n is None else min(top_n, len(target_ids))
    out = np.empty((len(scorer.src), n_out), dtype=np.int64)
    for a, scores in scorer.tiles():
        order = np.argsort(-scores[:, by_id], axis=1, kind="stable")[:, :n_out]
        out[a:a + len(scores)] = target_ids[by_id][order]
    return out


def counterpart_ranks(emb, test: AlignmentSet, cfg: EvalConfig, target_ids=None) -> np.ndarray:
    """1-based rank of each test pair's true counterpart, computed tile by tile.

    Candidates default to the test pairs' side-2 entities.
    """
    if len(test) == 0:
        raise EvaluationError("empty test alignment")
    target_ids = test.targets if target_ids is None else np.asarray(target_ids, dtype=np.int64)
    pos = {t: k for k, t in enumerate(target_ids.tolist())}
    try:
        gold = np.array([pos[t] for t in test.targets.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise EvaluationError(f"counterpart {exc.args[0]} is not among the candidates") from None
    scorer = _Scorer(emb, test.sources, target_ids, cfg)
    ranks = np.empty(len(test), dtype=np.int64)
    for a, scores in scorer.tiles():
        g = gold[a:a + len(scores)]
        gold_score = scores[np.arange(len(g)), g][:, None]
        better = (scores > gold_score).sum(axis=1)
        tied_lower = ((scores == gold_score) & (target_ids[None, :] < target_ids[g][:, None])).sum(axis=1)
        ranks[a:a + len(scores)] = 1 + better + tied_lower
    return ranks


def metrics_from_ranks(ranks: np.ndarray, hits_ks) -> tuple[dict, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    hits = {int(k): float(np.mean(ranks <= k)) for k in hits_ks}
    return hits, float(np.mean(1.0 / ranks))


def compute_metrics(ranked: np.ndarray, test: AlignmentSet, hits_ks, sources=None) -> EvalReport:
    """Metrics from ranked candidate lists (rows aligned with ``sources``, default ``test.sources``)."""
    sources = test.sources if sources is None else np.asarray(sources)
    row_of = {s: k for k, s in enumerate(sources.tolist())}
    ranks = np.empty(len(test), dtype=np.int64)
    for k, (s, t) in enumerate(test):
        if s not in row_of:
            raise EvaluationError(f"no ranked list for source {s}")
        hit = np.flatnonzero(ranked[row_of[s]] == t)
        if len(hit) == 0:
            raise EvaluationError(f"counterpart {t} of source {s} absent from its candidate list")
        ranks[k] = hit[0] + 1
    hits, mrr = metrics_from_ranks(ranks, hits_ks)
    return EvalReport(hits, mrr, len(test))


def overlap_coefficient(pair_ids, structure: NeighborStructure, reference: AlignmentSet) -> float:
    """Overlap of one-hop neighbor sets after mapping side 1 through ``reference``.

    Only neighbors with a counterpart in ``reference`` take part. The result
    is ``|mapped & N(i')| / min(|mapped|, |N(i')|)``, or 0 when either set is
    empty.
    """
    i, j = (int(x) for x in pair_ids)
    mapping = dict(reference)
    if mapping.get(i) != j:
        raise ValueError(f"({i}, {j}) is not a reference pair")
    mapped = {mapping[x] for x in structure.neighbors(i).tolist() if x in mapping}
    target = set(structure.neighbors(j).tolist())
    if not mapped or not target:
        return 0.0
    return len(mapped & target) / min(len(mapped), len(target))


def evaluate(emb, test: AlignmentSet, cfg: EvalConfig, structure: NeighborStructure | None = None,
             reference: AlignmentSet | None = None, label: str = "combined", target_ids=None) -> EvalReport:
    """Rank, score and (given a structure) average OC over correctly aligned pairs."""
    ranks = counterpart_ranks(emb, test, cfg, target_ids)
    hits, mrr = metrics_from_ranks(ranks, cfg.hits_ks)
    oc = None
    if structure is not None:
        reference = reference if reference is not None else test
        correct = test.pairs[ranks == 1]
        oc = float(np.mean([overlap_coefficient(p, structure, reference) for p in correct])) if len(correct) else 0.0
    return EvalReport(hits, mrr, len(test), oc, label, cfg.similarity)


def evaluate_layers(trace, test: AlignmentSet, cfg: EvalConfig, structure=None, reference=None) -> list:
    """Reports for the input features, each normalized layer output and the combination."""
    from .model import select_representation

    selectors = ["input"] + [f"layer{l}" for l in range(1, len(trace.layers) + 1)] + ["combined"]
    return [evaluate(select_representation(trace, s), test, cfg, structure, reference, label=s)
            for s in selectors]


def dump_predictions(path, ranked: np.ndarray, sources, names, top: int = 10) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s, row in zip(np.asarray(sources).tolist(), ranked):
            f.write("\t".join([names[s]] + [names[t] for t in row[:top].tolist()]) + "\n")
