"""Finite-difference verification of the full training loss on a tiny graph."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import GradCheckConfig
from .errors import ConfigurationError
from .graph import KnowledgeGraphPair, build_neighbor_structure
from .model import ModelConfig, backward, forward, init_params
from .numerics import GradCheckResult, finite_diff_check
from .objective import LossConfig, RelationIndex, total_loss


@dataclass
class GradCheckInstance:
    pair: KnowledgeGraphPair
    positives: np.ndarray
    negatives: np.ndarray
    params: dict
    model: ModelConfig
    loss: LossConfig


def random_instance(cfg: GradCheckConfig, model: ModelConfig, loss: LossConfig) -> GradCheckInstance:
    """Two graphs of ``num_entities // 2`` entities, one relation each, random edges."""
    rng = np.random.default_rng(cfg.seed)
    n = max(cfg.num_entities // 2, 3)
    sides = []
    for tag in ("a", "b"):
        # a path keeps every entity present and guarantees two-hop pairs
        order = rng.permutation(n).tolist()
        edges = {(order[k], order[k + 1]) for k in range(n - 1)}
        for _ in range(n // 2):
            u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
            edges.add((u, v))
        sides.append([(f"{tag}{u}", f"{tag}_rel", f"{tag}{v}") for u, v in sorted(edges)])
    pair = KnowledgeGraphPair.from_named_triples(*sides)
    n1 = pair.num_entities1
    k = min(3, n1, pair.num_entities2)
    positives = np.array([[i, n1 + i] for i in range(k)], dtype=np.int64)
    negatives = np.array([[i, n1 + (i + 1) % pair.num_entities2] for i in range(k)]
                         + [[(i + 1) % n1, n1 + i] for i in range(k)], dtype=np.int64)
    model = replace(model, layer_dims=list(cfg.dims), num_layers=len(cfg.dims) - 1)
    params = init_params(model, pair.num_entities, rng)
    for name, p in params.items():
        if name.endswith("gate_b"):
            # nonzero gate biases: both gate regimes must be covered
            p += rng.uniform(-0.5, 0.5, size=p.shape)
    return GradCheckInstance(pair, positives, negatives, params, model, loss)


def run_gradcheck(cfg: GradCheckConfig, model: ModelConfig, loss: LossConfig) -> GradCheckResult:
    inst = random_instance(cfg, model, loss)
    structure = build_neighbor_structure(inst.pair, max_hops=max(2, inst.model.hops))
    rel_index = RelationIndex.from_pair(inst.pair)

    def loss_fn(params):
        h = forward(params, structure, inst.model).Hfinal
        return total_loss(h, inst.positives, inst.negatives, rel_index, inst.loss)[0]

    trace = forward(inst.params, structure, inst.model)
    _, grad, _ = total_loss(trace.Hfinal, inst.positives, inst.negatives, rel_index, inst.loss)
    grads = backward(trace, structure, inst.params, grad)
    if cfg.debug_scale_param is not None:
        if cfg.debug_scale_param not in grads:
            raise ConfigurationError(f"unknown parameter {cfg.debug_scale_param!r}")
        grads[cfg.debug_scale_param] = grads[cfg.debug_scale_param] * cfg.debug_scale_factor
    return finite_diff_check(loss_fn, inst.params, grads, h=cfg.h)
