"""Training loop with Adam, early stopping, checkpoints and TSV history."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .evaluator import EvalConfig, counterpart_ranks
from .graph import AlignmentSet, KnowledgeGraphPair, augment_neighborhood, build_neighbor_structure
from .model import ModelConfig, backward, forward, init_params
from .numerics import AdamState, adam_step
from .objective import LossConfig, RelationIndex, sample_negatives, total_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 4500
    max_epochs: int = 500
    patience: int = 5
    eval_every: int = 1
    rng_seed: int = 0
    use_augmentation: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.max_epochs < 0:
            raise ConfigurationError("max_epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    l1: float
    l2: float
    val_hits1: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_hits1: float | None = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.epochs)

    def losses(self) -> np.ndarray:
        return np.array([e.loss for e in self.epochs])

    def to_tsv(self) -> str:
        lines = ["epoch\tloss\tl1\tl2\tval_hits1\tseconds"]
        for e in self.epochs:
            lines.append(f"{e.epoch}\t{e.loss:.10g}\t{e.l1:.10g}\t{e.l2:.10g}\t{e.val_hits1:.6g}\t{e.seconds:.4f}")
        return "\n".join(lines) + "\n"

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_tsv())


@dataclass
class PreparedGraph:
    pair: KnowledgeGraphPair
    structure: object
    rel_index: RelationIndex
    num_augmented: int


def prepare_graph(pair: KnowledgeGraphPair, seed: AlignmentSet, model: ModelConfig,
                  use_augmentation: bool) -> PreparedGraph:
    """Apply augmentation (training seed only) and build neighbor structure and relation index."""
    base = len(pair.triples)
    if use_augmentation and len(seed):
        pair = augment_neighborhood(pair, seed)
    structure = build_neighbor_structure(pair, max_hops=max(2, model.hops))
    return PreparedGraph(pair, structure, RelationIndex.from_pair(pair), len(pair.triples) - base)


def validation_scores(Hfinal, pair: KnowledgeGraphPair, seed: AlignmentSet, valid: AlignmentSet,
                      eval_cfg: EvalConfig) -> tuple[float, float]:
    """Validation ``(Hits@1, MRR)``; candidates are all graph-2 entities outside the seed."""
    candidates = np.setdiff1d(np.asarray(pair.entities2), seed.targets)
    ranks = counterpart_ranks(Hfinal, valid, eval_cfg, target_ids=candidates)
    return float(np.mean(ranks == 1)), float(np.mean(1.0 / ranks))


def train(pair: KnowledgeGraphPair, seed: AlignmentSet, valid: AlignmentSet | None, cfg: TrainConfig,
          eval_cfg: EvalConfig | None = None, prepared: PreparedGraph | None = None,
          callback=None):
    """Train on ``seed`` and early-stop on ``valid``. Returns ``(params, history)``.

    One epoch shuffles the seed pairs, draws fresh negatives, and for every
    batch runs a full-graph forward pass, the loss on that batch, the backward
    pass and an Adam step. Parameters from the best validation evaluation are
    returned; without a validation set, the final parameters are.
    """
    if len(seed) == 0:
        raise ConfigurationError("empty seed alignment")
    seed.validate(pair)
    valid = valid if valid is not None else AlignmentSet.from_pairs([])
    if len(valid):
        valid.validate(pair)
        overlap = set(seed.sources.tolist()) & set(valid.sources.tolist())
        if overlap:
            raise ConfigurationError(f"seed and validation share {len(overlap)} sources")
    eval_cfg = eval_cfg or EvalConfig()
    mcfg, lcfg = cfg.model, cfg.loss
    prepared = prepared or prepare_graph(pair, seed, mcfg, cfg.use_augmentation)
    structure, rel_index = prepared.structure, prepared.rel_index

    init_rng = np.random.default_rng([cfg.rng_seed, 0])
    rng = np.random.default_rng([cfg.rng_seed, 1])
    params = init_params(mcfg, pair.num_entities, init_rng)
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return params, history

    adam = AdamState(learning_rate=cfg.learning_rate)
    best_params = {k: v.copy() for k, v in params.items()}
    best = (-1.0, -1.0)
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(seed))
        negatives = sample_negatives(seed, pair, lcfg.negatives_per_pair, rng, epoch)
        tot = l1s = l2s = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            trace = forward(params, structure, mcfg)
            loss, grad, (l1, l2) = total_loss(trace.Hfinal, seed.pairs[batch],
                                              negatives.for_positives(batch), rel_index, lcfg)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            grads = backward(trace, structure, params, grad)
            adam_step(params, grads, adam)
            tot += loss
            l1s += l1
            l2s += l2
        val = float("nan")
        if len(valid) and epoch % cfg.eval_every == 0:
            val, mrr = validation_scores(forward(params, structure, mcfg).Hfinal, pair, seed, valid, eval_cfg)
            # equal Hits@1 counts as progress only if MRR rose
            if (val, mrr) > best:
                best, stale = (val, mrr), 0
                best_params = {k: v.copy() for k, v in params.items()}
                history.best_epoch, history.best_val_hits1 = epoch, val
            else:
                stale += 1
        history.epochs.append(EpochRecord(epoch, tot, l1s, l2s, val, time.perf_counter() - t0))
        log.debug("epoch %d loss %.6f val_hits1 %.4f", epoch, tot, val)
        if callback is not None:
            callback(epoch, params, history)
        if len(valid) and stale >= cfg.patience:
            history.stopped_early = True
            break
    if len(valid) and history.best_epoch is not None:
        return best_params, history
    return params, history
