"""Contrastive alignment loss, relation loss and negative sampling.

All losses take the combined representation matrix and return
``(value, gradient w.r.t. that matrix)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SamplingError
from .graph import AlignmentSet, KnowledgeGraphPair


@dataclass
class LossConfig:
    margin: float = 1.5
    alpha1: float = 0.1
    alpha2: float = 0.01
    negatives_per_pair: int = 10

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigurationError("margin must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigurationError("alpha1 and alpha2 must be non-negative")
        if self.negatives_per_pair < 0:
            raise ConfigurationError("negatives_per_pair must be non-negative")


@dataclass
class NegativeSet:
    pairs: np.ndarray  # (k, 2); rows grouped by positive, `count` per positive
    epoch: int = 0
    count: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def for_positives(self, index: np.ndarray) -> np.ndarray:
        """Negatives generated for the given positive rows."""
        if self.count == 0:
            return self.pairs[:0]
        idx = (np.asarray(index)[:, None] * self.count + np.arange(self.count)).reshape(-1)
        return self.pairs[idx]


def sample_negatives(A_plus: AlignmentSet, pair: KnowledgeGraphPair, count: int,
                     rng: np.random.Generator, epoch: int = 0) -> NegativeSet:
    """Corrupt each positive ``count`` times by replacing one side uniformly."""
    if count < 0:
        raise ConfigurationError("count must be non-negative")
    pos = A_plus.pairs
    if count == 0 or len(pos) == 0:
        return NegativeSet(np.empty((0, 2), dtype=np.int64), epoch, count)
    positives = set(map(tuple, pos.tolist()))
    n1, n2 = pair.num_entities1, pair.num_entities2
    k = len(pos) * count
    base = np.repeat(pos, count, axis=0)
    side = rng.integers(0, 2, size=k)
    out = base.copy()
    out[side == 0, 0] = rng.integers(0, n1, size=int((side == 0).sum()))
    out[side == 1, 1] = n1 + rng.integers(0, n2, size=int((side == 1).sum()))
    for r in range(k):
        tries = 0
        while (out[r, 0], out[r, 1]) in positives:
            tries += 1
            if tries > 1000:
                raise SamplingError(f"cannot corrupt positive {tuple(base[r])} without colliding")
            if side[r] == 0:
                out[r, 0] = rng.integers(0, n1)
            else:
                out[r, 1] = n1 + rng.integers(0, n2)
    return NegativeSet(out, epoch, count)


def _pair_distances(H, pairs):
    diff = H[pairs[:, 0]] - H[pairs[:, 1]]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return diff, dist


def _unit(diff, dist):
    # zero-distance pairs get a zero subgradient
    safe = np.where(dist > 0.0, dist, 1.0)
    return np.where((dist > 0.0)[:, None], diff / safe[:, None], 0.0)


def alignment_loss(H, positives, negatives, cfg: LossConfig):
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(H)
    diff, dist = _pair_distances(H, pos)
    loss = float(dist.sum())
    u = _unit(diff, dist)
    np.add.at(grad, pos[:, 0], u)
    np.add.at(grad, pos[:, 1], -u)
    if len(neg) and cfg.alpha1 > 0:
        diff, dist = _pair_distances(H, neg)
        slack = cfg.margin - dist
        active = slack > 0.0
        loss += cfg.alpha1 * float(slack[active].sum())
        u = _unit(diff[active], dist[active]) * cfg.alpha1
        np.add.at(grad, neg[active, 0], -u)
        np.add.at(grad, neg[active, 1], u)
    return loss, grad


@dataclass
class RelationIndex:
    """Subject-object pairs grouped by relation (augmentation edges excluded)."""
    relations: np.ndarray  # relation id per pair, sorted
    subjects: np.ndarray
    objects: np.ndarray
    relation_ids: np.ndarray  # distinct relations, ascending

    @classmethod
    def from_pair(cls, pair: KnowledgeGraphPair) -> "RelationIndex":
        t = pair.triples
        t = t[t[:, 1] != pair.aug_relation]
        order = np.lexsort((t[:, 2], t[:, 0], t[:, 1]))
        t = t[order]
        return cls(t[:, 1].copy(), t[:, 0].copy(), t[:, 2].copy(), np.unique(t[:, 1]))

    def __len__(self) -> int:
        return len(self.relation_ids)

    def pairs_of(self, relation: int) -> np.ndarray:
        sel = self.relations == relation
        return np.stack([self.subjects[sel], self.objects[sel]], axis=1)

    def _groups(self):
        inverse = np.searchsorted(self.relation_ids, self.relations)
        sizes = np.bincount(inverse, minlength=len(self.relation_ids)).astype(np.float64)
        return inverse, sizes


def relation_representation(H, rel_index: RelationIndex) -> np.ndarray:
    """Mean of ``h_s - h_o`` per relation; row order follows ``rel_index.relation_ids``."""
    inverse, sizes = rel_index._groups()
    diff = H[rel_index.subjects] - H[rel_index.objects]
    rep = np.zeros((len(rel_index.relation_ids), H.shape[1]))
    np.add.at(rep, inverse, diff)
    return rep / sizes[:, None]


def relation_loss(H, rel_index: RelationIndex):
    """Sum over relations of the mean distance of ``h_s - h_o`` to the relation mean.

    The relation vector is recomputed from ``H``, and the gradient flows
    through it.
    """
    grad = np.zeros_like(H)
    if len(rel_index.relations) == 0:
        return 0.0, grad
    inverse, sizes = rel_index._groups()
    diff = H[rel_index.subjects] - H[rel_index.objects]
    rep = np.zeros((len(sizes), H.shape[1]))
    np.add.at(rep, inverse, diff)
    rep /= sizes[:, None]
    resid = diff - rep[inverse]
    dist = np.sqrt(np.einsum("ij,ij->i", resid, resid))
    weight = 1.0 / sizes[inverse]
    loss = float((dist * weight).sum())
    u = _unit(resid, dist) * weight[:, None]
    # d resid_t / d diff_t' = I[t == t'] - 1/|T_r|
    u_sum = np.zeros_like(rep)
    np.add.at(u_sum, inverse, u)
    d_diff = u - (u_sum / sizes[:, None])[inverse]
    np.add.at(grad, rel_index.subjects, d_diff)
    np.add.at(grad, rel_index.objects, -d_diff)
    return loss, grad


def total_loss(H, positives, negatives, rel_index: RelationIndex | None, cfg: LossConfig):
    """``L1 + alpha2 * L2``; returns ``(total, gradient, (L1, L2))``."""
    l1, g = alignment_loss(H, positives, negatives, cfg)
    l2 = 0.0
    if rel_index is not None:
        l2, g2 = relation_loss(H, rel_index)
        if cfg.alpha2 > 0:
            g = g + cfg.alpha2 * g2
    return l1 + cfg.alpha2 * l2, g, (l1, l2)
