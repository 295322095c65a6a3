"""Knowledge graph pairs, neighbor indexing, augmentation and synthetic data.

Entities of both graphs share one dense integer id space: side 1 occupies
``0..n1-1`` and side 2 occupies ``n1..n1+n2-1``. Relations follow the same
scheme, and one extra id (``pair.aug_relation``) is reserved for edges added
by :func:`augment_neighborhood`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ParseError, ReferentialError


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True, eq=False)
class KnowledgeGraphPair:
    num_entities1: int
    num_entities2: int
    num_relations1: int
    num_relations2: int
    triples: np.ndarray  # (m, 3) int64: head, relation, tail
    entity_names: tuple[str, ...]
    relation_names: tuple[str, ...]
    _index1: dict = field(default=None, repr=False)
    _index2: dict = field(default=None, repr=False)

    def __post_init__(self):
        n1 = self.num_entities1
        names = self.entity_names
        object.__setattr__(self, "_index1", {s: i for i, s in enumerate(names[:n1])})
        object.__setattr__(self, "_index2", {s: n1 + i for i, s in enumerate(names[n1:])})
        self.triples.setflags(write=False)

    @classmethod
    def from_named_triples(cls, triples1: Iterable[Sequence[str]],
                           triples2: Iterable[Sequence[str]]) -> "KnowledgeGraphPair":
        """Build a pair from string triples; ids are assigned in first-seen order.

        Entity and relation strings are namespaced per side, so the same string
        appearing in both graphs yields two distinct ids. Duplicate triples are
        dropped.
        """
        ent_names: list[str] = []
        rel_names: list[str] = []
        rows: list[tuple[int, int, int]] = []
        counts = []
        for side, triples in enumerate((triples1, triples2)):
            ents: dict[str, int] = {}
            rels: dict[str, int] = {}
            ent_offset, rel_offset = len(ent_names), len(rel_names)
            seen = set()
            for h, r, t in triples:
                ids = []
                for name in (h, t):
                    if name not in ents:
                        ents[name] = ent_offset + len(ents)
                        ent_names.append(name)
                    ids.append(ents[name])
                if r not in rels:
                    rels[r] = rel_offset + len(rels)
                    rel_names.append(r)
                row = (ids[0], rels[r], ids[1])
                if row not in seen:
                    seen.add(row)
                    rows.append(row)
            counts.append((len(ents), len(rels)))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return cls(counts[0][0], counts[1][0], counts[0][1], counts[1][1],
                   arr, tuple(ent_names), tuple(rel_names))

    @property
    def num_entities(self) -> int:
        return self.num_entities1 + self.num_entities2

    @property
    def num_relations(self) -> int:
        return self.num_relations1 + self.num_relations2

    @property
    def aug_relation(self) -> int:
        return self.num_relations

    @property
    def entities1(self) -> range:
        return range(self.num_entities1)

    @property
    def entities2(self) -> range:
        return range(self.num_entities1, self.num_entities)

    def side_of(self, entity: int) -> int:
        if 0 <= entity < self.num_entities1:
            return 1
        if self.num_entities1 <= entity < self.num_entities:
            return 2
        raise ReferentialError(f"entity id {entity} out of range")

    def entity_id(self, name: str, side: int) -> int:
        index = self._index1 if side == 1 else self._index2
        try:
            return index[name]
        except KeyError:
            raise ReferentialError(f"unknown entity {name!r} in graph {side}") from None

    def iter_triples(self) -> Iterator[Triple]:
        for h, r, t in self.triples.tolist():
            yield Triple(h, r, t)

    def with_triples(self, triples: np.ndarray) -> "KnowledgeGraphPair":
        return KnowledgeGraphPair(self.num_entities1, self.num_entities2,
                                  self.num_relations1, self.num_relations2,
                                  np.ascontiguousarray(triples, dtype=np.int64),
                                  self.entity_names, self.relation_names)


@dataclass(frozen=True, eq=False)
class AlignmentSet:
    pairs: np.ndarray  # (k, 2) int64, column 0 from side 1, column 1 from side 2

    def __post_init__(self):
        arr = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        arr.setflags(write=False)
        object.__setattr__(self, "pairs", arr)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "AlignmentSet":
        return cls(np.array(list(pairs), dtype=np.int64).reshape(-1, 2))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(map(tuple, self.pairs.tolist()))

    @property
    def sources(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def targets(self) -> np.ndarray:
        return self.pairs[:, 1]

    def validate(self, pair: KnowledgeGraphPair) -> None:
        n1, n = pair.num_entities1, pair.num_entities
        for a, b in self:
            if not 0 <= a < n1:
                raise ReferentialError(f"alignment source {a} is not a graph-1 entity")
            if not n1 <= b < n:
                raise ReferentialError(f"alignment target {b} is not a graph-2 entity")
        for col in (0, 1):
            if len(np.unique(self.pairs[:, col])) != len(self):
                raise ConfigurationError("an entity appears in more than one alignment pair")

    def __add__(self, other: "AlignmentSet") -> "AlignmentSet":
        return AlignmentSet(np.vstack([self.pairs, other.pairs]))


def _read_tsv(path, nfields):
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != nfields:
                raise ParseError(path, lineno, f"expected {nfields} tab-separated fields, got {len(parts)}")
            rows.append(parts)
    return rows


def load_graph_pair(triples_path_1, triples_path_2, links_path):
    """Read two triple files and a links file into a pair and its alignment."""
    pair = KnowledgeGraphPair.from_named_triples(_read_tsv(triples_path_1, 3),
                                                 _read_tsv(triples_path_2, 3))
    links = []
    seen = set()
    for a, b in _read_tsv(links_path, 2):
        link = (pair.entity_id(a, 1), pair.entity_id(b, 2))
        if link not in seen:
            seen.add(link)
            links.append(link)
    alignment = AlignmentSet.from_pairs(links)
    alignment.validate(pair)
    return pair, alignment


def write_triples(pair: KnowledgeGraphPair, side: int, path) -> None:
    names, rels = pair.entity_names, pair.relation_names
    n1 = pair.num_entities1
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in pair.triples.tolist():
            if (h < n1) == (side == 1) and r != pair.aug_relation:
                f.write(f"{names[h]}\t{rels[r]}\t{names[t]}\n")


def write_links(pair: KnowledgeGraphPair, alignment: AlignmentSet, path) -> None:
    names = pair.entity_names
    with open(path, "w", encoding="utf-8") as f:
        for a, b in alignment:
            f.write(f"{names[a]}\t{names[b]}\n")


@dataclass(frozen=True, eq=False)
class NeighborStructure:
    """Neighbor sets and aggregation matrices derived from a graph pair.

    ``hop_sets[m]`` is the boolean (CSR) matrix of entity pairs at exact
    undirected distance ``m``, for ``1 <= m <= max_hops``; ``hop_sets[0]`` is
    unused. Edges are undirected and self-loops are ignored.
    """
    num_entities: int
    max_hops: int
    hop_sets: tuple
    adj_norm: sp.csr_matrix
    two_hop_mask: sp.csr_matrix | None

    @property
    def one_hop(self) -> list[np.ndarray]:
        return _row_lists(self.hop_sets[1])

    @property
    def two_hop(self) -> list[np.ndarray]:
        if self.max_hops < 2:
            return [np.empty(0, dtype=np.int64) for _ in range(self.num_entities)]
        return _row_lists(self.hop_sets[2])

    def neighbors(self, entity: int, hop: int = 1) -> np.ndarray:
        m = self.hop_sets[hop]
        return m.indices[m.indptr[entity]:m.indptr[entity + 1]].astype(np.int64)

    def attention_mask(self, hop: int) -> sp.csr_matrix:
        """Exact-distance-``hop`` neighbors plus the entity itself."""
        if hop == 2 and self.two_hop_mask is not None:
            return self.two_hop_mask
        if hop > self.max_hops:
            raise ConfigurationError(f"structure was built for {self.max_hops} hops, not {hop}")
        return _with_self(self.hop_sets[hop])

    def union_adjacency(self, hops: int) -> sp.csr_matrix:
        """Mean-pooling matrix over all neighbors within ``hops`` plus self."""
        if hops > self.max_hops:
            raise ConfigurationError(f"structure was built for {self.max_hops} hops, not {hops}")
        if hops == 1:
            return self.adj_norm
        union = self.hop_sets[1]
        for m in range(2, hops + 1):
            union = union + self.hop_sets[m]
        return _mean_pool(_with_self(union))


def _row_lists(m: sp.csr_matrix) -> list[np.ndarray]:
    return [m.indices[m.indptr[i]:m.indptr[i + 1]].astype(np.int64) for i in range(m.shape[0])]


def _bool_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.data[:] = 1.0
    m.sort_indices()
    return m


def _with_self(m: sp.csr_matrix) -> sp.csr_matrix:
    return _bool_csr(m + sp.identity(m.shape[0], format="csr"))


def _mean_pool(pattern: sp.csr_matrix) -> sp.csr_matrix:
    deg = np.diff(pattern.indptr).astype(np.float64)
    out = pattern.copy()
    out.data = np.repeat(1.0 / deg, np.diff(pattern.indptr))
    return out


def undirected_adjacency(pair: KnowledgeGraphPair) -> sp.csr_matrix:
    n = pair.num_entities
    t = pair.triples
    keep = t[:, 0] != t[:, 2]
    h, o = t[keep, 0], t[keep, 2]
    a = sp.coo_matrix((np.ones(2 * len(h)), (np.concatenate([h, o]), np.concatenate([o, h]))),
                      shape=(n, n))
    return _bool_csr(a)


def build_neighbor_structure(pair: KnowledgeGraphPair, max_hops: int = 2) -> NeighborStructure:
    if max_hops < 1:
        raise ConfigurationError("max_hops must be >= 1")
    n = pair.num_entities
    adj = undirected_adjacency(pair)
    eye = sp.identity(n, format="csr")
    hop_sets = [None, adj]
    reached = _bool_csr(adj + eye)
    frontier = adj
    for _ in range(2, max_hops + 1):
        nxt = _bool_csr(frontier @ adj)
        exact = _bool_csr(nxt - nxt.multiply(reached))
        hop_sets.append(exact)
        reached = _bool_csr(reached + exact)
        frontier = exact
    adj_norm = _mean_pool(_with_self(adj))
    two_hop_mask = _with_self(hop_sets[2]) if max_hops >= 2 else None
    return NeighborStructure(n, max_hops, tuple(hop_sets), adj_norm, two_hop_mask)


def _edge_set(triples: np.ndarray) -> set[tuple[int, int]]:
    return {(min(h, t), max(h, t)) for h, _, t in triples.tolist()}


def augment_neighborhood(pair: KnowledgeGraphPair, seed: AlignmentSet) -> KnowledgeGraphPair:
    """Mirror edges between seed-aligned entities onto the other graph.

    If seed entities ``i, j`` are linked in one graph and their counterparts
    are not linked in the other, a triple ``(i', aug_relation, j')`` is added.
    """
    seed.validate(pair)
    counterpart = {}
    for a, b in seed:
        counterpart[a] = b
        counterpart[b] = a
    edges = _edge_set(pair.triples)
    added = []
    for h, _, t in pair.triples.tolist():
        if h in counterpart and t in counterpart:
            h2, t2 = counterpart[h], counterpart[t]
            key = (min(h2, t2), max(h2, t2))
            if key not in edges:
                edges.add(key)
                added.append((h2, pair.aug_relation, t2))
    if not added:
        return pair
    return pair.with_triples(np.vstack([pair.triples, np.array(added, dtype=np.int64)]))


def split_alignment(alignment: AlignmentSet, train_fraction: float, rng_seed: int):
    """Random split into (train, test); the train part has floor(fraction * n) pairs."""
    if len(alignment) == 0:
        raise ConfigurationError("cannot split an empty alignment")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(alignment)
    n_train = int(math.floor(train_fraction * n + 1e-9))
    perm = np.random.default_rng(rng_seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return AlignmentSet(alignment.pairs[train_idx]), AlignmentSet(alignment.pairs[test_idx])


@dataclass
class SyntheticConfig:
    num_entities_per_side: int = 50
    num_relations: int = 4
    avg_degree: float = 4.0
    rewire_fraction: float = 0.0
    seed_alignment_fraction: float = 0.3
    rng_seed: int = 0

    def validate(self) -> None:
        n = self.num_entities_per_side
        if n < 2:
            raise ConfigurationError("num_entities_per_side must be >= 2")
        if self.num_relations < 1:
            raise ConfigurationError("num_relations must be >= 1")
        if self.avg_degree < 1:
            raise ConfigurationError("avg_degree must be >= 1")
        if not 0.0 <= self.rewire_fraction <= 1.0:
            raise ConfigurationError("rewire_fraction must be in [0, 1]")
        if not 0.0 < self.seed_alignment_fraction <= 1.0:
            raise ConfigurationError("seed_alignment_fraction must be in (0, 1]")
        if self.num_edges > n * (n - 1) // 2:
            raise ConfigurationError(f"avg_degree {self.avg_degree} impossible with {n} entities")

    @property
    def num_edges(self) -> int:
        return int(self.num_entities_per_side * self.avg_degree / 2 + 0.5)


def _random_edges(n, m, rng):
    edges: list[list[int]] = []
    present = set()
    while len(edges) < m:
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u == v or (min(u, v), max(u, v)) in present:
            continue
        present.add((min(u, v), max(u, v)))
        edges.append([u, v])
    # every entity must occur in some triple, otherwise it vanishes from the files
    deg = np.zeros(n, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    for v in rng.permutation(n).tolist():
        if deg[v] > 0:
            continue
        donors = [k for k, (a, b) in enumerate(edges) if deg[a] >= 2 or deg[b] >= 2]
        if not donors:
            raise ConfigurationError("avg_degree too low to give every entity an edge")
        k = donors[int(rng.integers(len(donors)))]
        a, b = edges[k]
        slot = 0 if deg[a] >= 2 else 1
        old, keep = edges[k][slot], edges[k][1 - slot]
        present.discard((min(a, b), max(a, b)))
        edges[k][slot] = v
        present.add((min(v, keep), max(v, keep)))
        deg[old] -= 1
        deg[v] += 1
    return edges


def generate_synthetic_pair(cfg: SyntheticConfig):
    """Random graph plus a renamed, partially rewired copy.

    Returns ``(pair, seed, test)``. The ground-truth alignment is the renaming
    bijection; ``seed`` holds ``seed_alignment_fraction`` of it. Rewiring
    replaces one endpoint of ``floor(p * edges)`` edges with a random entity,
    never creating self-loops, duplicate edges, edges present in the original
    mapped graph, or isolated entities.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    n, m = cfg.num_entities_per_side, cfg.num_edges
    edges = _random_edges(n, m, rng)
    rels = rng.integers(0, cfg.num_relations, size=m)
    flip = rng.random(m) < 0.5
    heads = [e[1] if f else e[0] for e, f in zip(edges, flip)]
    tails = [e[0] if f else e[1] for e, f in zip(edges, flip)]
    rename = rng.permutation(n)

    h2 = [int(rename[h]) for h in heads]
    t2 = [int(rename[t]) for t in tails]
    original = {(min(a, b), max(a, b)) for a, b in zip(h2, t2)}
    current = set(original)
    deg = np.zeros(n, dtype=np.int64)
    for a, b in zip(h2, t2):
        deg[a] += 1
        deg[b] += 1
    target = int(math.floor(cfg.rewire_fraction * m + 1e-9))
    done = 0
    for k in rng.permutation(m).tolist():
        if done == target:
            break
        ends = [s for s in (0, 1) if deg[(h2[k], t2[k])[s]] >= 2]
        if not ends:
            continue
        slot = ends[int(rng.integers(len(ends)))]
        old = (h2[k], t2[k])[slot]
        keep = (h2[k], t2[k])[1 - slot]
        candidates = [w for w in rng.permutation(n).tolist()
                      if w != keep and w != old
                      and (min(w, keep), max(w, keep)) not in current
                      and (min(w, keep), max(w, keep)) not in original]
        if not candidates:
            continue
        w = candidates[0]
        current.discard((min(old, keep), max(old, keep)))
        current.add((min(w, keep), max(w, keep)))
        deg[old] -= 1
        deg[w] += 1
        if slot == 0:
            h2[k] = w
        else:
            t2[k] = w
        done += 1
    if done < target:
        raise ConfigurationError(f"could only rewire {done} of {target} edges")

    triples1 = [(f"kg1/e{h}", f"kg1/r{r}", f"kg1/e{t}") for h, r, t in zip(heads, rels.tolist(), tails)]
    triples2 = [(f"kg2/e{h}", f"kg2/r{r}", f"kg2/e{t}") for h, r, t in zip(h2, rels.tolist(), t2)]
    order = rng.permutation(m)
    triples2 = [triples2[k] for k in order.tolist()]
    pair = KnowledgeGraphPair.from_named_triples(triples1, triples2)
    truth = AlignmentSet.from_pairs(
        (pair.entity_id(f"kg1/e{i}", 1), pair.entity_id(f"kg2/e{rename[i]}", 2)) for i in range(n))
    truth = AlignmentSet(truth.pairs[np.argsort(truth.pairs[:, 0], kind="stable")])
    if cfg.seed_alignment_fraction >= 1.0:
        return pair, truth, AlignmentSet.from_pairs([])
    seed, test = split_alignment(truth, cfg.seed_alignment_fraction, cfg.rng_seed)
    return pair, seed, test
