from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgalign.errors import ConfigurationError, ParseError, ReferentialError
from kgalign.graph import (
    AlignmentSet,
    KnowledgeGraphPair,
    SyntheticConfig,
    augment_neighborhood,
    build_neighbor_structure,
    generate_synthetic_pair,
    load_graph_pair,
    split_alignment,
)

from conftest import random_pair, write_tsv


def bfs_distances(n, edges, src):
    adj = [set() for _ in range(n)]
    for u, v in edges:
        if u != v:
            adj[u].add(v)
            adj[v].add(u)
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def single_side_pair(edges, n=None):
    names = sorted({x for e in edges for x in e})
    triples = [(f"e{u}", "r", f"e{v}") for u, v in edges]
    return KnowledgeGraphPair.from_named_triples(triples, [("x", "s", "y")])


class TestLoad:
    def test_smallest_input(self, tmp_path):
        t1 = write_tsv(tmp_path / "t1", [("a", "r", "b")])
        t2 = write_tsv(tmp_path / "t2", [("c", "s", "d")])
        links = write_tsv(tmp_path / "l", [("a", "c")])
        pair, alignment = load_graph_pair(t1, t2, links)
        assert pair.num_entities == 4
        assert pair.num_relations == 2
        assert len(alignment) == 1
        assert list(alignment) == [(0, 2)]

    def test_first_seen_ids(self, tmp_path):
        t1 = write_tsv(tmp_path / "t1", [("z", "r", "y"), ("y", "q", "x")])
        t2 = write_tsv(tmp_path / "t2", [("z", "r", "w")])
        links = write_tsv(tmp_path / "l", [("z", "z")])
        pair, alignment = load_graph_pair(t1, t2, links)
        assert pair.entity_names == ("z", "y", "x", "z", "w")
        assert pair.relation_names == ("r", "q", "r")
        assert list(alignment) == [(0, 3)]
        assert pair.triples.tolist() == [[0, 0, 1], [1, 1, 2], [3, 2, 4]]

    def test_duplicates_dropped(self, tmp_path):
        t1 = write_tsv(tmp_path / "t1", [("a", "r", "b"), ("a", "r", "b")])
        t2 = write_tsv(tmp_path / "t2", [("c", "s", "d")])
        links = write_tsv(tmp_path / "l", [("a", "c"), ("a", "c")])
        pair, alignment = load_graph_pair(t1, t2, links)
        assert len(pair.triples) == 2
        assert len(alignment) == 1

    def test_malformed_line(self, tmp_path):
        t1 = tmp_path / "t1"
        t1.write_text("a\tr\tb\na\tr\n", encoding="utf-8")
        t2 = write_tsv(tmp_path / "t2", [("c", "s", "d")])
        links = write_tsv(tmp_path / "l", [("a", "c")])
        with pytest.raises(ParseError) as exc:
            load_graph_pair(t1, t2, links)
        assert exc.value.lineno == 2
        assert ":2:" in str(exc.value)

    def test_unknown_link_entity(self, tmp_path):
        t1 = write_tsv(tmp_path / "t1", [("a", "r", "b")])
        t2 = write_tsv(tmp_path / "t2", [("c", "s", "d")])
        links = write_tsv(tmp_path / "l", [("a", "ghost")])
        with pytest.raises(ReferentialError, match="ghost"):
            load_graph_pair(t1, t2, links)

    def test_sides_are_disjoint(self, rng):
        pair = random_pair(rng, 6, 6, 10, 10)
        for h, _, t in pair.iter_triples():
            assert pair.side_of(h) == pair.side_of(t)
        assert set(pair.entities1).isdisjoint(pair.entities2)


class TestNeighborStructure:
    def test_path(self):
        pair = single_side_pair([(0, 1), (1, 2)])
        s = build_neighbor_structure(pair)
        a, b, c = (pair.entity_id(f"e{i}", 1) for i in range(3))
        assert s.one_hop[a].tolist() == [b]
        assert s.two_hop[a].tolist() == [c]
        row = s.adj_norm.getrow(a).toarray().ravel()
        assert row[a] == 0.5 and row[b] == 0.5 and row.sum() == 1.0

    def test_triangle_has_no_two_hop(self):
        pair = single_side_pair([(0, 1), (1, 2), (2, 0)])
        s = build_neighbor_structure(pair)
        assert all(len(x) == 0 for x in s.two_hop)

    def test_isolated_entity_self_loop(self):
        pair = KnowledgeGraphPair.from_named_triples([("a", "r", "a")], [("b", "s", "c")])
        s = build_neighbor_structure(pair)
        assert len(s.one_hop[0]) == 0 and len(s.two_hop[0]) == 0
        assert s.adj_norm.getrow(0).toarray().ravel().tolist()[0] == 1.0

    def test_direction_ignored(self):
        p1 = single_side_pair([(0, 1), (2, 1)])
        p2 = single_side_pair([(1, 0), (1, 2)])
        s1, s2 = build_neighbor_structure(p1), build_neighbor_structure(p2)
        names = lambda p, s: {p.entity_names[i]: sorted(p.entity_names[j] for j in s.two_hop[i])
                              for i in range(p.num_entities)}
        assert names(p1, s1) == names(p2, s2)

    def test_random_30_node_vs_bfs(self, rng):
        edges = [tuple(int(x) for x in rng.integers(0, 30, size=2)) for _ in range(45)]
        pair = single_side_pair(edges)
        self._check_against_bfs(pair, max_hops=3)

    @staticmethod
    def _check_against_bfs(pair, max_hops=2):
        s = build_neighbor_structure(pair, max_hops=max_hops)
        n = pair.num_entities
        edges = [(h, t) for h, _, t in pair.iter_triples()]
        for i in range(n):
            dist = bfs_distances(n, edges, i)
            for m in range(1, max_hops + 1):
                expect = sorted(j for j, d in dist.items() if d == m)
                assert s.neighbors(i, m).tolist() == expect
            row = s.adj_norm.getrow(i)
            assert row.nnz == len(s.one_hop[i]) + 1
            np.testing.assert_allclose(row.data, 1.0 / row.nnz, rtol=0, atol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 50), st.lists(st.tuples(st.integers(0, 49), st.integers(0, 49)), min_size=1, max_size=120))
    def test_property_matches_bfs(self, n, raw_edges):
        edges = [(u % n, v % n) for u, v in raw_edges]
        pair = single_side_pair(edges)
        self._check_against_bfs(pair, max_hops=2)
        s = build_neighbor_structure(pair)
        for i in range(pair.num_entities):
            one, two = set(s.one_hop[i].tolist()), set(s.two_hop[i].tolist())
            assert i not in one and i not in two and not (one & two)
        np.testing.assert_allclose(np.asarray(s.adj_norm.sum(axis=1)).ravel(), 1.0, atol=1e-9)
        mask = s.two_hop_mask
        for i in range(pair.num_entities):
            assert mask.getrow(i).indices.tolist() == sorted(set(s.two_hop[i].tolist()) | {i})


class TestAugmentation:
    def _pair(self, side2_edges):
        t1 = [("a", "r", "b")]
        t2 = [(u, "s", v) for u, v in side2_edges]
        return KnowledgeGraphPair.from_named_triples(t1, t2)

    def test_adds_missing_edge(self):
        pair = self._pair([("a2", "c2"), ("b2", "c2")])
        seed = AlignmentSet.from_pairs([(pair.entity_id("a", 1), pair.entity_id("a2", 2)),
                                        (pair.entity_id("b", 1), pair.entity_id("b2", 2))])
        out = augment_neighborhood(pair, seed)
        assert len(out.triples) == len(pair.triples) + 1
        assert out.triples[-1].tolist() == [pair.entity_id("a2", 2), pair.aug_relation, pair.entity_id("b2", 2)]
        np.testing.assert_array_equal(out.triples[:len(pair.triples)], pair.triples)

    def test_no_change_when_both_present(self):
        pair = self._pair([("b2", "a2")])
        seed = AlignmentSet.from_pairs([(pair.entity_id("a", 1), pair.entity_id("a2", 2)),
                                        (pair.entity_id("b", 1), pair.entity_id("b2", 2))])
        out = augment_neighborhood(pair, seed)
        assert len(out.triples) == len(pair.triples)

    def test_unknown_seed_entity(self):
        pair = self._pair([("a2", "b2")])
        with pytest.raises(ReferentialError):
            augment_neighborhood(pair, AlignmentSet.from_pairs([(0, 99)]))

    def test_rewired_full_seed_closes_edges(self):
        cfg = SyntheticConfig(40, 3, 4.0, 0.2, 1.0, 7)
        pair, seed, test = generate_synthetic_pair(cfg)
        assert len(test) == 0
        out = augment_neighborhood(pair, seed)
        m1 = {a: b for a, b in seed}
        m2 = {b: a for a, b in seed}
        edges = {(min(h, t), max(h, t)) for h, _, t in out.iter_triples()}
        for h, _, t in out.iter_triples():
            cp = m1 if h in m1 else m2
            u, v = cp[h], cp[t]
            assert (min(u, v), max(u, v)) in edges

    def test_idempotent_and_monotone(self):
        pair, seed, _ = generate_synthetic_pair(SyntheticConfig(40, 3, 4.0, 0.3, 0.5, 3))
        once = augment_neighborhood(pair, seed)
        twice = augment_neighborhood(once, seed)
        np.testing.assert_array_equal(once.triples, twice.triples)
        np.testing.assert_array_equal(once.triples[:len(pair.triples)], pair.triples)
        assert len(once.triples) > len(pair.triples)


class TestSynthetic:
    def _mapped_edges(self, pair, seed, test):
        truth = dict(seed + test)
        e1, e2 = set(), set()
        for h, _, t in pair.iter_triples():
            if pair.side_of(h) == 1:
                u, v = truth[h], truth[t]
                e1.add((min(u, v), max(u, v)))
            else:
                e2.add((min(h, t), max(h, t)))
        return e1, e2

    def test_p0_isomorphic(self):
        pair, seed, test = generate_synthetic_pair(SyntheticConfig(50, 3, 4.0, 0.0, 0.3, 1))
        e1, e2 = self._mapped_edges(pair, seed, test)
        assert e1 == e2
        assert pair.num_entities1 == pair.num_entities2 == 50

    def test_p0_sorted_edge_multisets_equal(self):
        pair, seed, test = generate_synthetic_pair(SyntheticConfig(60, 4, 3.0, 0.0, 0.3, 4))
        truth = dict(seed + test)
        rel_map = {}
        for r in range(pair.num_relations1):
            rel_map[r] = pair.relation_names.index(pair.relation_names[r].replace("kg1", "kg2"))
        side1 = sorted((truth[h], rel_map[r], truth[t]) for h, r, t in pair.iter_triples() if h < pair.num_entities1)
        side2 = sorted(tuple(x) for x in pair.iter_triples() if x.head >= pair.num_entities1)
        assert side1 == side2

    def test_p1_every_edge_differs(self):
        pair, seed, test = generate_synthetic_pair(SyntheticConfig(60, 3, 4.0, 1.0, 0.3, 2))
        e1, e2 = self._mapped_edges(pair, seed, test)
        assert len(e2) == len(e1)
        assert not (e1 & e2)

    def test_rewire_count(self):
        cfg = SyntheticConfig(100, 3, 4.0, 0.2, 0.3, 5)
        pair, seed, test = generate_synthetic_pair(cfg)
        e1, e2 = self._mapped_edges(pair, seed, test)
        assert len(e1) == len(e2) == cfg.num_edges
        assert len(e1 - e2) == int(0.2 * cfg.num_edges)

    def test_deterministic(self):
        cfg = SyntheticConfig(50, 3, 4.0, 0.2, 0.3, 9)
        a = generate_synthetic_pair(cfg)
        b = generate_synthetic_pair(cfg)
        assert a[0].triples.tobytes() == b[0].triples.tobytes()
        assert a[0].entity_names == b[0].entity_names
        assert a[1].pairs.tobytes() == b[1].pairs.tobytes()
        assert a[2].pairs.tobytes() == b[2].pairs.tobytes()

    def test_every_entity_present(self):
        pair, seed, test = generate_synthetic_pair(SyntheticConfig(80, 2, 1.0, 0.0, 0.5, 3))
        assert pair.num_entities1 == pair.num_entities2 == 80
        assert len(seed) + len(test) == 80

    def test_impossible_degree(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_pair(SyntheticConfig(5, 1, 10.0, 0.0, 0.5, 0))

    @pytest.mark.parametrize("field,value", [("avg_degree", 0.5), ("rewire_fraction", 1.5),
                                             ("seed_alignment_fraction", 0.0), ("num_entities_per_side", 1)])
    def test_invalid_config(self, field, value):
        cfg = SyntheticConfig()
        setattr(cfg, field, value)
        with pytest.raises(ConfigurationError):
            generate_synthetic_pair(cfg)


class TestSplit:
    def _alignment(self, n):
        return AlignmentSet.from_pairs((i, n + i) for i in range(n))

    def test_floor_rule(self):
        train, test = split_alignment(self._alignment(10), 0.3, 0)
        assert (len(train), len(test)) == (3, 7)

    def test_benchmark_size(self):
        train, test = split_alignment(self._alignment(15000), 0.3, 0)
        assert (len(train), len(test)) == (4500, 10500)

    def test_disjoint_union_deterministic(self):
        al = self._alignment(37)
        train, test = split_alignment(al, 0.4, 11)
        again = split_alignment(al, 0.4, 11)
        assert train.pairs.tobytes() == again[0].pairs.tobytes()
        got = sorted(map(tuple, np.vstack([train.pairs, test.pairs]).tolist()))
        assert got == sorted(al)
        assert not set(train) & set(test)

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            split_alignment(AlignmentSet.from_pairs([]), 0.3, 0)
        with pytest.raises(ConfigurationError):
            split_alignment(self._alignment(5), 1.0, 0)
