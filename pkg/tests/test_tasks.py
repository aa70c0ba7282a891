import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goat_lab.errors import InputError
from goat_lab.graph import Graph, erdos_renyi
from goat_lab.rng import Rng
from goat_lab.tasks import (betweenness_centrality, binarize_at_median, brute_force_betweenness,
                            effective_size, gen_structural_dataset, gen_top2_pooling, generate,
                            minmax_scale, phi, top2_targets)

from conftest import complete_graph, cycle_graph, named_graphs, path_graph, seeded_graphs, star_graph


def recount_effective_size(g):
    """Definition-level recount: build the induced subgraph on N(u) and count its edges."""
    G = nx.Graph()
    G.add_nodes_from(range(g.num_nodes))
    G.add_edges_from(g.edges())
    out = np.zeros(g.num_nodes)
    for u in range(g.num_nodes):
        nbrs = list(G.neighbors(u))
        if nbrs:
            q = G.subgraph(nbrs).number_of_edges()
            out[u] = len(nbrs) - 2.0 * q / len(nbrs)
    return out


def corpus():
    return list(named_graphs().values()) + seeded_graphs(200, seed=5)


edge_lists = st.integers(2, 9).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=20)))


def _graph(suite):
    n, pairs = suite
    return Graph.from_edges(n, [(a, b) for a, b in pairs if a != b])


class TestBetweenness:
    def test_hand_values(self):
        assert list(betweenness_centrality(star_graph(3)).values) == [3.0, 0.0, 0.0, 0.0]
        assert betweenness_centrality(path_graph(3)).values[1] == 1.0
        assert np.all(betweenness_centrality(complete_graph(4)).values == 0.0)
        assert list(brute_force_betweenness(star_graph(3)).values) == [3.0, 0.0, 0.0, 0.0]

    def test_disconnected_pairs_contribute_nothing(self):
        g = Graph.from_edges(6, [(0, 1), (1, 2), (3, 4)])
        assert list(brute_force_betweenness(g).values) == [0, 1, 0, 0, 0, 0]

    def test_brandes_equals_brute_force_on_corpus(self):
        for g in corpus():
            a = betweenness_centrality(g).values
            b = brute_force_betweenness(g).values
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_random_er10(self):
        for s in range(50):
            g = erdos_renyi(10, 0.3, Rng(s))
            assert np.max(np.abs(betweenness_centrality(g).values
                                 - brute_force_betweenness(g).values)) <= 1e-12

    def test_matches_networkx(self):
        for g in seeded_graphs(20, seed=8, max_n=30):
            G = nx.Graph()
            G.add_nodes_from(range(g.num_nodes))
            G.add_edges_from(g.edges())
            ref = nx.betweenness_centrality(G, normalized=False)
            got = betweenness_centrality(g).values
            assert np.allclose(got, [ref[u] for u in range(g.num_nodes)], rtol=0, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(edge_lists)
    def test_brute_force_property(self, suite):
        g = _graph(suite)
        assert np.max(np.abs(betweenness_centrality(g).values
                             - brute_force_betweenness(g).values)) <= 1e-12

    def test_size_guard(self):
        with pytest.raises(InputError):
            brute_force_betweenness(path_graph(15))


class TestEffectiveSize:
    def test_hand_values(self):
        assert list(effective_size(star_graph(3)).values) == [3.0, 1.0, 1.0, 1.0]
        assert list(effective_size(cycle_graph(3)).values) == [1.0, 1.0, 1.0]
        assert effective_size(complete_graph(6)).values[0] == 1.0
        assert effective_size(Graph.from_edges(3, [(0, 1)])).values[2] == 0.0

    def test_recount_on_corpus(self):
        for g in corpus():
            assert np.array_equal(effective_size(g).values, recount_effective_size(g))

    @settings(max_examples=60, deadline=None)
    @given(edge_lists)
    def test_bounds(self, suite):
        g = _graph(suite)
        e = effective_size(g).values
        deg = g.degrees
        assert np.all((deg == 0) | ((e >= 1.0) & (e <= deg)))


class TestStructuralDataset:
    def test_properties(self):
        rng = Rng(3)
        d = gen_structural_dataset(erdos_renyi(100, 0.09, rng), "betweenness", rng)
        assert (d.train_mask.sum(), d.val_mask.sum(), d.test_mask.sum()) == (60, 20, 20)
        assert np.array_equal(d.features, np.eye(100))
        assert d.labels.min() == 0.0 and d.labels.max() == 1.0
        assert d.task_kind == "regression"

    def test_deterministic(self):
        assert generate("effective-size", 50, 0.1, Rng(4)) == generate("effective-size", 50, 0.1, Rng(4))

    def test_unknown_task(self):
        with pytest.raises(InputError):
            generate("pagerank", 10, 0.1, Rng(1))

    def test_minmax_constant(self):
        assert np.all(minmax_scale(np.full(4, 2.0)) == 0.0)


class TestTop2:
    def test_phi(self):
        assert phi(0.0, 0.0) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert phi(1.0, 1.0) == pytest.approx(math.sqrt(2 * math.e), abs=1e-15)
        assert phi(1.0, 1.0) == pytest.approx(2.3316, abs=1e-4)

    def test_targets_by_hand(self):
        # path 0-1-2-3: node 0 sees x1 and 0.8*x2
        x = np.array([5.0, 1.0, 2.0, 3.0])
        y = top2_targets(path_graph(4), x)
        assert y[0] == phi(1.6, 1.0)
        assert y[1] == phi(5.0, 2.4)
        assert y[3] == phi(2.0, 0.8)

    def test_single_and_empty_candidates(self):
        g = Graph.from_edges(3, [(0, 1)])
        y = top2_targets(g, np.array([0.5, 0.25, 9.0]))
        assert y[0] == phi(0.25, 0.25)
        assert y[2] == phi(0.0, 0.0)

    def test_duplicate_values_collapse(self):
        y = top2_targets(star_graph(3), np.array([0.0, 2.0, 2.0, 1.0]))
        assert y[0] == phi(2.0, 1.0)

    def test_balance_and_tie_rule(self):
        for s in range(10):
            d = gen_top2_pooling(200, 0.05, Rng(s))
            y = d.labels
            assert d.num_classes == 2 and set(np.unique(y)) <= {0, 1}
            ys = top2_targets(d.graph, d.features[:, 0])
            ties = int(np.sum(ys == np.median(ys)))
            # below, tied, above with below <= n/2 gives an imbalance of at most 2 * ties
            assert abs(int((y == 0).sum()) - int((y == 1).sum())) <= max(1, 2 * ties)
        for n in (7, 8):
            y = binarize_at_median(np.random.default_rng(n).normal(size=n))
            assert abs(int((y == 0).sum()) - int((y == 1).sum())) <= 1
        assert list(binarize_at_median(np.array([1.0, 2.0, 2.0, 3.0]))) == [0, 0, 0, 1]
        assert list(binarize_at_median(np.array([3.0, 1.0, 2.0, 4.0]))) == [1, 0, 0, 1]

    def test_label_invariant_to_relabeling(self):
        d = gen_top2_pooling(80, 0.06, Rng(2))
        perm = np.random.default_rng(0).permutation(80)
        x = d.features[:, 0]
        xp = np.empty_like(x)
        xp[perm] = x
        yp = binarize_at_median(top2_targets(d.graph.relabel(perm), xp))
        assert np.array_equal(yp[perm], d.labels)

    def test_deterministic_and_small_n_rejected(self):
        assert gen_top2_pooling(50, 0.1, Rng(9)) == gen_top2_pooling(50, 0.1, Rng(9))
        with pytest.raises(InputError):
            gen_top2_pooling(2, 0.5, Rng(1))
