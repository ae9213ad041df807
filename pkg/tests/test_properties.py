import itertools

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from _oracles import brute_clustering, dense_a_hat, dense_flip_difference

from netfense.baselines import powerlaw_test
from netfense.evalkit import kappa_coefficient
from netfense.gcn import build_normalized, incremental_a2_update, margins
from netfense.graph import apply_flips, avg_clustering_coefficient, from_edges, load_graph, make_split, save_graph, LabelSet
from netfense.ppr import all_pair_deltas, build_ppr, candidate_set, delta_ppr_matrix


@st.composite
def graphs(draw, min_n=2, max_n=12, min_degree=0):
    n = draw(st.integers(min_n, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    if min_degree:
        present = set(edges)
        edges += [(i, i + 1) for i in range(n - 1) if (i, i + 1) not in present]
    x = draw(st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), min_size=n, max_size=n))
    return from_edges(n, edges, np.array(x, dtype=np.uint8))


@st.composite
def graph_and_flips(draw, min_degree=0, max_flips=6):
    g = draw(graphs(min_n=3, min_degree=min_degree))
    pairs = list(itertools.combinations(range(g.n_nodes), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, min_size=1, max_size=max_flips))
    return g, chosen


@given(graph_and_flips())
def test_flip_sequence_reverses(data):
    g, pairs = data
    flips, current = [], g
    for u, v in pairs:
        f = current.flip_for(u, v)
        flips.append(f)
        current = apply_flips(current, [f])
    back = apply_flips(current, [f.inverse() for f in reversed(flips)])
    assert (back.adjacency != g.adjacency).nnz == 0
    assert current.n_perturbations == len(pairs)


@given(graphs(max_n=30))
def test_clustering_matches_bruteforce(g):
    assert abs(avg_clustering_coefficient(g) - brute_clustering(g.dense())) < 1e-12


@given(graphs(), st.integers(0, 3))
def test_save_load_identity(tmp_path_factory, g, k):
    labels = LabelSet(np.arange(g.n_nodes) % 3, (np.arange(g.n_nodes) + k) % 2)
    d = tmp_path_factory.mktemp("rt")
    p = save_graph(g, labels, d, "g")
    g2, l2 = load_graph(p["edges"], p["features"], p["labels"])
    assert (g2.adjacency != g.adjacency).nnz == 0
    assert np.array_equal(g2.features, g.features)
    assert np.array_equal(l2.target, labels.target) and np.array_equal(l2.private, labels.private)


@given(st.integers(3, 400), st.integers(0, 2**31))
def test_split_partitions(n, seed):
    s = make_split(n, (0.1, 0.1, 0.8), seed)
    allnodes = np.concatenate([s.train, s.validation, s.test])
    assert np.array_equal(np.sort(allnodes), np.arange(n))


@given(graphs(), st.floats(0.01, 1.0))
def test_ppr_rows_stochastic(g, alpha):
    p = build_ppr(g, alpha).ppr
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-8)
    assert p.min() > -1e-12


@given(graph_and_flips(min_degree=1, max_flips=1), st.floats(0.05, 0.9), st.booleans())
def test_rank_one_identity(data, alpha, reverse):
    g, [(u, v)] = data
    if reverse:
        u, v = v, u
    m = build_ppr(g, alpha)
    c = (1 - 2 * g.has_edge(u, v)) * (1 - alpha) / g.degrees[u]
    assume(abs(1 - c * m.fundamental[v, u]) > 1e-6)
    dense = dense_flip_difference(g.dense().astype(float), alpha, u, v)
    assert np.abs(delta_ppr_matrix(m, u, v) - dense).max() < 1e-9


@given(graphs(min_n=3, min_degree=1), st.floats(0, 1), st.floats(0, 1))
def test_candidate_set_monotone(g, q1, q2):
    m = build_ppr(g, 0.1)
    vals = all_pair_deltas(m)
    vals = vals[np.isfinite(vals)]
    t1, t2 = sorted(np.quantile(vals, [q1, q2]))
    assert candidate_set(m, g, None, t1) <= candidate_set(m, g, None, t2)
    assert candidate_set(m, g, 0, t1) <= candidate_set(m, g, 0, t2)


@given(graphs(min_n=3, min_degree=1))
def test_pair_influence_symmetric(g):
    for variant in ("revised", "exact"):
        d = all_pair_deltas(build_ppr(g, 0.2), variant)
        assert np.array_equal(np.isnan(d), np.isnan(d.T))
        assert np.allclose(np.nan_to_num(d), np.nan_to_num(d.T), atol=0, rtol=0)


@given(graph_and_flips(max_flips=4))
def test_incremental_a2_exact(data):
    g, pairs = data
    norm = build_normalized(g)
    current = g
    for u, v in pairs:
        f = current.flip_for(u, v)
        norm = incremental_a2_update(norm, f)
        current = apply_flips(current, [f])
    ah = dense_a_hat(current.dense().astype(float))
    assert np.abs(norm.a_hat_sq.toarray() - ah @ ah).max() < 1e-10


@given(st.lists(st.integers(2, 40), min_size=3, max_size=40), st.data())
def test_degree_statistic_zero_iff_same_multiset(deg, data):
    other = data.draw(st.permutations(deg))
    assert abs(powerlaw_test(deg, other).statistic) < 1e-8
    changed = list(deg)
    changed[0] += data.draw(st.integers(1, 5))
    assert powerlaw_test(deg, changed).statistic > 0


@given(st.integers(2, 5), st.integers(0, 2**31))
def test_margin_sign_is_correctness(c, seed):
    rng = np.random.default_rng(seed)
    z = rng.dirichlet(np.ones(c), size=20)
    y = rng.integers(0, c, 20)
    m = margins(z, y)
    assert ((m > 0) == (z.argmax(axis=1) == y)).all()
    assert (np.abs(m) <= 1).all()


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
def test_kappa_bounded(pairs):
    a, b = zip(*pairs)
    k = kappa_coefficient(a, b)
    assert -1 - 1e-12 <= k <= 1 + 1e-12
