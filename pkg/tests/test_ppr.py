import numpy as np
import pytest
from _oracles import dense_flip_difference, explicit_revised_delta, power_iteration_ppr

from netfense.errors import ConfigError, DegeneratePerturbation, StateError
from netfense.graph import from_edges
from netfense.ppr import (
    all_pair_deltas,
    anchored_deltas,
    build_ppr,
    candidate_set,
    delta_ppr_directed,
    delta_ppr_matrix,
    delta_ppr_symmetric,
    local_ppr,
    pair_deltas,
    quantile_threshold,
    valid_pair_mask,
)

from conftest import random_graph


@pytest.fixture
def cycle4():
    return from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])


@pytest.fixture
def house():
    """5-cycle with chord (0,2); every degree >= 2."""
    return from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)])


def test_alpha_one_is_identity(house):
    assert np.array_equal(build_ppr(house, 1.0).ppr, np.eye(5))


def test_path_matches_power_iteration():
    g = from_edges(3, [(0, 1), (1, 2)])
    oracle = power_iteration_ppr(g.dense().astype(float), 0.1)
    assert np.abs(build_ppr(g, 0.1).ppr - oracle).max() < 1e-10


def test_rows_stochastic_with_isolated(path5):
    p = build_ppr(path5, 0.1).ppr
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-8)
    assert (p >= -1e-15).all()
    assert p[3, 3] == pytest.approx(1.0)


def test_bad_alpha(house):
    with pytest.raises(ConfigError):
        build_ppr(house, 0.0)


def test_directed_zero_at_alpha_one(house):
    m = build_ppr(house, 1.0)
    for u, v in [(0, 1), (1, 3), (3, 4)]:
        for variant in ("revised", "exact"):
            assert delta_ppr_directed(m, u, v, variant=variant) == 0.0
        assert delta_ppr_symmetric(m, u, v).delta == 0.0


def test_cycle_removal_matches_dense_oracle(cycle4):
    m = build_ppr(cycle4, 0.1)
    oracle = dense_flip_difference(cycle4.dense().astype(float), 0.1, 0, 1).sum()
    assert delta_ppr_directed(m, 0, 1, "remove", variant="exact") == pytest.approx(oracle, abs=1e-9)


def test_revised_matches_explicit_sum(house):
    m = build_ppr(house, 0.1)
    a = house.dense().astype(float)
    for u, v in [(0, 1), (1, 3), (2, 4), (3, 4)]:
        assert delta_ppr_directed(m, u, v) == pytest.approx(explicit_revised_delta(a, 0.1, u, v), abs=1e-12)


def test_entrywise_rank_one(house):
    m = build_ppr(house, 0.1)
    a = house.dense().astype(float)
    minv = m.fundamental
    for u, v in [(0, 1), (1, 3), (4, 2)]:
        dense = dense_flip_difference(a, 0.1, u, v)
        assert np.abs(delta_ppr_matrix(m, u, v) - dense).max() < 1e-12
        # the same difference through -alpha M1^-1 M2 M1^-1 / (1 + tr(M2 M1^-1))
        b = np.zeros((5, 5))
        b[u, v] = 1 - 2 * a[u, v]
        m2 = -(0.9) * np.diag(1 / a.sum(axis=1)) @ b
        rank_one = -0.1 * minv @ m2 @ minv / (1 + np.trace(m2 @ minv))
        assert np.abs(rank_one - dense).max() < 1e-12


def test_addition_prefers_high_ppr(house):
    # fixed u: c' and the column sum are shared, so |delta| falls as M^-1[u, v] grows
    m = build_ppr(house, 0.1)
    u = 1
    targets = [v for v in range(5) if v != u and not house.has_edge(u, v)]
    pairs = sorted((m.fundamental[u, v], abs(delta_ppr_directed(m, u, v))) for v in targets)
    mags = [p[1] for p in pairs]
    assert len(mags) >= 2
    assert all(x >= y for x, y in zip(mags, mags[1:]))


def test_symmetric_score(house):
    m = build_ppr(house, 0.1)
    a = house.dense().astype(float)
    s = delta_ppr_symmetric(m, 1, 2, variant="exact")
    assert s.delta == delta_ppr_symmetric(m, 2, 1, variant="exact").delta
    oracle = dense_flip_difference(a, 0.1, 1, 2).sum() + dense_flip_difference(a, 0.1, 2, 1).sum()
    assert s.delta == pytest.approx(abs(oracle), abs=1e-12)
    assert s.delta == pytest.approx(abs(sum(s.direction_parts)))


def test_action_must_match(house):
    m = build_ppr(house, 0.1)
    with pytest.raises(StateError):
        delta_ppr_directed(m, 0, 1, "add")
    with pytest.raises(DegeneratePerturbation):
        delta_ppr_directed(build_ppr(from_edges(3, [(0, 1)]), 0.1), 2, 0)


def test_vectorized_forms_agree(house):
    g = random_graph(12, 0.3, seed=2, min_degree=1)
    m = build_ppr(g, 0.15)
    for variant in ("revised", "exact"):
        full = all_pair_deltas(m, variant)
        for v in (0, 5, 11):
            anch = anchored_deltas(m, g, v, variant)
            loc = anchored_deltas(local_ppr(g, v, 0.15), g, v, variant)
            for u in range(12):
                if u == v:
                    assert np.isnan(anch[u])
                    continue
                ref = delta_ppr_symmetric(m, u, v, variant).delta
                assert anch[u] == pytest.approx(ref, abs=1e-12)
                assert full[v, u] == pytest.approx(ref, abs=1e-12)
                assert loc[u] == pytest.approx(ref, abs=1e-10)


def test_valid_pair_mask(path5):
    # node 0 has degree 1: removing (0,1) would isolate it; isolated 3, 4 never eligible
    assert valid_pair_mask(path5, 0).tolist() == [False, False, True, False, False]
    assert valid_pair_mask(path5, 3).tolist() == [False] * 5


def test_candidate_set_limits(house):
    m = build_ppr(house, 0.1)
    deltas = all_pair_deltas(m)
    assert candidate_set(m, house, 0, np.nanmin(deltas)) == set()
    everything = candidate_set(m, house, 0, np.inf)
    assert everything == {(0, u) for u in range(1, 5)}


def test_candidate_set_quantile_oracle():
    g = random_graph(15, 0.3, seed=7, min_degree=1)
    m = build_ppr(g, 0.1)
    tau = quantile_threshold(m, g, 0.9)
    expected = set()
    for u in range(15):
        for v in range(u + 1, 15):
            present = g.has_edge(u, v)
            du, dv = g.degrees[u], g.degrees[v]
            if present and (du < 2 or dv < 2):
                continue
            if delta_ppr_symmetric(m, u, v).delta < tau:
                expected.add((u, v))
    assert candidate_set(m, g, None, tau) == expected


def test_quantile_threshold_oracles():
    g = random_graph(14, 0.3, seed=1, min_degree=1)
    m = build_ppr(g, 0.1)
    vals = [delta_ppr_symmetric(m, u, v).delta for u in range(14) for v in range(u + 1, 14)]
    assert quantile_threshold(m, g, 0.5) == pytest.approx(np.median(vals), abs=1e-14)
    assert quantile_threshold(m, g, 1 - 1e-12) == pytest.approx(max(vals), rel=1e-9)
    assert quantile_threshold(build_ppr(g, 1.0), g, 0.9) == 0.0
    with pytest.raises(ConfigError):
        quantile_threshold(m, g, 1.0)


def test_sampled_pairs_for_large_graphs(monkeypatch):
    import netfense.ppr as ppr

    g = random_graph(40, 0.2, seed=3, min_degree=1)
    m = build_ppr(g, 0.1)
    exhaustive = pair_deltas(m)
    monkeypatch.setattr(ppr, "EXHAUSTIVE_LIMIT", 10)
    sampled = pair_deltas(m, max_pairs=20000, seed=0)
    assert len(sampled) > 15000
    assert np.quantile(sampled, 0.9) == pytest.approx(np.quantile(exhaustive, 0.9), rel=0.05)
