"""Comparison strategies and candidate-selection studies.

* RD: random flips that pass a power-law degree-distribution likelihood-ratio test.
* NT: greedy structure attack on the private label (surrogate margin), no
  target-task term.
* Feature-only greedy perturbation, for contrast with structural flips.
* Candidate-ordering study tracking the average clustering coefficient.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .defense import DefenseConfig, PerturbationPlan, PlanStep, _loss_from_scores, _w, predicted_target_class
from .errors import ConfigError, DataError
from .gcn import build_normalized, candidate_surrogate_scores, predict_full
from .graph import AttributedGraph, apply_flip, avg_clustering_coefficient
from .ppr import all_pair_deltas, build_ppr, valid_pair_mask

log = logging.getLogger(__name__)

LR_THRESHOLD = 0.004
CHI2_95_DF1 = 3.841458820694124


# ------------------------------------------------------------ degree test


@dataclass
class DegreeTestState:
    d_min: int
    alpha_before: float
    alpha_after: float
    alpha_combined: float
    ll_combined: float
    ll_separate: float
    statistic: float
    passed: bool


def _fit(n, sum_log, d_min):
    """Power-law scaling estimate and log-likelihood from sufficient statistics.

    Uses the discrete approximation ``alpha = 1 + n / sum(log(d / (d_min - 1/2)))``.
    """
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = 1.0 + n / (sum_log - n * np.log(d_min - 0.5))
        ll = n * np.log(alpha) + n * alpha * np.log(d_min) - (alpha + 1.0) * sum_log
    return alpha, np.where(n > 0, ll, 0.0)


def _suff(degrees, d_min):
    d = np.asarray(degrees, dtype=float)
    d = d[d >= d_min]
    return len(d), float(np.log(d).sum())


def _statistic(n_a, s_a, n_b, s_b, d_min):
    _, ll_a = _fit(n_a, s_a, d_min)
    _, ll_b = _fit(n_b, s_b, d_min)
    _, ll_c = _fit(n_a + n_b, s_a + s_b, d_min)
    return -2.0 * (ll_c - (ll_a + ll_b))


def powerlaw_test(degrees_before, degrees_after, d_min: int = 2, threshold: float = LR_THRESHOLD) -> DegreeTestState:
    n_a, s_a = _suff(degrees_before, d_min)
    n_b, s_b = _suff(degrees_after, d_min)
    if n_a == 0 or n_b == 0:
        raise DataError(f"no degrees >= d_min={d_min} to fit a power law")
    a_a, ll_a = _fit(n_a, s_a, d_min)
    a_b, ll_b = _fit(n_b, s_b, d_min)
    a_c, ll_c = _fit(n_a + n_b, s_a + s_b, d_min)
    stat = float(-2.0 * (ll_c - (ll_a + ll_b)))
    return DegreeTestState(d_min, float(a_a), float(a_b), float(a_c), float(ll_c), float(ll_a + ll_b), stat, stat < threshold)


def powerlaw_unnoticeable(graph_before: AttributedGraph, graph_after: AttributedGraph, d_min: int = 2, threshold: float = LR_THRESHOLD):
    """Likelihood-ratio test that two degree sequences share one power law.

    Returns ``(statistic, passed)``; passes when the statistic is below
    ``threshold``.
    """
    st = powerlaw_test(graph_before.degrees, graph_after.degrees, d_min, threshold)
    return st.statistic, st.passed


def flip_statistics(reference_degrees, current_degrees, u, v, signs, d_min: int = 2):
    """Degree-test statistic for each single flip (u[i], v[i]) applied to ``current``.

    Vectorized over flips; ``signs`` is +1 for additions, -1 for removals.
    """
    u, v = np.atleast_1d(u), np.atleast_1d(v)
    signs = np.broadcast_to(np.asarray(signs, dtype=float), u.shape)
    n_ref, s_ref = _suff(reference_degrees, d_min)
    n_cur, s_cur = _suff(current_degrees, d_min)
    cur = np.asarray(current_degrees, dtype=float)

    def contrib(d):
        keep = d >= d_min
        return keep.astype(float), np.where(keep, np.log(np.maximum(d, 1.0)), 0.0)

    n_new = np.full(u.shape, float(n_cur))
    s_new = np.full(u.shape, s_cur)
    for nodes in (u, v):
        c_old, l_old = contrib(cur[nodes])
        c_new, l_new = contrib(cur[nodes] + signs)
        n_new += c_new - c_old
        s_new += l_new - l_old
    return _statistic(n_ref, s_ref, n_new, s_new, d_min)


def _anchored_test(reference, current, v, us, d_min, threshold):
    a_v = np.zeros(current.n_nodes)
    a_v[current.neighbors(v)] = 1.0
    signs = 1.0 - 2.0 * a_v[us]
    stats = flip_statistics(reference.degrees, current.degrees, np.full(len(us), v), us, signs, d_min)
    return stats, stats < threshold


# ------------------------------------------------------------ RD / NT


def random_defense(
    graph: AttributedGraph,
    v: int,
    config: DefenseConfig,
    seed: int = 0,
    reference: Optional[AttributedGraph] = None,
    d_min: int = 2,
    threshold: float = LR_THRESHOLD,
) -> PerturbationPlan:
    """Uniformly random flips (v, u) that pass the degree test against ``reference``."""
    reference = reference if reference is not None else graph
    rng = np.random.default_rng(seed)
    plan = PerturbationPlan("random", [v], config.budget_b, meta={"seed": seed})
    current = graph
    for _ in range(config.budget_b):
        us = np.flatnonzero(valid_pair_mask(current, v))
        if len(us) == 0:
            break
        stats, ok = _anchored_test(reference, current, v, us, d_min, threshold)
        us, stats = us[ok], stats[ok]
        if len(us) == 0:
            break
        i = int(rng.integers(len(us)))
        flip = current.flip_for(v, int(us[i]))
        plan.steps.append(PlanStep(flip, float(stats[i]), len(us), v))
        current = apply_flip(current, flip)
    plan.final_graph = current
    return plan


def attack_defense_nt(
    graph: AttributedGraph,
    models,
    v: int,
    config: DefenseConfig,
    seed: int = 0,
    private_label: Optional[int] = None,
    reference: Optional[AttributedGraph] = None,
    d_min: int = 2,
    threshold: float = LR_THRESHOLD,
) -> PerturbationPlan:
    """Greedy attack driving the private-label surrogate margin of v down.

    Among degree-test-passing flips (v, u), commit the one minimizing
    ``S_P[v, p_true] - max_{p != p_true} S_P[v, p]``. Stops early once no
    candidate lowers the margin. ``seed`` is accepted for interface symmetry;
    the procedure is deterministic.
    """
    _, f_p = models
    reference = reference if reference is not None else graph
    x = graph.features.astype(float)
    if private_label is None:
        z = predict_full(f_p, build_normalized(graph), x)
        private_label = int(np.argmax(z[v]))
    y_p = x @ _w(f_p)

    def margin(scores):
        scores = np.atleast_2d(scores)
        others = np.delete(scores, private_label, axis=1)
        return scores[:, private_label] - others.max(axis=1)

    norm = build_normalized(graph)
    current_margin = float(margin((norm.a_hat_sq @ y_p)[v])[0])
    plan = PerturbationPlan("nt", [v], config.budget_b, meta={"private_label": private_label, "clean_margin": current_margin})
    current = graph
    for _ in range(config.budget_b):
        us = np.flatnonzero(valid_pair_mask(current, v))
        if len(us) == 0:
            break
        _, ok = _anchored_test(reference, current, v, us, d_min, threshold)
        us = us[ok]
        if len(us) == 0:
            break
        m = margin(candidate_surrogate_scores(current, y_p, v, us))
        best = np.lexsort((us, m))[0]
        if m[best] >= current_margin:
            break
        flip = current.flip_for(v, int(us[best]))
        plan.steps.append(PlanStep(flip, float(m[best]), len(us), v))
        current = apply_flip(current, flip)
        current_margin = float(m[best])
    plan.final_graph = current
    return plan


def feature_defense(graph: AttributedGraph, models, v: int, config: DefenseConfig, c_check: Optional[int] = None) -> PerturbationPlan:
    """Greedy feature-only counterpart of the structural defense.

    Each step flips the binary feature x[k, l] minimizing the same loss at v,
    over nodes k with a nonzero two-hop weight to v and all columns l. The
    structure is never touched. Flips are recorded in ``meta["feature_flips"]``
    as (k, l, loss) and the returned plan has no edge steps.
    """
    f_c, f_p = models
    if c_check is None:
        c_check = predicted_target_class(f_c, graph, v)
    a2v = build_normalized(graph).a_hat_sq[v].toarray().ravel()
    nodes = np.flatnonzero(a2v)
    x = graph.features.astype(float)
    w_c, w_p = _w(f_c), _w(f_p)
    s_c = a2v @ x @ w_c
    s_p = a2v @ x @ w_p
    flips = []
    for _ in range(config.budget_b):
        h = 1.0 - 2.0 * x[nodes]  # (k, l) sign of each flip
        coef = (a2v[nodes][:, None] * h).ravel()
        cols = np.tile(np.arange(x.shape[1]), len(nodes))
        cand_p = s_p + coef[:, None] * w_p[cols]
        cand_c = s_c + coef[:, None] * w_c[cols]
        losses = _loss_from_scores(cand_p, cand_c, c_check, config.a_d, config.a_m, config.denominator)
        best = int(np.argmin(losses))
        k, l = int(nodes[best // x.shape[1]]), int(cols[best])
        s_p, s_c = cand_p[best], cand_c[best]
        x[k, l] = 1.0 - x[k, l]
        flips.append((k, l, float(losses[best])))
    final = replace(graph, features=x.astype(np.uint8))
    return PerturbationPlan("feature", [v], config.budget_b, [], final, meta={"feature_flips": flips, "c_check": c_check})


# ------------------------------------------------------------ candidate study

STRATEGIES = ("random", "degree_test", "ppr_original", "ppr_revised")


@dataclass
class Trajectory:
    strategy: str
    flips: list = field(default_factory=list)
    ca: list = field(default_factory=list)

    @property
    def drop(self) -> float:
        return self.ca[0] - self.ca[-1]


def _all_valid_pairs(graph):
    n = graph.n_nodes
    iu, ju = np.triu_indices(n, k=1)
    d = graph.degrees
    a = graph.adjacency
    present = np.asarray(a[iu, ju]).ravel() > 0
    ok = (d[iu] >= 1) & (d[ju] >= 1) & (~present | ((d[iu] >= 2) & (d[ju] >= 2)))
    return iu[ok], ju[ok], present[ok]


def rank_pairs(graph: AttributedGraph, strategy: str, alpha: float = 0.1, seed: int = 0, d_min: int = 2):
    """All admissible pairs ordered most-unnoticeable first under ``strategy``."""
    iu, ju, present = _all_valid_pairs(graph)
    if strategy == "random":
        # random existing edges, without replacement
        iu, ju = iu[present], ju[present]
        order = np.random.default_rng(seed).permutation(len(iu))
        return iu[order], ju[order]
    if strategy == "degree_test":
        signs = np.where(present, -1.0, 1.0)
        score = flip_statistics(graph.degrees, graph.degrees, iu, ju, signs, d_min)
    elif strategy in ("ppr_original", "ppr_revised"):
        variant = "exact" if strategy == "ppr_original" else "revised"
        deltas = all_pair_deltas(build_ppr(graph, alpha), variant)
        score = deltas[iu, ju]
    else:
        raise ConfigError(f"unknown candidate strategy {strategy!r}; expected one of {STRATEGIES}")
    score = np.where(np.isfinite(score), score, np.inf)
    order = np.lexsort((ju, iu, score))
    return iu[order], ju[order]


def candidate_strategy_compare(graph: AttributedGraph, strategies=STRATEGIES, n_flips: int = 50, alpha: float = 0.1, seed: int = 0):
    """Apply each strategy's top ``n_flips`` pairs in order and track the clustering coefficient."""
    if n_flips > graph.n_edges:
        raise ConfigError(f"n_flips ({n_flips}) exceeds the edge count ({graph.n_edges})")
    out = {}
    ca0 = avg_clustering_coefficient(graph)
    for strategy in strategies:
        iu, ju = rank_pairs(graph, strategy, alpha, seed)
        traj = Trajectory(strategy, [], [ca0])
        current = graph
        for u, v in zip(iu[:n_flips], ju[:n_flips]):
            flip = current.flip_for(int(u), int(v))
            current = apply_flip(current, flip)
            traj.flips.append(flip)
            traj.ca.append(avg_clustering_coefficient(current))
        out[strategy] = traj
    return out


def write_trajectories(trajectories: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flip_index", "strategy", "CA"])
        for name, traj in trajectories.items():
            for i, ca in enumerate(traj.ca):
                w.writerow([i, name, repr(float(ca))])
