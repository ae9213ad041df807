"""Greedy budgeted edge perturbation against private-label inference.

Each step scores every admissible flip (v, u) anchored at the target v with

    loss = |S_P[v, p1] - S_P[v, p2]| ** a_d / rho(S_C[v])[c_check] ** a_m

where S = A_hat'^2 X W' are surrogate scores on the flipped graph and rho is
a softmax over the target-task score row, and commits the minimizer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .gcn import GcnModel, build_normalized, candidate_surrogate_scores, predict_full, softmax
from .graph import AttributedGraph, EdgeFlip, apply_flip
from .ppr import PprModel, anchored_deltas, build_ppr, local_ppr, quantile_threshold, valid_pair_mask

log = logging.getLogger(__name__)


@dataclass
class DefenseConfig:
    budget_b: int = 20
    tau_quantile: float = 0.9
    a_d: float = 2.0
    a_m: float = 1.0
    alpha: float = 0.1
    ppr_variant: str = "revised"
    denominator: str = "softmax"  # or "raw"
    refresh_every: int = 1  # recompute PPR every k committed flips
    record_candidates: bool = False
    tau_refresh: bool = False  # re-derive tau on the perturbed graph each step

    def __post_init__(self):
        if self.budget_b < 0:
            raise ConfigError(f"defense.budget_b must be >= 0, got {self.budget_b}")
        if not 0.0 < self.tau_quantile < 1.0:
            raise ConfigError(f"defense.tau_quantile must lie in (0, 1), got {self.tau_quantile}")
        if self.a_d < 0 or self.a_m < 0:
            raise ConfigError("defense.a_d and defense.a_m must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"defense.alpha must lie in (0, 1], got {self.alpha}")
        if self.denominator not in ("softmax", "raw"):
            raise ConfigError(f"defense.denominator must be 'softmax' or 'raw', got {self.denominator!r}")
        if self.refresh_every < 1:
            raise ConfigError("defense.refresh_every must be >= 1")


@dataclass
class PlanStep:
    flip: EdgeFlip
    loss: float
    n_candidates: int
    target: int
    delta: float = float("nan")
    candidate_losses: Optional[dict] = None

    def to_dict(self):
        out = {
            "target": self.target,
            "u": self.flip.u,
            "v": self.flip.v,
            "action": self.flip.action,
            "loss": self.loss,
            "n_candidates": self.n_candidates,
            "delta": self.delta,
        }
        if self.candidate_losses is not None:
            out["candidate_losses"] = {str(k): v for k, v in self.candidate_losses.items()}
        return out

    @classmethod
    def from_dict(cls, d):
        cl = d.get("candidate_losses")
        return cls(
            EdgeFlip(int(d["u"]), int(d["v"]), d["action"]),
            float(d["loss"]),
            int(d["n_candidates"]),
            int(d["target"]),
            float(d.get("delta", float("nan"))),
            {int(k): v for k, v in cl.items()} if cl is not None else None,
        )


@dataclass
class PerturbationPlan:
    strategy: str
    targets: list
    budget: int
    steps: list = field(default_factory=list)
    final_graph: Optional[AttributedGraph] = None
    meta: dict = field(default_factory=dict)

    @property
    def flips(self):
        return [s.flip for s in self.steps]

    def steps_for(self, target):
        return [s for s in self.steps if s.target == target]

    def replay(self, graph: AttributedGraph) -> AttributedGraph:
        for s in self.steps:
            graph = apply_flip(graph, s.flip)
        return graph

    def to_dict(self):
        return {
            "format": "netfense-plan/1",
            "strategy": self.strategy,
            "targets": [int(t) for t in self.targets],
            "budget": self.budget,
            "n_steps": len(self.steps),
            "steps": [s.to_dict() for s in self.steps],
            "meta": self.meta,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=False, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(d["strategy"], list(d["targets"]), int(d["budget"]), [PlanStep.from_dict(s) for s in d["steps"]], meta=d.get("meta", {}))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _loss_from_scores(sp_row, sc_row, c_check, a_d, a_m, denominator="softmax", private_classes=(0, 1)):
    """Vectorized loss over rows of private/target surrogate scores."""
    sp_row = np.atleast_2d(sp_row)
    sc_row = np.atleast_2d(sc_row)
    p1, p2 = private_classes
    gap = np.abs(sp_row[:, p1] - sp_row[:, p2])
    num = gap ** a_d
    if denominator == "softmax":
        den = softmax(sc_row)[:, c_check] ** a_m
    else:
        raw = sc_row[:, c_check]
        with np.errstate(invalid="ignore"):
            den = np.where(raw > 0, np.abs(raw) ** a_m, np.nan)
        if a_m == 0:
            den = np.ones_like(raw)
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = num / den
    return np.where(np.isfinite(loss), loss, np.inf)


def netfense_loss(a2, x, w_c, w_p, v, c_check, a_d=2.0, a_m=1.0, private_classes=(0, 1), denominator="softmax") -> float:
    """Loss of the graph whose A_hat^2 is ``a2``, evaluated at node v."""
    row = a2[v]
    row = row.toarray().ravel() if hasattr(row, "toarray") else np.asarray(row).ravel()
    xd = x.toarray() if hasattr(x, "toarray") else np.asarray(x, dtype=float)
    sp_row = (row @ xd) @ w_p
    sc_row = (row @ xd) @ w_c
    return float(_loss_from_scores(sp_row, sc_row, c_check, a_d, a_m, denominator, private_classes)[0])


def _w(model):
    return model.w_prime if isinstance(model, GcnModel) else np.asarray(model)


def predicted_target_class(f_c: GcnModel, graph: AttributedGraph, v: int) -> int:
    z = predict_full(f_c, build_normalized(graph), graph.features.astype(float))
    return int(np.argmax(z[v]))


def clean_threshold(graph: AttributedGraph, config: DefenseConfig, ppr: Optional[PprModel] = None, seed: int = 0) -> float:
    ppr = ppr if ppr is not None else build_ppr(graph, config.alpha)
    return quantile_threshold(ppr, graph, config.tau_quantile, config.ppr_variant, seed=seed)


def single_target_defense(
    graph: AttributedGraph,
    models,
    ppr: Optional[PprModel],
    v: int,
    config: DefenseConfig,
    tau: Optional[float] = None,
    c_check: Optional[int] = None,
) -> PerturbationPlan:
    """Greedy perturbation protecting the private label of node v.

    ``models`` is ``(f_C, f_P)``. ``ppr`` is the PPR model of ``graph``; it
    supplies the threshold tau (unless given) and the first step's
    influences. Later steps use influences refreshed on the perturbed graph.
    """
    if not 0 <= v < graph.n_nodes:
        raise ConfigError(f"target node {v} out of range [0, {graph.n_nodes})")
    f_c, f_p = models
    if tau is None:
        tau = clean_threshold(graph, config, ppr)
    if c_check is None:
        c_check = predicted_target_class(f_c, graph, v)
    x = graph.features.astype(float)
    y_p = x @ _w(f_p)
    y_c = x @ _w(f_c)

    plan = PerturbationPlan("netfense", [v], config.budget_b, meta={"tau": tau, "c_check": c_check})
    current = graph
    source = ppr
    for t in range(config.budget_b):
        if config.tau_refresh and t > 0:
            source = build_ppr(current, config.alpha)
            tau = clean_threshold(current, config, source)
        elif source is None or (t % config.refresh_every == 0 and t > 0):
            source = local_ppr(current, v, config.alpha)
        deltas = anchored_deltas(source, current, v, config.ppr_variant)
        ok = valid_pair_mask(current, v) & (np.nan_to_num(deltas, nan=np.inf) < tau)
        us = np.flatnonzero(ok)
        if len(us) == 0:
            break
        s_p = candidate_surrogate_scores(current, y_p, v, us)
        s_c = candidate_surrogate_scores(current, y_c, v, us)
        losses = _loss_from_scores(s_p, s_c, c_check, config.a_d, config.a_m, config.denominator)
        order = np.lexsort((us, deltas[us], losses))
        best = order[0]
        u = int(us[best])
        flip = current.flip_for(v, u)
        step = PlanStep(flip, float(losses[best]), len(us), v, float(deltas[u]))
        if config.record_candidates:
            step.candidate_losses = {int(a): float(b) for a, b in zip(us, losses)}
        plan.steps.append(step)
        current = apply_flip(current, flip)
        source = None if config.refresh_every == 1 else source
    plan.final_graph = current
    return plan


def run_sequential(graph, order, per_target: Callable, callback: Optional[Callable] = None):
    """Apply ``per_target(current_graph, v) -> plan`` to each target in order.

    Each target sees the graph produced by the previous one. ``callback(i,
    graph)`` is invoked after target i. Returns (steps, final graph).
    """
    steps = []
    current = graph
    for i, v in enumerate(order):
        plan = per_target(current, int(v))
        steps.extend(plan.steps)
        current = plan.final_graph
        if callback is not None:
            callback(i, current)
    return steps, current


def multi_target_defense(
    graph: AttributedGraph,
    models,
    ppr: Optional[PprModel],
    targets: Sequence[int],
    config: DefenseConfig,
    seed: int = 0,
    tau: Optional[float] = None,
    callback: Optional[Callable] = None,
) -> PerturbationPlan:
    """Defend several targets one at a time in a seeded random order.

    The threshold tau is fixed on the clean graph; each target gets budget b.
    """
    order = [int(t) for t in np.random.default_rng(seed).permutation(np.asarray(targets, dtype=np.int64))]
    if tau is None and len(order):
        tau = clean_threshold(graph, config, ppr)

    def per_target(g, v):
        return single_target_defense(g, models, ppr if g is graph else None, v, config, tau=tau)

    steps, final = run_sequential(graph, order, per_target, callback)
    return PerturbationPlan("netfense", order, config.budget_b, steps, final, meta={"tau": tau, "seed": seed})


def select_targets(margins, test_set, mode: str = "single", seed: int = 0, n_high: int = 10, n_low: int = 10, n_random: int = 20):
    """Pick evaluation targets from the test set.

    single: the ``n_high`` highest positive margins, the ``n_low`` lowest
    positive margins, then ``n_random`` further random test nodes. multi: the
    whole test set.
    """
    test = np.asarray(sorted(int(t) for t in test_set), dtype=np.int64)
    if mode == "multi":
        return test.tolist()
    if mode != "single":
        raise ConfigError(f"unknown target mode {mode!r}")
    m = np.asarray(margins, dtype=float)[test]
    pos = test[m > 0]
    pos_m = m[m > 0]
    if len(pos) < max(n_high, n_low):
        log.warning("only %d test nodes have a positive margin", len(pos))
    high = pos[np.lexsort((pos, -pos_m))][:n_high].tolist()
    low = pos[np.lexsort((pos, pos_m))][:n_low].tolist()
    chosen = list(dict.fromkeys(high + low))
    rest = np.setdiff1d(test, chosen)
    rng = np.random.default_rng(seed)
    extra = rng.choice(rest, size=min(n_random, len(rest)), replace=False).tolist() if len(rest) else []
    return chosen + [int(e) for e in extra]
