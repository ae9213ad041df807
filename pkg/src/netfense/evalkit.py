"""Experiment protocol: repeated splits, target selection, perturbation, retraining, reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import attack_defense_nt, feature_defense, random_defense
from .defense import (
    DefenseConfig,
    PerturbationPlan,
    clean_threshold,
    run_sequential,
    select_targets,
    single_target_defense,
)
from .errors import ConfigError
from .gcn import build_normalized, margins, predict_full, train_gcn
from .graph import AttributedGraph, LabelSet, make_split, private_label_from_feature
from .ppr import build_ppr

log = logging.getLogger(__name__)

STRATEGIES = ("clean", "random", "nt", "netfense")
# "feature" perturbs node features only; used for the structure-vs-feature contrast
STUDY_STRATEGIES = STRATEGIES + ("feature",)
REPORT_SCHEMA = "netfense-report/1"


@dataclass
class Dataset:
    name: str
    graph: AttributedGraph
    labels: LabelSet


@dataclass
class ExperimentConfig:
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    hidden_dim: int = 16
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    split_ratios: tuple = (0.1, 0.1, 0.8)
    seed: int = 0
    retrain: bool = True
    n_high: int = 10
    n_low: int = 10
    n_random: int = 20
    degree_test_threshold: float = 0.004
    checkpoint_pct: float = 1.0


@dataclass
class EvalReport:
    """Per-target records plus aggregate accuracies.

    Each record holds clean and perturbed margins and correctness flags for
    both tasks; ``overall`` entries hold test-set accuracies.
    """

    strategy: str
    dataset: str
    mode: str
    repeats: int
    config: dict
    records: list = field(default_factory=list)
    overall: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {}
        if not self.records:
            return out
        for key in ("tlc_margin_clean", "tlc_margin", "plc_margin_clean", "plc_margin"):
            out[key] = float(np.mean([r[key] for r in self.records]))
        out["plc_abs_margin_clean"] = float(np.mean([abs(r["plc_margin_clean"]) for r in self.records]))
        out["plc_abs_margin"] = float(np.mean([abs(r["plc_margin"]) for r in self.records]))
        for task in ("tlc", "plc"):
            out[f"{task}_acc_set_clean"] = float(np.mean([r[f"{task}_correct_clean"] for r in self.records]))
            out[f"{task}_acc_set"] = float(np.mean([r[f"{task}_correct"] for r in self.records]))
            out[f"{task}_margin_diff"] = out[f"{task}_margin"] - out[f"{task}_margin_clean"]
            out[f"{task}_acc_diff"] = out[f"{task}_acc_set"] - out[f"{task}_acc_set_clean"]
        if self.overall:
            for task in ("tlc", "plc"):
                out[f"{task}_acc_overall_clean"] = float(np.mean([o[f"{task}_acc_clean"] for o in self.overall]))
                out[f"{task}_acc_overall"] = float(np.mean([o[f"{task}_acc"] for o in self.overall]))
        out["mean_flips"] = float(np.mean([r["n_flips"] for r in self.records]))
        return out

    def to_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "strategy": self.strategy,
            "dataset": self.dataset,
            "mode": self.mode,
            "repeats": self.repeats,
            "config": self.config,
            "summary": self.summary(),
            "records": self.records,
            "overall": self.overall,
            "trajectory": self.trajectory,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["strategy"], d["dataset"], d["mode"], d["repeats"], d["config"], d["records"], d["overall"], d["trajectory"], d.get("notes", []))


def _config_dict(config: ExperimentConfig):
    d = asdict(config)
    d["split_ratios"] = list(config.split_ratios)
    return d


def _train_pair(graph, labels, split, config, seed):
    norm = build_normalized(graph)
    kw = dict(hidden_dim=config.hidden_dim, epochs=config.epochs, seed=seed, lr=config.lr, weight_decay=config.weight_decay, norm=norm)
    return train_gcn(graph, labels, split, "target", **kw), train_gcn(graph, labels, split, "private", **kw)


def _predict_pair(models, graph):
    norm = build_normalized(graph)
    x = graph.features.astype(float)
    return predict_full(models[0], norm, x), predict_full(models[1], norm, x)


def perturb(strategy, graph, models, v, labels, config: ExperimentConfig, seed=0, tau=None, ppr=None, reference=None) -> PerturbationPlan:
    """Run one strategy for target v and return its plan."""
    dc = config.defense
    if strategy == "clean":
        return PerturbationPlan("clean", [v], dc.budget_b, [], graph)
    if strategy == "netfense":
        return single_target_defense(graph, models, ppr, v, dc, tau=tau)
    if strategy == "random":
        return random_defense(graph, v, dc, seed=seed, reference=reference, threshold=config.degree_test_threshold)
    if strategy == "nt":
        return attack_defense_nt(graph, models, v, dc, private_label=int(labels.private[v]), reference=reference, threshold=config.degree_test_threshold)
    if strategy == "feature":
        return feature_defense(graph, models, v, dc)
    raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STUDY_STRATEGIES}")


@dataclass
class _Repeat:
    split: object
    models: tuple
    z: tuple
    targets: list
    tau: Optional[float]
    ppr: object


def _prepare(dataset: Dataset, config: ExperimentConfig, r: int, mode: str, need_tau: bool):
    seed = config.seed + r
    g, labels = dataset.graph, dataset.labels
    split = make_split(g, config.split_ratios, seed)
    models = _train_pair(g, labels, split, config, seed)
    z = _predict_pair(models, g)
    m_c = margins(z[0], np.maximum(labels.target, 0))
    targets = select_targets(m_c, split.test, mode, seed, config.n_high, config.n_low, config.n_random)
    ppr = tau = None
    if need_tau:
        ppr = build_ppr(g, config.defense.alpha)
        tau = clean_threshold(g, config.defense, ppr, seed=seed)
    return _Repeat(split, models, z, targets, tau, ppr)


def _accuracy(z, y, nodes):
    nodes = np.asarray(nodes, dtype=np.int64)
    nodes = nodes[y[nodes] >= 0]
    if len(nodes) == 0:
        return float("nan")
    return float((z[nodes].argmax(axis=1) == y[nodes]).mean())


def run_single_target_experiments(dataset: Dataset, strategies: Sequence[str], config: ExperimentConfig = None, n_repeats: int = 5) -> dict:
    """Single-target protocol for several strategies sharing splits and clean models.

    Every target is perturbed independently from the clean graph. With
    ``config.retrain`` the GCNs are retrained on each perturbed graph
    (poisoning); otherwise the clean models are re-applied.
    """
    config = config or ExperimentConfig()
    for s in strategies:
        if s not in STUDY_STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {STUDY_STRATEGIES}")
    labels = dataset.labels
    yt, yp = labels.target, labels.private
    reports = {s: EvalReport(s, dataset.name, "single", n_repeats, _config_dict(config)) for s in strategies}
    for r in range(n_repeats):
        rep = _prepare(dataset, config, r, "single", "netfense" in strategies)
        seed = config.seed + r
        zc, zp = rep.z
        mc, mp = margins(zc, np.maximum(yt, 0)), margins(zp, np.maximum(yp, 0))
        test = rep.split.test
        clean_overall = {"tlc_acc_clean": _accuracy(zc, yt, test), "plc_acc_clean": _accuracy(zp, yp, test)}
        group = {}
        for i, v in enumerate(rep.targets):
            group[v] = "high" if i < config.n_high else ("low" if i < config.n_high + config.n_low else "random")
        for s in strategies:
            for v in rep.targets:
                plan = perturb(s, dataset.graph, rep.models, v, labels, config, seed=seed * 100003 + v, tau=rep.tau, ppr=rep.ppr)
                if plan.final_graph is not dataset.graph:
                    g2 = plan.final_graph
                    models = _train_pair(g2, labels, rep.split, config, seed) if config.retrain else rep.models
                    zc2, zp2 = _predict_pair(models, g2)
                else:
                    zc2, zp2 = zc, zp
                reports[s].records.append(
                    {
                        "repeat": r,
                        "node": int(v),
                        "degree": int(dataset.graph.degrees[v]),
                        "group": group[v],
                        "n_flips": len(plan.steps) or len(plan.meta.get("feature_flips", ())),
                        "tlc_margin_clean": float(mc[v]),
                        "plc_margin_clean": float(mp[v]),
                        "tlc_margin": float(margins(zc2[[v]], np.maximum(yt[[v]], 0))[0]),
                        "plc_margin": float(margins(zp2[[v]], np.maximum(yp[[v]], 0))[0]),
                        "tlc_correct_clean": bool(zc[v].argmax() == yt[v]),
                        "plc_correct_clean": bool(zp[v].argmax() == yp[v]),
                        "tlc_correct": bool(zc2[v].argmax() == yt[v]),
                        "plc_correct": bool(zp2[v].argmax() == yp[v]),
                    }
                )
                reports[s].overall.append(
                    {"repeat": r, "node": int(v), **clean_overall, "tlc_acc": _accuracy(zc2, yt, test), "plc_acc": _accuracy(zp2, yp, test)}
                )
    return reports


def run_single_target_experiment(dataset: Dataset, strategy: str, config: ExperimentConfig = None, n_repeats: int = 5) -> EvalReport:
    return run_single_target_experiments(dataset, [strategy], config, n_repeats)[strategy]


def run_multi_target_experiment(dataset: Dataset, strategy: str, config: ExperimentConfig = None, n_repeats: int = 20) -> EvalReport:
    """All test nodes are targets, defended sequentially in a seeded random order.

    Set (perturbed targets so far) and Overall (all test nodes) accuracies are
    recorded at every ``checkpoint_pct`` percent of targets, starting with the
    clean graph at ratio 0.
    """
    config = config or ExperimentConfig(defense=replace(DefenseConfig(), budget_b=10))
    labels = dataset.labels
    yt, yp = labels.target, labels.private
    report = EvalReport(strategy, dataset.name, "multi", n_repeats, _config_dict(config))
    for r in range(n_repeats):
        seed = config.seed + r
        rep = _prepare(dataset, config, r, "multi", strategy == "netfense")
        test = rep.split.test
        order = [int(t) for t in np.random.default_rng(seed).permutation(np.asarray(rep.targets, dtype=np.int64))]
        step = max(1, int(round(len(order) * config.checkpoint_pct / 100.0)))
        checkpoints = set(range(step - 1, len(order), step)) | {len(order) - 1}
        zc, zp = rep.z

        def record(n_done, zc_, zp_):
            done = order[:n_done]
            report.trajectory.append(
                {
                    "repeat": r,
                    "n_perturbed": n_done,
                    "ratio": n_done / max(len(order), 1),
                    "tlc_acc_set": _accuracy(zc_, yt, done) if done else _accuracy(zc_, yt, test),
                    "plc_acc_set": _accuracy(zp_, yp, done) if done else _accuracy(zp_, yp, test),
                    "tlc_acc_overall": _accuracy(zc_, yt, test),
                    "plc_acc_overall": _accuracy(zp_, yp, test),
                }
            )

        record(0, zc, zp)

        def per_target(g, v):
            return perturb(strategy, g, rep.models, v, labels, config, seed=seed * 100003 + v, tau=rep.tau,
                           ppr=rep.ppr if g is dataset.graph else None, reference=dataset.graph)

        def callback(i, g):
            if i not in checkpoints:
                return
            if g.n_perturbations == dataset.graph.n_perturbations:
                record(i + 1, zc, zp)
                return
            models = _train_pair(g, labels, rep.split, config, seed) if config.retrain else rep.models
            record(i + 1, *_predict_pair(models, g))

        steps, final = run_sequential(dataset.graph, order, per_target, callback)
        zc2, zp2 = _predict_pair(_train_pair(final, labels, rep.split, config, seed) if (config.retrain and steps) else rep.models, final)
        mc, mp = margins(zc, np.maximum(yt, 0)), margins(zp, np.maximum(yp, 0))
        mc2, mp2 = margins(zc2, np.maximum(yt, 0)), margins(zp2, np.maximum(yp, 0))
        n_flips = {}
        for s in steps:
            n_flips[s.target] = n_flips.get(s.target, 0) + 1
        for v in order:
            report.records.append(
                {
                    "repeat": r,
                    "node": v,
                    "degree": int(dataset.graph.degrees[v]),
                    "group": "multi",
                    "n_flips": n_flips.get(v, 0),
                    "tlc_margin_clean": float(mc[v]),
                    "plc_margin_clean": float(mp[v]),
                    "tlc_margin": float(mc2[v]),
                    "plc_margin": float(mp2[v]),
                    "tlc_correct_clean": bool(zc[v].argmax() == yt[v]),
                    "plc_correct_clean": bool(zp[v].argmax() == yp[v]),
                    "tlc_correct": bool(zc2[v].argmax() == yt[v]),
                    "plc_correct": bool(zp2[v].argmax() == yp[v]),
                }
            )
        report.overall.append(
            {
                "repeat": r,
                "tlc_acc_clean": _accuracy(zc, yt, test),
                "plc_acc_clean": _accuracy(zp, yp, test),
                "tlc_acc": _accuracy(zc2, yt, test),
                "plc_acc": _accuracy(zp2, yp, test),
            }
        )
    return report


def sweep_hyperparams(dataset: Dataset, grid: Sequence[dict], config: ExperimentConfig = None, n_repeats: int = 5, strategy: str = "netfense"):
    """One single-target report per grid point.

    Grid entries override ``DefenseConfig`` fields, e.g. ``{"a_d": 2, "a_m": 1}``
    or ``{"budget_b": 10, "tau_quantile": 0.5}``.
    """
    config = config or ExperimentConfig()
    rows = []
    for point in grid:
        unknown = set(point) - set(asdict(config.defense))
        if unknown:
            raise ConfigError(f"unknown defense fields in sweep grid: {sorted(unknown)}")
        cfg = replace(config, defense=replace(config.defense, **point))
        report = run_single_target_experiment(dataset, strategy, cfg, n_repeats)
        rows.append({**point, **report.summary(), "_report": report})
    return rows


def write_sweep(rows, path):
    rows = [{k: v for k, v in r.items() if k != "_report"} for r in rows]
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def degree_quartile_buckets(degrees) -> list:
    """Four half-open [lo, hi) degree ranges at the quartiles of ``degrees``."""
    q = np.quantile(np.asarray(degrees, dtype=float), [0.25, 0.5, 0.75])
    edges = [-np.inf, *q, np.inf]
    return [(edges[i], edges[i + 1]) for i in range(4)]


def degree_bucket_analysis(report: EvalReport, buckets) -> list:
    """Mean (clean - perturbed) margin per degree bucket for both tasks."""
    out = []
    for lo, hi in buckets:
        recs = [r for r in report.records if lo <= r["degree"] < hi]
        if not recs:
            note = f"degree bucket [{lo}, {hi}) is empty; omitted"
            log.info(note)
            report.notes.append(note)
            continue
        out.append(
            {
                "lo": lo,
                "hi": hi,
                "n": len(recs),
                "tlc_delta": float(np.mean([r["tlc_margin_clean"] - r["tlc_margin"] for r in recs])),
                "plc_delta": float(np.mean([r["plc_margin_clean"] - r["plc_margin"] for r in recs])),
            }
        )
    return out


def kappa_coefficient(labels_a, labels_b) -> float:
    """Cohen's kappa between two categorical labelings of the same nodes."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ConfigError("labelings must cover the same nodes")
    cats = np.union1d(a, b)
    p_o = float((a == b).mean())
    p_e = float(sum((a == c).mean() * (b == c).mean() for c in cats))
    if p_e >= 1.0:
        log.warning("chance agreement is 1; kappa undefined, returning 0")
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


LONG_FIELDS = ["repeat", "node", "degree", "group", "task", "condition", "margin", "correct"]


def emit_report(report: EvalReport, fmt: str, path):
    """Write the report as JSON (full) or long-format CSV (one margin per row)."""
    path = Path(path)
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LONG_FIELDS)
            for rec in report.records:
                for task in ("tlc", "plc"):
                    for cond, suffix in (("clean", "_clean"), ("perturbed", "")):
                        w.writerow([rec["repeat"], rec["node"], rec["degree"], rec["group"], task, cond,
                                    repr(rec[f"{task}_margin{suffix}"]), int(rec[f"{task}_correct{suffix}"])])
    else:
        raise ConfigError(f"unknown report format {fmt!r}; expected 'json' or 'csv'")
    return path


def load_report(path) -> EvalReport:
    with open(path) as fh:
        return EvalReport.from_dict(json.load(fh))


def choose_private_column(dataset: Dataset, config: ExperimentConfig = None, min_accuracy: float = 0.6, max_tries: int = 20, seed: int = 0) -> int:
    """Most balanced binary feature whose clean private-label accuracy reaches ``min_accuracy``."""
    config = config or ExperimentConfig()
    x = dataset.graph.features
    balance = np.abs(x.mean(axis=0) - 0.5)
    split = make_split(dataset.graph, config.split_ratios, seed)
    for col in np.argsort(balance, kind="stable")[:max_tries]:
        g, labels = private_label_from_feature(dataset.graph, dataset.labels, int(col))
        f_p = train_gcn(g, labels, split, "private", config.hidden_dim, config.epochs, seed, config.lr, config.weight_decay)
        z = predict_full(f_p, build_normalized(g), g.features.astype(float))
        acc = _accuracy(z, labels.private, split.test)
        log.info("private column %d: balance %.3f accuracy %.3f", col, balance[col], acc)
        if acc >= min_accuracy:
            return int(col)
    raise ConfigError(f"no feature among the {max_tries} most balanced reaches accuracy {min_accuracy}")
