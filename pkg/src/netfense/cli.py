"""Command-line entry point: ``netfense {train,defend,evaluate,compare,sweep}``.

A run is described by one INI-style file of ``key = value`` pairs grouped in
``[section]`` headers (data, gcn, defense, experiment, compare, sweep).
``--set section.key=value`` overrides single entries; ``--seed``, ``--out``,
``--strategy`` and ``--mode`` override their experiment fields.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import evalkit
from .baselines import STRATEGIES as CANDIDATE_STRATEGIES
from .baselines import candidate_strategy_compare, write_trajectories
from .defense import DefenseConfig, PerturbationPlan, clean_threshold, select_targets
from .errors import ConfigError, NetfenseError
from .gcn import build_normalized, load_model, margins, predict_full, save_model, train_gcn
from .graph import FeatureModel, generate_sbm, load_graph, make_split, private_label_from_feature, save_graph
from .ppr import build_ppr

log = logging.getLogger("netfense")

BUDGET_SINGLE = 20
BUDGET_MULTI = 10


@dataclass
class DataConfig:
    name: str = "dataset"
    edges: Optional[str] = None
    features: Optional[str] = None
    labels: Optional[str] = None
    private_column: str = "none"  # "none" (label file), "auto" or a column index
    keep_private_column: bool = False
    sbm_blocks: Optional[str] = None  # e.g. "250,250,250,250"; used when no edge file
    sbm_intra: float = 0.03
    sbm_inter: float = 0.003
    sbm_homophily: float = 0.4
    sbm_seed: int = 0


@dataclass
class GcnConfig:
    hidden: int = 16
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4


@dataclass
class ExperimentSection:
    strategy: str = "netfense"
    mode: str = "single"
    seed: int = 0
    repeats: Optional[int] = None  # defaults: 5 single, 20 multi
    retrain: bool = True
    targets: Optional[str] = None  # comma list for ``defend``; default: selected targets
    split: str = "0.1,0.1,0.8"
    out: str = "runs/out"


@dataclass
class CompareConfig:
    strategies: str = ",".join(CANDIDATE_STRATEGIES)
    n_flips: int = 50
    seeds: int = 1
    margins: bool = False


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    gcn: GcnConfig = field(default_factory=GcnConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    compare: CompareConfig = field(default_factory=CompareConfig)
    sweep: dict = field(default_factory=dict)  # defense field -> list of values
    budget_explicit: bool = False

    def to_dict(self):
        return {
            "data": asdict(self.data),
            "gcn": asdict(self.gcn),
            "defense": asdict(self.defense),
            "experiment": asdict(self.experiment),
            "compare": asdict(self.compare),
            "sweep": self.sweep,
        }


SECTIONS = {"data": DataConfig, "gcn": GcnConfig, "defense": DefenseConfig, "experiment": ExperimentSection, "compare": CompareConfig}


def _coerce(path, raw: str, annotation, default):
    kind = type(default) if default is not None else str
    if "int" in str(annotation) and default is None:
        kind = int
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def parse_config(text: str = "", overrides=()) -> RunConfig:
    """Parse INI text plus ``section.key=value`` overrides into a RunConfig."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value)

    for section in cp.sections():
        if section not in SECTIONS and section != "sweep":
            raise ConfigError(f"unknown config section [{section}]")

    built = {}
    for section, cls in SECTIONS.items():
        defaults = cls()
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        if cp.has_section(section):
            for name, raw in cp.items(section):
                if name not in known:
                    raise ConfigError(f"{section}.{name}: unknown field")
                kwargs[name] = _coerce(f"{section}.{name}", raw, known[name].type, getattr(defaults, name))
        try:
            built[section] = cls(**kwargs) if kwargs else defaults
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    sweep = {}
    if cp.has_section("sweep"):
        known = {f.name for f in fields(DefenseConfig)}
        for name, raw in cp.items("sweep"):
            if name not in known:
                raise ConfigError(f"sweep.{name}: not a defense field")
            default = getattr(DefenseConfig(), name)
            sweep[name] = [_coerce(f"sweep.{name}", v, None, default) for v in raw.split(",") if v.strip()]
    explicit = cp.has_option("defense", "budget_b")
    cfg = RunConfig(built["data"], built["gcn"], built["defense"], built["experiment"], built["compare"], sweep, explicit)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    e = cfg.experiment
    if e.strategy not in evalkit.STRATEGIES:
        raise ConfigError(f"experiment.strategy: {e.strategy!r} not in {evalkit.STRATEGIES}")
    if e.mode not in ("single", "multi"):
        raise ConfigError(f"experiment.mode: {e.mode!r} not in ('single', 'multi')")
    if not cfg.budget_explicit:
        cfg.defense = replace(cfg.defense, budget_b=BUDGET_SINGLE if e.mode == "single" else BUDGET_MULTI)
    split = _split_ratios(cfg)
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
        raise ConfigError(f"experiment.split: expected three non-negative ratios summing to 1, got {e.split!r}")
    for s in _csv_list(cfg.compare.strategies):
        if s not in CANDIDATE_STRATEGIES:
            raise ConfigError(f"compare.strategies: {s!r} not in {CANDIDATE_STRATEGIES}")


def _split_ratios(cfg):
    try:
        return tuple(float(s) for s in _csv_list(cfg.experiment.split))
    except ValueError:
        raise ConfigError(f"experiment.split: cannot parse {cfg.experiment.split!r}") from None


def _csv_list(s):
    return [p.strip() for p in str(s).split(",") if p.strip()]


def load_config(path=None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def experiment_config(cfg: RunConfig) -> evalkit.ExperimentConfig:
    return evalkit.ExperimentConfig(
        defense=cfg.defense,
        hidden_dim=cfg.gcn.hidden,
        epochs=cfg.gcn.epochs,
        lr=cfg.gcn.lr,
        weight_decay=cfg.gcn.weight_decay,
        split_ratios=_split_ratios(cfg),
        seed=cfg.experiment.seed,
        retrain=cfg.experiment.retrain,
    )


def load_dataset(cfg: RunConfig, seed_offset: int = 0) -> evalkit.Dataset:
    d = cfg.data
    if d.edges is None and d.sbm_blocks is None:
        raise ConfigError("data.edges: no dataset path given (set data.edges/data.features or data.sbm_blocks)")
    if d.edges is not None:
        for name in ("edges", "features"):
            value = getattr(d, name)
            if value is None:
                raise ConfigError(f"data.{name}: missing path")
            if not Path(value).exists():
                raise ConfigError(f"data.{name}: file not found: {value}")
        if d.labels is None:
            raise ConfigError("data.labels: missing path")
        graph, labels = load_graph(d.edges, d.features, d.labels)
    else:
        try:
            blocks = [int(b) for b in _csv_list(d.sbm_blocks)]
        except ValueError:
            raise ConfigError(f"data.sbm_blocks: cannot parse {d.sbm_blocks!r}") from None
        fm = FeatureModel(private_homophily=d.sbm_homophily)
        graph, labels = generate_sbm(blocks, d.sbm_intra, d.sbm_inter, fm, seed=d.sbm_seed + seed_offset)
    ds = evalkit.Dataset(d.name, graph, labels)
    if d.private_column == "auto":
        col = evalkit.choose_private_column(ds, experiment_config(cfg), seed=cfg.experiment.seed)
        log.info("private column chosen automatically: %d", col)
        ds = evalkit.Dataset(d.name, *private_label_from_feature(graph, labels, col, d.keep_private_column))
    elif d.private_column != "none":
        try:
            col = int(d.private_column)
        except ValueError:
            raise ConfigError(f"data.private_column: expected 'none', 'auto' or an index, got {d.private_column!r}") from None
        if not 0 <= col < graph.n_features:
            raise ConfigError(f"data.private_column: {col} out of range [0, {graph.n_features})")
        ds = evalkit.Dataset(d.name, *private_label_from_feature(graph, labels, col, d.keep_private_column))
    return ds


def _out(cfg) -> Path:
    out = Path(cfg.experiment.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, cfg: RunConfig, command: str, extra=None):
    meta = {"command": command, "seed": cfg.experiment.seed, "config": cfg.to_dict(), **(extra or {})}
    with open(out / f"{command}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=str)


# ------------------------------------------------------------------ commands


def _train_models(cfg, ds):
    ec = experiment_config(cfg)
    split = make_split(ds.graph, ec.split_ratios, ec.seed)
    norm = build_normalized(ds.graph)
    kw = dict(hidden_dim=ec.hidden_dim, epochs=ec.epochs, seed=ec.seed, lr=ec.lr, weight_decay=ec.weight_decay, norm=norm)
    f_c = train_gcn(ds.graph, ds.labels, split, "target", **kw)
    f_p = train_gcn(ds.graph, ds.labels, split, "private", **kw)
    return split, (f_c, f_p)


def cmd_train(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    out = _out(cfg)
    split, (f_c, f_p) = _train_models(cfg, ds)
    save_model(f_c, out / "f_c")
    save_model(f_p, out / "f_p")
    x = ds.graph.features.astype(float)
    norm = build_normalized(ds.graph)
    mc = margins(predict_full(f_c, norm, x), np.maximum(ds.labels.target, 0))
    mp = margins(predict_full(f_p, norm, x), np.maximum(ds.labels.private, 0))
    with open(out / "margins.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "split", "tlc_margin", "plc_margin"])
        part = np.full(ds.graph.n_nodes, "", dtype=object)
        for name, idx in (("train", split.train), ("validation", split.validation), ("test", split.test)):
            part[idx] = name
        for i in range(ds.graph.n_nodes):
            w.writerow([i, part[i], repr(float(mc[i])), repr(float(mp[i]))])
    _write_meta(out, cfg, "train", {"n_nodes": ds.graph.n_nodes, "n_edges": ds.graph.n_edges})
    return {"f_c": out / "f_c", "f_p": out / "f_p"}


def _models_for(cfg, ds):
    out = Path(cfg.experiment.out)
    if (out / "f_c.json").exists() and (out / "f_p.json").exists():
        split = make_split(ds.graph, _split_ratios(cfg), cfg.experiment.seed)
        return split, (load_model(out / "f_c"), load_model(out / "f_p"))
    return _train_models(cfg, ds)


def cmd_defend(cfg: RunConfig):
    ds = load_dataset(cfg)
    out = _out(cfg)
    split, models = _models_for(cfg, ds)
    ec = experiment_config(cfg)
    if cfg.experiment.targets:
        targets = [int(t) for t in _csv_list(cfg.experiment.targets)]
    else:
        z = predict_full(models[0], build_normalized(ds.graph), ds.graph.features.astype(float))
        targets = select_targets(margins(z, np.maximum(ds.labels.target, 0)), split.test, cfg.experiment.mode, ec.seed)
    for t in targets:
        if not 0 <= t < ds.graph.n_nodes:
            raise ConfigError(f"experiment.targets: node {t} out of range [0, {ds.graph.n_nodes})")
    strategy = cfg.experiment.strategy
    ppr = tau = None
    if strategy == "netfense":
        ppr = build_ppr(ds.graph, cfg.defense.alpha)
        tau = clean_threshold(ds.graph, cfg.defense, ppr, seed=ec.seed)
    order = [int(t) for t in np.random.default_rng(ec.seed).permutation(np.asarray(targets, dtype=np.int64))]
    steps = []
    current = ds.graph
    for v in order:
        plan = evalkit.perturb(strategy, current, models, v, ds.labels, ec, seed=ec.seed * 100003 + v, tau=tau,
                               ppr=ppr if current is ds.graph else None, reference=ds.graph)
        steps.extend(plan.steps)
        current = plan.final_graph
    plan = PerturbationPlan(strategy, order, cfg.defense.budget_b, steps, current, meta={"seed": ec.seed, "tau": tau})
    plan.to_json(out / "plan.json")
    save_graph(current, ds.labels, out, stem="perturbed")
    _write_meta(out, cfg, "defend", {"n_targets": len(order), "n_flips": len(steps)})
    return plan


def cmd_evaluate(cfg: RunConfig):
    ds = load_dataset(cfg)
    out = _out(cfg)
    ec = experiment_config(cfg)
    e = cfg.experiment
    if e.mode == "single":
        report = evalkit.run_single_target_experiment(ds, e.strategy, ec, e.repeats or 5)
    else:
        report = evalkit.run_multi_target_experiment(ds, e.strategy, ec, e.repeats or 20)
        with open(out / "trajectory.csv", "w", newline="") as fh:
            keys = ["repeat", "n_perturbed", "ratio", "tlc_acc_set", "plc_acc_set", "tlc_acc_overall", "plc_acc_overall"]
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(report.trajectory)
    evalkit.emit_report(report, "json", out / "report.json")
    evalkit.emit_report(report, "csv", out / "report.csv")
    _write_meta(out, cfg, "evaluate", {"summary": report.summary()})
    return report


def cmd_compare(cfg: RunConfig):
    out = _out(cfg)
    strategies = _csv_list(cfg.compare.strategies)
    results = []
    for s in range(cfg.compare.seeds):
        ds = load_dataset(cfg, seed_offset=s)
        trajs = candidate_strategy_compare(ds.graph, strategies, cfg.compare.n_flips, cfg.defense.alpha, seed=cfg.experiment.seed + s)
        write_trajectories(trajs, out / f"trajectories_seed{s}.csv")
        results.append({k: t.drop for k, t in trajs.items()})
    with open(out / "ca_drop.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "strategy", "ca_drop"])
        for s, row in enumerate(results):
            for k in strategies:
                w.writerow([s, k, repr(float(row[k]))])
    if cfg.compare.margins:
        ds = load_dataset(cfg)
        reports = evalkit.run_single_target_experiments(ds, list(evalkit.STRATEGIES), experiment_config(cfg), cfg.experiment.repeats or 5)
        rows = [{"strategy": k, **r.summary()} for k, r in reports.items()]
        evalkit.write_sweep(rows, out / "strategies.csv")
    _write_meta(out, cfg, "compare")
    return results


def cmd_sweep(cfg: RunConfig):
    if not cfg.sweep:
        raise ConfigError("sweep: no grid given (add a [sweep] section, e.g. a_d = 0.5,1,2)")
    ds = load_dataset(cfg)
    out = _out(cfg)
    names = list(cfg.sweep)
    grid = [dict(zip(names, combo)) for combo in itertools.product(*(cfg.sweep[n] for n in names))]
    rows = evalkit.sweep_hyperparams(ds, grid, experiment_config(cfg), cfg.experiment.repeats or 5, cfg.experiment.strategy)
    evalkit.write_sweep(rows, out / "sweep.csv")
    _write_meta(out, cfg, "sweep", {"grid": grid})
    return rows


COMMANDS = {"train": cmd_train, "defend": cmd_defend, "evaluate": cmd_evaluate, "compare": cmd_compare, "sweep": cmd_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="netfense", description="Edge perturbation against private-label inference on graphs.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value config file with [section] headers")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--strategy", choices=evalkit.STRATEGIES)
    p.add_argument("--mode", choices=("single", "multi"))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    for flag, key in (("seed", "experiment.seed"), ("out", "experiment.out"), ("strategy", "experiment.strategy"), ("mode", "experiment.mode")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg)
    except NetfenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
