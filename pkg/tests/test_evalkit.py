import csv
import json
import logging
from dataclasses import replace

import numpy as np
import pytest

from netfense.defense import DefenseConfig
from netfense.errors import ConfigError
from netfense.evalkit import (
    LONG_FIELDS,
    Dataset,
    EvalReport,
    ExperimentConfig,
    choose_private_column,
    degree_bucket_analysis,
    degree_quartile_buckets,
    emit_report,
    kappa_coefficient,
    load_report,
    run_multi_target_experiment,
    run_single_target_experiment,
    run_single_target_experiments,
    sweep_hyperparams,
    write_sweep,
)
from netfense.gcn import build_normalized, predict_full, train_gcn
from netfense.graph import FeatureModel, generate_sbm, make_split


@pytest.fixture(scope="module")
def dataset():
    g, labels = generate_sbm([30, 30], 0.2, 0.02, FeatureModel(private_homophily=0.4), seed=3)
    return Dataset("tiny", g, labels)


@pytest.fixture(scope="module")
def config():
    return ExperimentConfig(defense=DefenseConfig(budget_b=3), epochs=60, n_high=3, n_low=3, n_random=4)


@pytest.fixture(scope="module")
def reports(dataset, config):
    return run_single_target_experiments(dataset, ["clean", "random", "netfense"], config, n_repeats=2)


def test_clean_strategy_has_zero_differences(reports):
    s = reports["clean"].summary()
    assert s["tlc_margin_diff"] == 0.0 and s["plc_margin_diff"] == 0.0
    assert s["tlc_acc_diff"] == 0.0 and s["plc_acc_diff"] == 0.0
    assert s["mean_flips"] == 0.0


def test_report_ranges_and_counts(reports):
    for rep in reports.values():
        assert len(rep.records) == 2 * 10
        for r in rep.records:
            for k in ("tlc_margin", "plc_margin", "tlc_margin_clean", "plc_margin_clean"):
                assert -1.0 <= r[k] <= 1.0
            assert (r["tlc_margin"] > 0) == r["tlc_correct"]
            assert r["n_flips"] <= 3
        for k, val in rep.summary().items():
            if "acc" in k and "diff" not in k:
                assert 0.0 <= val <= 1.0


def test_clean_accuracy_recount(dataset, config, reports):
    split = make_split(dataset.graph, config.split_ratios, config.seed)
    f_c = train_gcn(dataset.graph, dataset.labels, split, "target", config.hidden_dim, config.epochs, config.seed)
    z = predict_full(f_c, build_normalized(dataset.graph), dataset.graph.features)
    acc = (z[split.test].argmax(axis=1) == dataset.labels.target[split.test]).mean()
    assert reports["netfense"].overall[0]["tlc_acc_clean"] == pytest.approx(acc)


def test_reproducible(dataset, config, reports):
    again = run_single_target_experiment(dataset, "netfense", config, n_repeats=2)
    assert again.records == reports["netfense"].records


def test_unknown_strategy(dataset, config):
    with pytest.raises(ConfigError):
        run_single_target_experiment(dataset, "bogus", config, 1)


def test_emit_roundtrip(tmp_path, reports):
    rep = reports["netfense"]
    path = emit_report(rep, "json", tmp_path / "r.json")
    back = load_report(path)
    assert back.to_dict() == json.loads(json.dumps(rep.to_dict()))


def test_emit_csv_long_format(tmp_path, reports):
    rep = reports["random"]
    path = emit_report(rep, "csv", tmp_path / "r.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == LONG_FIELDS
    assert len(rows) - 1 == len(rep.records) * 2 * 2


def test_emit_empty_report(tmp_path):
    empty = EvalReport("clean", "none", "single", 0, {})
    path = emit_report(empty, "csv", tmp_path / "e.csv")
    assert open(path).read().strip() == ",".join(LONG_FIELDS)
    emit_report(empty, "json", tmp_path / "e.json")
    assert load_report(tmp_path / "e.json").records == []
    with pytest.raises(ConfigError):
        emit_report(empty, "xml", tmp_path / "e.xml")


def test_degree_buckets(reports):
    rep = reports["netfense"]
    (whole,) = degree_bucket_analysis(rep, [(-np.inf, np.inf)])
    assert whole["tlc_delta"] == pytest.approx(rep.summary()["tlc_margin_clean"] - rep.summary()["tlc_margin"])
    assert whole["n"] == len(rep.records)
    for b in degree_bucket_analysis(reports["clean"], degree_quartile_buckets([r["degree"] for r in rep.records])):
        assert b["tlc_delta"] == 0.0 and b["plc_delta"] == 0.0
    note_count = len(rep.notes)
    out = degree_bucket_analysis(rep, [(1000, 2000), (-np.inf, np.inf)])
    assert len(out) == 1 and len(rep.notes) == note_count + 1


def test_quartile_buckets_cover():
    buckets = degree_quartile_buckets(np.arange(1, 101))
    assert len(buckets) == 4
    assert buckets[0][0] == -np.inf and buckets[-1][1] == np.inf


def test_kappa():
    a = np.array([0, 1] * 50)
    assert kappa_coefficient(a, a) == 1.0
    rng = np.random.default_rng(0)
    assert abs(kappa_coefficient(rng.integers(0, 2, 1000), rng.integers(0, 2, 1000))) < 0.1
    # two raters, 50 items: agree on 35 -> p_o = 0.7, p_e = 0.5
    x = np.array([1] * 25 + [0] * 25)
    y = np.concatenate([x[:35], 1 - x[35:]])
    p_e = (x.mean() * y.mean()) + ((1 - x.mean()) * (1 - y.mean()))
    assert kappa_coefficient(x, y) == pytest.approx((0.7 - p_e) / (1 - p_e))


def test_kappa_degenerate(caplog):
    with caplog.at_level(logging.WARNING):
        assert kappa_coefficient([1, 1, 1], [1, 1, 1]) == 0.0
    assert "undefined" in caplog.text
    with pytest.raises(ConfigError):
        kappa_coefficient([1, 0], [1])


def test_multi_target_trajectory(dataset, config):
    cfg = replace(config, checkpoint_pct=25.0)
    clean = run_multi_target_experiment(dataset, "clean", cfg, n_repeats=1)
    first = clean.trajectory[0]
    assert first["ratio"] == 0.0
    assert first["tlc_acc_overall"] == pytest.approx(clean.overall[0]["tlc_acc_clean"])
    assert len({t["tlc_acc_overall"] for t in clean.trajectory}) == 1
    assert len({t["plc_acc_overall"] for t in clean.trajectory}) == 1

    rep = run_multi_target_experiment(dataset, "random", replace(cfg, defense=DefenseConfig(budget_b=1)), n_repeats=1)
    last = rep.trajectory[-1]
    assert last["ratio"] == 1.0
    assert last["tlc_acc_set"] == last["tlc_acc_overall"]
    assert last["plc_acc_set"] == last["plc_acc_overall"]
    assert [t["n_perturbed"] for t in rep.trajectory] == sorted(t["n_perturbed"] for t in rep.trajectory)


def test_sweep_single_point(tmp_path, dataset, config, reports):
    rows = sweep_hyperparams(dataset, [{"budget_b": 3}], config, n_repeats=2)
    assert rows[0]["_report"].records == reports["netfense"].records
    write_sweep(rows, tmp_path / "s.csv")
    out = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert out[0]["budget_b"] == "3"
    with pytest.raises(ConfigError):
        sweep_hyperparams(dataset, [{"gamma": 1}], config)


def test_choose_private_column():
    fm = FeatureModel(private_homophily=0.6, private_on=0.9, private_off=0.05)
    g, labels = generate_sbm([40, 40], 0.15, 0.02, fm, seed=1)
    col = choose_private_column(Dataset("x", g, labels), ExperimentConfig(epochs=60), min_accuracy=0.6)
    assert 0 <= col < g.n_features
    with pytest.raises(ConfigError):
        choose_private_column(Dataset("x", g, labels), ExperimentConfig(epochs=5), min_accuracy=1.01, max_tries=2)
