"""Margin reduction per degree quartile of the protected nodes.

    python3 scripts/degree_buckets.py --config scripts/configs/sbm_single.ini --seeds 5
"""

import argparse

import numpy as np
from scipy.stats import spearmanr

from netfense import evalkit
from netfense.cli import experiment_config, load_config, load_dataset


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    args = p.parse_args()
    cfg = load_config(args.config, args.overrides)
    quartile, reduction = [], []
    for s in range(args.seeds):
        ds = load_dataset(cfg, seed_offset=s)
        ecfg = experiment_config(cfg)
        report = evalkit.run_single_target_experiment(ds, "netfense", ecfg, 1)
        buckets = evalkit.degree_quartile_buckets([r["degree"] for r in report.records])
        for i, b in enumerate(buckets):
            rows = evalkit.degree_bucket_analysis(report, [b])
            if rows:
                quartile.append(i)
                reduction.append(rows[0]["plc_delta"])
                print(f"seed {s} quartile {i} [{b[0]}, {b[1]}) n={rows[0]['n']} PLC reduction {rows[0]['plc_delta']:+.3f}")
    rho, pval = spearmanr(quartile, reduction)
    means = [np.mean([r for q, r in zip(quartile, reduction) if q == i]) for i in range(4)]
    print("mean reduction by quartile:", np.round(means, 3).tolist())
    print(f"Spearman rho={rho:+.3f} p={pval:.3g}")


if __name__ == "__main__":
    main()
