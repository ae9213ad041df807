"""Clean / random / NT / NetFense side by side on one dataset.

    python3 scripts/run_efficacy.py --config scripts/configs/sbm_single.ini
"""

import argparse
import csv
from pathlib import Path

from netfense import evalkit
from netfense.cli import experiment_config, load_config, load_dataset


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", required=True)
    p.add_argument("--strategies", default="clean,random,nt,netfense,feature")
    p.add_argument("--set", dest="overrides", action="append", default=[])
    args = p.parse_args()
    cfg = load_config(args.config, args.overrides)
    reports = evalkit.run_single_target_experiments(
        load_dataset(cfg), args.strategies.split(","), experiment_config(cfg), cfg.experiment.repeats or 5
    )
    out = Path(cfg.experiment.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, report in reports.items():
        evalkit.emit_report(report, "json", out / f"{name}.json")
        rows.append({"strategy": name, **report.summary()})
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['strategy']:>9}  |PLC| {r['plc_abs_margin']:.3f}  PLC {r['plc_margin']:+.3f}  "
              f"TLC {r['tlc_margin']:+.3f}  TLC acc {r['tlc_acc_set']:.3f}  PLC acc {r['plc_acc_set']:.3f}")


if __name__ == "__main__":
    main()
