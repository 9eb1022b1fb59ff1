"""Run every experiment suite and write report / plot-data CSVs.

    python3 scripts/run_suites.py --out-dir results [--suites model_comparison,cycle_ablation]

Each suite gets ``<out-dir>/<suite>/report.csv`` and one ``plot_<metric>.csv``
per metric. Defaults match the acceptance setup (5 seeds, 30 epochs).
"""
import argparse
import logging
import time
from pathlib import Path

from aact.evaluation import SUITES, SuiteConfig, run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, required=True)
    ap.add_argument("--suites", default=",".join(SUITES))
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    for suite in args.suites.split(","):
        start = time.perf_counter()
        report = run_suite(SuiteConfig(suite=suite, seeds=seeds))
        out = args.out_dir / suite
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "report.csv")
        for metric in sorted({r.metric for r in report.rows}):
            report.write_plot_data(out / f"plot_{metric}.csv", metric)
        print(f"{suite}: {len(report.rows)} rows in {time.perf_counter() - start:.0f}s -> {out}")
        for name, pts in report.series("top1" if suite != "obs_pred" else "moc").items():
            print("  ", name, " ".join(f"{x:g}:{y:.4f}" for x, y in pts))


if __name__ == "__main__":
    main()
