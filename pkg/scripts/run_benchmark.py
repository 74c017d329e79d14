"""Run the synthetic benchmark and print the method ordering.

    python scripts/run_benchmark.py [--config configs/benchmark.cfg] [--run-dir runs/benchmark]

Reuses translator checkpoints already present in the run directory.
"""
import argparse
import csv
import sys
import time
from pathlib import Path

from spgan_kit.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "benchmark.cfg"))
    ap.add_argument("--run-dir", default="runs/benchmark")
    args = ap.parse_args()

    start = time.perf_counter()
    code = cli_main(["compare", "--config", args.config, "--run-dir", args.run_dir])
    if code:
        return code
    minutes = (time.perf_counter() - start) / 60

    with open(Path(args.run_dir) / "report" / "results.csv") as fh:
        mean = {(r["variant"], r["lmp"]): float(r["rank-1"]) for r in csv.DictReader(fh) if r["seed"] == "mean"}
    r1 = {v: 100 * mean[(v, "P=1 avg")] for v in ("supervised", "spgan", "cyclegan", "direct") if (v, "P=1 avg") in mean}
    print(f"\nwall time {minutes:.1f} min")
    print("mean rank-1 (P=1 avg): " + ", ".join(f"{v} {x:.1f}" for v, x in r1.items()))
    if len(r1) == 4:
        order = r1["supervised"] > r1["spgan"] >= r1["cyclegan"] > r1["direct"]
        print(f"supervised > SPGAN >= CycleGAN > direct: {order}; SPGAN - direct = {r1['spgan'] - r1['direct']:+.1f} points")
    if ("spgan", "P=7 max") in mean and ("spgan", "P=1 max") in mean:
        print(f"SPGAN P=7 max {100 * mean[('spgan', 'P=7 max')]:.1f} vs P=1 max {100 * mean[('spgan', 'P=1 max')]:.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
