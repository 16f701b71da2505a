#!/usr/bin/env python3
"""Plot median RMSE and per-step MI with 1-sigma bands from `prefelicit benchmark` output."""

import argparse
import csv
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

EXPECTED = ["step", "runs", "rmse_median", "rmse_lo", "rmse_hi", "mi_runs", "mi_median", "mi_lo", "mi_hi"]


def num(s):
    return float(s) if s else math.nan


def load(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != EXPECTED:
            raise SystemExit(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    cols = {k: [num(r[k]) for r in rows] for k in EXPECTED}
    return cols


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", help="benchmark.csv written by `prefelicit benchmark`")
    ap.add_argument("-o", "--out", default="benchmark.png")
    args = ap.parse_args()

    c = load(args.csv)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    ax1.plot(c["step"], c["rmse_median"], color="C0")
    ax1.fill_between(c["step"], c["rmse_lo"], c["rmse_hi"], color="C0", alpha=0.25)
    ax1.set(xlabel="interaction", ylabel="RMSE (theta domain)", title="Estimate error")
    ax2.plot(c["step"], c["mi_median"], color="C1")
    ax2.fill_between(c["step"], c["mi_lo"], c["mi_hi"], color="C1", alpha=0.25)
    ax2.set(xlabel="interaction", ylabel="MI of designed trial (bits)", title="Per-step information")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
