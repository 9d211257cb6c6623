"""Plot-ready tables from a finished experiment directory.

Writes into <dir>/figures/:
    best_vs_t.csv          mean best value (and SE) per iteration, one column pair per cell
    best_vs_kappa.csv      terminal mean best value per population size
    mse_vs_t.csv           mean squared error of the bias weights per iteration (needs a partition and oracle)
    log_re_vs_log_kappa.csv  log relative efficiency against log population size (needs diagnostics.csv)

Usage: python scripts/figure_data.py runs/<experiment>
"""

import argparse
import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from pisaa.cli import cell_oracle
from pisaa.config import validate_config
from pisaa.diagnostics import OracleUnsupported, theta_mse
from pisaa.engine import read_trace_csv
from pisaa.schedules import desired_probability


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(path)


def label(mode, kappa, beta):
    return f"{mode}_k{kappa}_b{beta}"


def best_vs_t(directory, out):
    cols, series = {}, defaultdict(dict)
    for r in read_rows(directory / "summary.csv"):
        if r["statistic"] in ("best_mean", "best_se"):
            key = label(r["mode"], r["kappa"], r["beta"])
            cols[key] = None
            series[int(float(r["t"]))][(key, r["statistic"])] = r["value"]
    header = ["t"] + [f"{k}_{s}" for k in cols for s in ("mean", "se")]
    rows = [[t] + [series[t].get((k, f"best_{s}"), "") for k in cols for s in ("mean", "se")]
            for t in sorted(series)]
    write(out / "best_vs_t.csv", header, rows)


def best_vs_kappa(directory, out):
    rows = [[r["mode"], r["beta"], r["kappa"], r["mean"], r["se"]] for r in read_rows(directory / "terminal.csv")]
    write(out / "best_vs_kappa.csv", ["mode", "beta", "kappa", "mean", "se"], rows)


def mse_vs_t(directory, spec, manifest, out):
    if spec.partition() is None:
        return
    by_cell = defaultdict(list)
    for e in manifest["replicates"]:
        if e["status"] == "ok" and e["mode"] != "sa":
            by_cell[(e["mode"], e["kappa"], e["beta"])].append(e)
    rows = []
    for cell in spec.cells():
        entries = by_cell.get(cell.key)
        if not entries:
            continue
        try:
            oracle = cell_oracle(spec, cell)
        except OracleUnsupported as exc:
            print(f"no oracle: {exc}")
            return
        pi = desired_probability(spec.settings["lam"], oracle.m)
        per_t = defaultdict(list)
        for e in entries:
            c = read_trace_csv(directory / e["trace"])
            names = sorted((k for k in c if k.startswith("theta_")), key=lambda k: int(k.split("_")[1]))
            theta = np.column_stack([c[k] for k in names])
            for t, th in zip(c["t"], theta):
                if t > 0 and np.all(np.isfinite(th)):
                    per_t[int(t)].append(theta_mse(th, oracle, normalization=spec.settings["normalization"], pi=pi))
        for t in sorted(per_t):
            v = np.array(per_t[t])
            se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else math.nan
            rows.append([cell.mode, cell.kappa, cell.beta, t, v.mean(), se])
    write(out / "mse_vs_t.csv", ["mode", "kappa", "beta", "t", "mse_mean", "mse_se"], rows)


def log_re(directory, out):
    path = directory / "diagnostics.csv"
    if not path.exists():
        return
    rows = [[r["mode"], r["beta"], r["kappa"], math.log(int(r["kappa"])), math.log(float(r["value"]))]
            for r in read_rows(path) if r["statistic"] == "re" and float(r["value"]) > 0]
    write(out / "log_re_vs_log_kappa.csv", ["mode", "beta", "kappa", "log_kappa", "log_re"], rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("directory", type=Path)
    args = ap.parse_args()
    manifest = json.loads((args.directory / "manifest.json").read_text())
    spec = validate_config(manifest["spec"])
    out = args.directory / "figures"
    out.mkdir(exist_ok=True)
    best_vs_t(args.directory, out)
    best_vs_kappa(args.directory, out)
    mse_vs_t(args.directory, spec, manifest, out)
    log_re(args.directory, out)


if __name__ == "__main__":
    main()
