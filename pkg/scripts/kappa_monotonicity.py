"""Mean terminal best value vs population size over many seeds on 10-d Rastrigin.

Checks that the mean best value is non-increasing in kappa up to one standard
error of the difference, and writes the table through the normal CLI layout.
The default 48 replicates at n=2e5 take on the order of an hour on one core;
use --workers to spread replicates over processes.

Usage: python scripts/kappa_monotonicity.py [--replicates 48] [--workers 8] [-o runs/kappa48]
"""

import argparse
import csv
import math
from pathlib import Path

from pisaa.cli import run_experiment
from pisaa.config import validate_config

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "rastrigin_kappa_sweep.yaml"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--replicates", type=int, default=48)
    ap.add_argument("--n", type=int, default=None)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("-o", "--output", default="runs/kappa_monotonicity")
    args = ap.parse_args()
    overrides = {"replicates": args.replicates}
    if args.n is not None:
        overrides["n"] = args.n
    spec = validate_config(args.config).with_overrides(**overrides)
    code = run_experiment(spec, args.output, workers=args.workers)
    with open(Path(args.output) / "terminal.csv", newline="") as fh:
        rows = sorted((r for r in csv.DictReader(fh) if r["mode"] == "pisaa"), key=lambda r: int(r["kappa"]))
    ok = True
    for prev, cur in zip(rows, rows[1:]):
        slack = math.hypot(float(prev["se"]), float(cur["se"]))
        step = float(cur["mean"]) <= float(prev["mean"]) + slack
        ok &= step
        print(f"kappa {prev['kappa']:>3} -> {cur['kappa']:>3}: {float(prev['mean']):.4g} -> {float(cur['mean']):.4g}"
              f" (slack {slack:.3g}) {'ok' if step else 'VIOLATED'}")
    print("non-increasing within one SE" if ok else "monotonicity violated")
    return code or (0 if ok else 1)


if __name__ == "__main__":
    raise SystemExit(main())
