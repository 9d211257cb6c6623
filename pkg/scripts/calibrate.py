"""Report the proposal scales and acceptance rates the pilot phase settles on.

Runs one replicate per population size with the budget cut to the pilot alone and
prints, per operator, the tuned variance and the mean acceptance over the last
pilot batches (the target is 0.234). Useful for checking a new problem or grid
before launching a long sweep.

Usage: python scripts/calibrate.py configs/rastrigin_kappa_sweep.yaml [--n 20000]
"""

import argparse
from dataclasses import replace

from pisaa.config import validate_config
from pisaa.engine import run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--n", type=int, default=None, help="iteration budget for the calibration run")
    args = ap.parse_args()
    spec = validate_config(args.config)
    seen = set()
    for cell in spec.cells():
        if cell.kappa in seen or cell.mode != "pisaa":
            continue
        seen.add(cell.kappa)
        cfg = spec.run_config(cell, 0)
        if args.n is not None:
            cfg = replace(cfg, n=args.n)
        trace = run(cfg)
        print(f"kappa={cell.kappa}")
        for op in sorted(trace.scales):
            acc = trace.pilot.get(op, float("nan"))
            print(f"  {op:5s} var={trace.scales[op]:.4g} acceptance={acc:.3f}")


if __name__ == "__main__":
    main()
