"""Command-line harness: run, validate, oracle, summarize, resume.

Layout of an experiment directory::

    manifest.json        spec, config hash, seeds, versions, per-replicate status
    traces/<stem>.csv    one trace per (mode, kappa, beta, replicate)
    summary.csv          tidy per-iteration best-energy statistics per cell
    terminal.csv         terminal best value per cell (best value vs kappa)
    diagnostics.csv      bias-weight error and relative efficiency (with an oracle)
    oracle/              oracle weights used by diagnostics.csv
    checkpoints/         resumable snapshots when checkpoint_every is set

Every file except checkpoints depends only on the validated spec, so reruns
(at any worker count) reproduce them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .config import ORACLE_DEFAULTS, Cell, ConfigError, ExperimentSpec, validate_config
from .diagnostics import (OracleUnsupported, loglog_slope, oracle_weights, relative_efficiency,
                          summarize_replicates, theta_mse, write_tidy_csv)
from .engine import Runner, config_dict, read_trace_csv, run
from .problems import make_problem
from .schedules import desired_probability, temperature_at

log = logging.getLogger("pisaa")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3
MANIFEST_FORMAT = 1


# ------------------------------------------------------------------ workers

def _run_job(job):
    """Run one replicate; returns ``(stem, trace or None, error or None)``."""
    stem, cfg, ckpt, every = job
    try:
        if ckpt is not None and cfg.mode != "psaa":
            ckpt = Path(ckpt)
            runner = Runner.from_checkpoint(ckpt) if ckpt.exists() else Runner(cfg)
            if config_dict(runner.cfg) != config_dict(cfg):
                runner = Runner(cfg)
            trace = runner.run(checkpoint_path=ckpt, checkpoint_every=every)
        else:
            trace = run(cfg)
        return stem, trace, None
    except Exception as exc:  # recorded per replicate, never fatal for the experiment
        return stem, None, f"{type(exc).__name__}: {exc}"


def _versions() -> dict:
    out = {"pisaa": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "numba", "PyYAML"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# ------------------------------------------------------------------ run

def run_experiment(spec: ExperimentSpec, output=None, workers=None) -> int:
    """Run every (mode, kappa, beta, replicate) job and write all artifacts; returns an exit code."""
    out = Path(output) if output is not None else spec.output_dir()
    workers = spec.workers if workers is None else workers
    (out / "traces").mkdir(parents=True, exist_ok=True)
    every = spec.checkpoint_every
    if every:
        (out / "checkpoints").mkdir(exist_ok=True)

    jobs, entries = [], {}
    for cell in spec.cells():
        for r in range(spec.replicates):
            stem = cell.stem(r)
            cfg = spec.run_config(cell, r)
            ckpt = str(out / "checkpoints" / f"{stem}.ckpt") if every else None
            jobs.append((stem, cfg, ckpt, every))
            entries[stem] = {"mode": cell.mode, "kappa": cell.kappa, "beta": cell.beta, "replicate": r,
                             "seed": cfg.seed, "iterations": cfg.n, "trace": f"traces/{stem}.csv"}

    def collect(stem, trace, error):
        # single collector: only this function touches the output directory
        e = entries[stem]
        if error is None:
            path = out / e["trace"]
            trace.to_csv(path)
            e.update(status="ok", sha256=_sha256(path))
            log.info("done %s (best %.6g)", stem, trace.final_best)
        else:
            e.update(status="failed", error=error)
            log.warning("failed %s: %s", stem, error)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_job, jobs):
                collect(*res)
    else:
        for job in jobs:
            collect(*_run_job(job))

    manifest = {
        "format": MANIFEST_FORMAT,
        "name": spec.name,
        "spec": spec.to_dict(include_execution=False),
        "config_hash": spec.config_hash(),
        "versions": _versions(),
        "replicates": [entries[j[0]] for j in jobs],
    }
    _write_json(out / "manifest.json", manifest)
    try:
        summarize_dir(out, spec)
    except (OracleUnsupported, ValueError) as exc:
        log.error("summary failed: %s", exc)
        return EXIT_RUNTIME
    return _exit_status(manifest["replicates"])


def _exit_status(entries) -> int:
    cells = defaultdict(list)
    for e in entries:
        cells[(e["mode"], e["kappa"], e["beta"])].append(e["status"] == "ok")
    dead = [k for k, ok in cells.items() if not any(ok)]
    if not dead:
        return EXIT_OK
    return EXIT_RUNTIME if len(dead) == len(cells) else EXIT_PARTIAL


# ------------------------------------------------------------------ summaries

def _load_manifest(directory):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    return json.loads(path.read_text())


def _final_theta(cols):
    names = sorted((k for k in cols if k.startswith("theta_")), key=lambda k: int(k.split("_")[1]))
    if not names:
        return None
    return np.array([cols[k][-1] for k in names])


def cell_oracle(spec: ExperimentSpec, cell: Cell):
    """Oracle weights at the temperature the cell ends on (or the configured one)."""
    s = spec.settings
    partition = spec.partition()
    opts = s["oracle"] or ORACLE_DEFAULTS
    tau = opts["tau"]
    if tau is None:
        cfg = spec.run_config(cell, 0)
        tau = temperature_at(cfg.temperature, max(cfg.n, 1))
    pi = desired_probability(s["lam"], partition.m)
    return oracle_weights(make_problem(s["problem"]), partition, pi, tau,
                          normalization=s["normalization"], tol=opts["tol"])


def write_oracle_csv(oracle, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "log_mass", "w", "nonempty"])
        for j in range(oracle.m):
            w.writerow([j + 1, repr(float(oracle.log_mass[j])), repr(float(oracle.w[j])),
                        int(oracle.nonempty[j])])


def summarize_dir(directory, spec: ExperimentSpec | None = None) -> dict:
    """(Re)write summary.csv, terminal.csv and, with an oracle, diagnostics.csv from the traces."""
    directory = Path(directory)
    manifest = _load_manifest(directory)
    spec = spec or validate_config(manifest["spec"])
    problem = spec.settings["problem"]["name"]
    by_cell = defaultdict(list)
    for e in manifest["replicates"]:
        if e["status"] == "ok":
            by_cell[(e["mode"], e["kappa"], e["beta"])].append(e)

    tidy, terminal, finals = [], [], {}
    for cell in spec.cells():
        ok = sorted(by_cell.get(cell.key, []), key=lambda e: e["replicate"])
        if not ok:
            continue
        cols = [read_trace_csv(directory / e["trace"]) for e in ok]
        summary = summarize_replicates(cols)
        tidy.extend(summary.tidy_rows(problem, cell.kappa, cell.beta, cell.mode))
        t = summary.terminal[None]
        terminal.append([problem, cell.mode, cell.kappa, cell.beta, t["n"], t["mean"], t["se"], t["min"], t["max"]])
        finals[cell.key] = [(e["replicate"], _final_theta(c)) for e, c in zip(ok, cols)]

    write_tidy_csv(tidy, directory / "summary.csv")
    with open(directory / "terminal.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["problem", "mode", "kappa", "beta", "replicates", "mean", "se", "min", "max"])
        for row in terminal:
            w.writerow([_cell_text(v) for v in row])

    result = {"cells": len(terminal)}
    if spec.oracle is not None and spec.partition() is not None:
        result["diagnostics"] = _diagnostics(directory, spec, problem, finals)
    return result


def _diagnostics(directory, spec, problem, finals):
    (directory / "oracle").mkdir(exist_ok=True)
    oracles, rows = {}, []
    for cell in spec.cells():
        if cell.key not in finals or cell.mode == "sa":
            continue
        oracle = cell_oracle(spec, cell)
        tag = repr(float(oracle.tau))
        if tag not in oracles:
            oracles[tag] = oracle
            write_oracle_csv(oracle, directory / "oracle" / f"tau{tag}.csv")
        errs = []
        for rep, th in finals[cell.key]:
            if th is None or not np.all(np.isfinite(th)):
                continue
            err = theta_mse(th, oracle, normalization=spec.settings["normalization"],
                            pi=desired_probability(spec.settings["lam"], oracle.m))
            errs.append(err)
            rows.append([problem, cell.mode, cell.kappa, cell.beta, rep, "mse", err])
        if errs:
            v = np.array(errs)
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
            rows.append([problem, cell.mode, cell.kappa, cell.beta, "", "mse_mean", float(v.mean())])
            rows.append([problem, cell.mode, cell.kappa, cell.beta, "", "mse_se", se])
    rows += _efficiency_rows(spec, problem, finals, oracles)
    with open(directory / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["problem", "mode", "kappa", "beta", "replicate", "statistic", "value"])
        for row in rows:
            w.writerow([_cell_text(v) for v in row])
    return len(rows)


def _efficiency_rows(spec, problem, finals, oracles):
    """Relative efficiency against the kappa=1 cell of the same mode and beta."""
    rows = []
    cells = spec.cells()
    for mode in dict.fromkeys(c.mode for c in cells):
        for beta in dict.fromkeys(c.beta for c in cells):
            base = Cell(mode, 1, beta)
            if mode == "sa" or base.key not in finals:
                continue
            oracle = cell_oracle(spec, base)
            single = [th for _, th in finals[base.key] if th is not None]
            ks, res, res2 = [], [], []
            for cell in cells:
                if cell.mode != mode or cell.beta != beta or cell.key not in finals:
                    continue
                multi = [th for _, th in finals[cell.key] if th is not None]
                try:
                    re = relative_efficiency(multi, single, oracle)
                    re2 = relative_efficiency(multi, single, oracle, statistic="squared")
                except ZeroDivisionError:
                    continue
                rows.append([problem, mode, cell.kappa, beta, "", "re", re])
                rows.append([problem, mode, cell.kappa, beta, "", "re_squared", re2])
                if cell.kappa > 1:
                    ks.append(cell.kappa)
                    res.append(re)
                    res2.append(re2)
            if len(ks) >= 2:
                rows.append([problem, mode, "", beta, "", "re_slope", loglog_slope(ks, res)])
                rows.append([problem, mode, "", beta, "", "re_squared_slope", loglog_slope(ks, res2)])
    return rows


def _cell_text(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ------------------------------------------------------------------ other verbs

def oracle_command(spec: ExperimentSpec, output=None) -> list:
    """Compute and store the oracle for every distinct terminal temperature of the sweep."""
    if spec.partition() is None:
        raise ConfigError(["oracle: the experiment has no energy partition"])
    out = (Path(output) if output is not None else spec.output_dir()) / "oracle"
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for cell in spec.cells():
        if cell.mode == "sa":
            continue
        oracle = cell_oracle(spec, cell)
        tag = repr(float(oracle.tau))
        if tag not in written:
            path = out / f"tau{tag}.csv"
            write_oracle_csv(oracle, path)
            written[tag] = path
            log.info("oracle at tau=%s: resolution %s, change %.2e", tag, oracle.resolution, oracle.change)
    return list(written.values())


def resume_command(checkpoint, output=None) -> Path:
    """Finish a checkpointed run and write its trace (next to an experiment's traces when possible)."""
    ckpt = Path(checkpoint)
    runner = Runner.from_checkpoint(ckpt)
    trace = runner.run()
    if output is not None:
        path = Path(output)
    elif ckpt.parent.name == "checkpoints":
        path = ckpt.parent.parent / "traces" / f"{ckpt.stem}.csv"
    else:
        path = ckpt.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(path)
    manifest_path = path.parent.parent / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        for e in manifest["replicates"]:
            if e["trace"] == f"traces/{path.name}":
                e.pop("error", None)
                e.update(status="ok", sha256=_sha256(path))
        _write_json(manifest_path, manifest)
    return path


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pisaa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment (YAML config or manifest.json)")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (default: config 'output', else "
                                          "$PISAA_OUTPUT_ROOT/<name>, else runs/<name>)")
    r.add_argument("-j", "--workers", type=int, help="parallel replicates (overrides config)")

    v = sub.add_parser("validate", help="check a config and print the normalized form")
    v.add_argument("config")

    o = sub.add_parser("oracle", help="compute and store oracle bias weights")
    o.add_argument("config")
    o.add_argument("-o", "--output")

    s = sub.add_parser("summarize", help="rebuild summary tables from an experiment directory")
    s.add_argument("directory")

    c = sub.add_parser("resume", help="finish a checkpointed replicate")
    c.add_argument("checkpoint")
    c.add_argument("-o", "--output", help="trace CSV path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            spec = validate_config(args.config)
            print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "run":
            spec = validate_config(args.config)
            if args.workers is not None and args.workers < 1:
                raise ConfigError(["workers: must be >= 1"])
            code = run_experiment(spec, args.output, args.workers)
            print(args.output or spec.output_dir())
            return code
        if args.command == "oracle":
            spec = validate_config(args.config)
            for path in oracle_command(spec, args.output):
                print(path)
            return EXIT_OK
        if args.command == "summarize":
            summarize_dir(args.directory)
            return EXIT_OK
        if args.command == "resume":
            print(resume_command(args.checkpoint, args.output))
            return EXIT_OK
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for line in exc.errors:
            print(f"  - {line}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleUnsupported as exc:
        print(f"oracle unsupported: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
