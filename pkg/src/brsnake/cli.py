"""Command-line front end.

Usage: brsnake SUBCOMMAND [--config FILE] [--n N] [--replicates R]
               [--seed S] [--out DIR] [--workers W] [-v]

Subcommands: survival, branching-mp, snake, reversal, occupation, functional,
brox, theorem1, all.  Exit code 0 when every pass-class check passes, 1 when
any fails, 2 on usage errors.

Config files are flat INI: one [section] per experiment plus optional
[common]; keys mirror the CLI flags (n, replicates, seed, workers) and the
per-experiment parameters (floats, ints, or comma lists).  CLI flags win over
the config file; built-in defaults apply otherwise.  BRSNAKE_WORKERS sets the
default worker count.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .harness import (
    KNOWN_EXPERIMENTS,
    ExperimentSpec,
    ValidationError,
    bundle_to_json,
    run_experiment,
)

_INT_KEYS = {"n", "replicates", "seed", "workers", "runs", "ks_n", "ks_k1",
             "ks_runs", "critical_kmax", "n_mc", "target_runs", "tanaka_runs",
             "sigma_reps", "embed_reps", "corollary_n"}
_FLOAT_KEYS = {"delta", "k1", "c0", "t_end", "r", "sigma_t"}
_LIST_KEYS = {"n_list", "t_list", "n_sequence", "sigma_n", "embed_n"}


def _coerce(key: str, raw: str):
    key = key.lower()
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _LIST_KEYS:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        vals = [float(s) if "." in s else int(s) for s in items]
        return tuple(vals)
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_config(path: Path) -> dict:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValidationError(f"config: cannot read {path}")
    out = {}
    for section in cp.sections():
        out[section] = {k: _coerce(k, v) for k, v in cp.items(section)}
    return out


def build_spec(experiment: str, args, config: dict) -> ExperimentSpec:
    merged = dict(config.get("common", {}))
    merged.update(config.get(experiment, {}))
    for key in ("n", "replicates", "seed", "workers"):
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            merged[key] = v
    core = {}
    for key in ("n", "replicates", "seed", "workers"):
        if key in merged:
            core[key] = merged.pop(key)
    n_list = merged.pop("n_list", ())
    default_workers = int(os.environ.get("BRSNAKE_WORKERS", "1"))
    spec = ExperimentSpec(
        experiment=experiment,
        seed=int(core.get("seed", 1)),
        replicates=int(core.get("replicates", 2000)),
        n=core.get("n"),
        n_list=tuple(n_list) if n_list else (),
        workers=int(core.get("workers", default_workers)),
        params=merged,
    )
    return spec.validate()


def write_outputs(out_dir: Path, experiment: str, spec: ExperimentSpec,
                  bundle: dict, wall: float) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    run_dir = out_dir / experiment / stamp
    run_dir.mkdir(parents=True, exist_ok=True)
    summary = bundle_to_json(bundle)
    (run_dir / "summary.json").write_text(summary)
    cfg_payload = {
        "experiment": spec.experiment,
        "seed": spec.seed,
        "replicates": spec.replicates,
        "n": spec.n,
        "n_list": list(spec.n_list),
        "workers": spec.workers,
        "params": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in spec.params.items()},
    }
    cfg_text = json.dumps(cfg_payload, sort_keys=True)
    manifest = {
        "config": cfg_payload,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "versions": {
            "brsnake": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "wall_seconds": wall,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    rows = [s.as_row() for s in bundle["summaries"]]
    with open(run_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "value", "stderr", "target", "tolerance",
                    "verdict", "note"])
        w.writerows(rows)
    for name, (header, trows) in bundle.get("tables", {}).items():
        with open(run_dir / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(trows)
    return run_dir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="brsnake",
        description="Branching particles, discrete snakes, and their "
        "verification experiments.",
    )
    sub = parser.add_subparsers(dest="experiment")
    for name in list(KNOWN_EXPERIMENTS) + ["all"]:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)
    if args.experiment is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        config = load_config(args.config) if args.config else {}
        names = list(KNOWN_EXPERIMENTS) if args.experiment == "all" else [args.experiment]
        all_ok = True
        for name in names:
            spec = build_spec(name, args, config)
            t0 = time.time()
            bundle = run_experiment(spec)
            wall = time.time() - t0
            run_dir = write_outputs(args.out, name, spec, bundle, wall)
            for s in bundle["summaries"]:
                ok = s.verdict != "fail"
                all_ok &= ok
                line = f"[{s.verdict:>13s}] {name}: {s.name} = {s.value:.6g}"
                if args.verbose or s.verdict == "fail":
                    line += f"  (target {s.target:.6g}, {s.tolerance}) {s.note}"
                print(line)
            print(f"{name}: wrote {run_dir} ({wall:.1f}s)")
        return 0 if all_ok else 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
