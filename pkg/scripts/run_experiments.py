"""Run every config under experiments/ with the matching subcommand.

    python3 scripts/run_experiments.py --out results [--jobs 4] [name ...]

The subcommand is inferred from the config: a [study] section means
``converge``, a [sweep] section ``bifurcate``, a method list ``compare``,
anything else ``solve``.
"""

import argparse
import configparser
import sys
import time
from pathlib import Path

from enrichqc.cli import main

ROOT = Path(__file__).resolve().parents[1]


def subcommand(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path)
    if cp.has_section("study"):
        return "converge"
    if cp.has_section("sweep"):
        return "bifurcate"
    if cp.has_option("method", "methods"):
        return "compare"
    return "solve"


def run():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="config stems to run (default: all)")
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    configs = sorted((ROOT / "experiments").glob("*.ini"))
    if args.names:
        configs = [c for c in configs if c.stem in args.names]
    failed = []
    for cfg in configs:
        cmd = subcommand(cfg)
        print(f"== {cfg.stem} ({cmd})", flush=True)
        t0 = time.perf_counter()
        argv = [cmd, "--config", str(cfg), "--out", args.out]
        if cmd in ("converge", "compare"):
            argv += ["--jobs", str(args.jobs)]
        rc = main(argv)
        print(f"   exit {rc} in {time.perf_counter() - t0:.1f} s", flush=True)
        if rc:
            failed.append(cfg.stem)
    if failed:
        print("failed:", ", ".join(failed))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(run())
