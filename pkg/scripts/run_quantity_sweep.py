#!/usr/bin/env python3
"""Reproduce the object-budget sweep: accuracy vs top-k over many seeds.

Writes sweep.csv, sweep.json and an error-bar curve sweep.svg.
"""

import argparse
import os
import sys

from vqalab.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ks", default=None, help="comma-separated budgets, e.g. 1,2,4,8")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)

    sets = [x for s in args.set for x in ("--set", s)]
    if not os.path.exists(os.path.join(args.data, "scenes.jsonl")):
        rc = main(["gen-data", "--out", args.data, "--seed", str(args.seed), *sets])
        if rc != 0:
            return rc
    cmd = ["sweep", "--data", args.data, "--out", args.out, "--seed", str(args.seed), *sets]
    if args.ks:
        cmd += ["--ks", args.ks]
    return main(cmd)


if __name__ == "__main__":
    sys.exit(run())
