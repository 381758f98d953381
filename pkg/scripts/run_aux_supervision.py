#!/usr/bin/env python3
"""Reproduce the necessity-supervision study.

Trains the reasoner with and without the auxiliary necessity head on paired
seeds (identical batch order) and reports per-seed accuracy deltas and the
necessity-head AUC.
"""

import argparse
import os
import sys

from vqalab.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/aux")
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)

    sets = [x for s in args.set for x in ("--set", s)]
    if not os.path.exists(os.path.join(args.data, "scenes.jsonl")):
        rc = main(["gen-data", "--out", args.data, "--seed", str(args.seed), *sets])
        if rc != 0:
            return rc
    return main(["ablate-aux", "--data", args.data, "--out", args.out, "--seed", str(args.seed), *sets])


if __name__ == "__main__":
    sys.exit(run())
