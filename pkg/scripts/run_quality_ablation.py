#!/usr/bin/env python3
"""Reproduce the object-quality ablation table.

Generates the dataset if needed, then trains the reasoner on each object
source (detector baseline, GT boxes, GT boxes + GT embeddings, perturbed
GT boxes with and without re-pooled features) over several seeds.
"""

import argparse
import os
import sys

from vqalab.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/quality")
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)

    sets = [x for s in args.set for x in ("--set", s)]
    if not os.path.exists(os.path.join(args.data, "scenes.jsonl")):
        rc = main(["gen-data", "--out", args.data, "--seed", str(args.seed), *sets])
        if rc != 0:
            return rc
    return main(["ablate-quality", "--data", args.data, "--out", args.out, "--seed", str(args.seed), *sets])


if __name__ == "__main__":
    sys.exit(run())
