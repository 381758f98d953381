#!/usr/bin/env python3
"""Train a selector and export its object-token cross attention for one question.

Writes attention.txt (rows of attention weights with JSON annotations) and an
attention.svg heatmap.
"""

import argparse
import os
import sys

from vqalab.cli import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/attention")
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split", default="val")
    ap.add_argument("--index", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)

    sets = [x for s in args.set for x in ("--set", s)]
    if not os.path.exists(os.path.join(args.data, "scenes.jsonl")):
        rc = main(["gen-data", "--out", args.data, "--seed", str(args.seed), *sets])
        if rc != 0:
            return rc
    ckpt = os.path.join(args.out, "selector", "selector.ckpt")
    if not os.path.exists(ckpt):
        rc = main([
            "train-selector", "--data", args.data, "--out", os.path.join(args.out, "selector"),
            "--seed", str(args.seed), *sets,
        ])
        if rc != 0:
            return rc
    return main([
        "export-attention", "--data", args.data, "--out", args.out, "--seed", str(args.seed),
        "--checkpoint", ckpt, "--split", args.split, "--index", str(args.index), *sets,
    ])


if __name__ == "__main__":
    sys.exit(run())
