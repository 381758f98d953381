"""Versioned decimal-text checkpoints: diffable, platform-independent.

Format: a header line, then per tensor a `name shape...` line followed by
one line of %.17g values. %.17g round-trips float64 exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .autodiff import Node

HEADER = "vqalab-checkpoint v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(params: dict[str, Node], path: str):
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(HEADER + "\n")
        for name in sorted(params):
            v = params[name].value
            f.write(name + " " + " ".join(str(d) for d in v.shape) + "\n")
            f.write(" ".join("%.17g" % x for x in v.reshape(-1)) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path: str, expected_shapes: dict[str, tuple] | None = None) -> dict[str, Node]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != HEADER:
        raise CheckpointError(f"{path}: bad or missing header")
    params: dict[str, Node] = {}
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if i + 1 >= len(lines):
            raise CheckpointError(f"{path}: truncated after tensor header '{lines[i]}'")
        head = lines[i].split()
        name, shape = head[0], tuple(int(d) for d in head[1:])
        values = np.array([float(x) for x in lines[i + 1].split()])
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(f"{path}: tensor '{name}' has {values.size} values, shape {shape} needs {expected}")
        params[name] = Node(values.reshape(shape))
        i += 2
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in params:
                raise CheckpointError(f"{path}: missing tensor '{name}'")
            if params[name].value.shape != tuple(shape):
                raise CheckpointError(
                    f"{path}: tensor '{name}' shape {params[name].value.shape} != expected {tuple(shape)}"
                )
        extra = set(params) - set(expected_shapes)
        if extra:
            raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)}")
    return params
