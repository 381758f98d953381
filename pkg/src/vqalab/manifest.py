"""Run manifests: enough to reproduce any output directory byte-for-byte."""

from __future__ import annotations

import hashlib
import json
import os

from .config import TOOL_VERSION, Config, to_dict


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: str,
    command: str,
    cfg: Config,
    seed: int,
    inputs: list[str],
    outputs: list[str],
    wall_time: float,
    extra_args: dict | None = None,
) -> str:
    manifest = {
        "tool_version": TOOL_VERSION,
        "command": command,
        "config": to_dict(cfg),
        "seed": seed,
        "args": extra_args or {},
        "input_hashes": {os.path.basename(p): file_sha256(p) for p in inputs},
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
        "output_hashes": {os.path.relpath(p, out_dir): file_sha256(p) for p in sorted(outputs)},
        "wall_time_s": round(wall_time, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
    return path


def read_manifest(path: str) -> dict:
    with open(path) as f:
        return json.load(f)
