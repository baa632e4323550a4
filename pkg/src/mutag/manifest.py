"""Run manifest: config hash, seed, and content digests per stage.

The manifest records everything needed to check that a re-run reproduced
a stage byte for byte.  Wall-clock timings are stored for bookkeeping
but are explicitly outside the reproducibility contract.
"""
from __future__ import annotations

import hashlib
import json
import os

from . import __version__

MANIFEST_NAME = "manifest.json"


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(out_dir: str) -> dict:
    path = os.path.join(out_dir, MANIFEST_NAME)
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {"tool": "mutag", "version": __version__, "stages": {}}


def record_stage(out_dir: str, stage: str, config_hash: str, seed: int,
                 inputs: list[str], outputs: list[str], elapsed_s: float,
                 **extra) -> dict:
    """Add or replace one stage entry and write the manifest back."""
    manifest = load_manifest(out_dir)
    manifest["stages"][stage] = {
        "config_hash": config_hash,
        "seed": seed,
        "inputs": {os.path.basename(p): file_digest(p) for p in inputs},
        "outputs": {os.path.basename(p): file_digest(p) for p in outputs},
        "elapsed_s": round(elapsed_s, 3),
        **extra,
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
