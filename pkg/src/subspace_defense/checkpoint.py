"""Versioned JSON checkpoints for DefenseNet."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .io import atomic_write_text
from .net import Architecture, DefenseNet, _layer_shapes

SCHEMA = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt or unsupported checkpoint."""


def _payload(net: DefenseNet) -> dict:
    return {
        "architecture": net.arch.to_dict(),
        "seed": net.seed,
        "params": {k: net.params[k].tolist() for k in sorted(net.params)},
    }


def _digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def checkpoint_text(net: DefenseNet) -> str:
    payload = _payload(net)
    doc = {"schema": SCHEMA, "sha256": _digest(payload), **payload}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(net: DefenseNet, path: str | Path) -> Path:
    return atomic_write_text(path, checkpoint_text(net))


def parse_checkpoint(text: str, source: str = "<checkpoint>") -> DefenseNet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{source}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"{source}: top level must be an object")
    if "schema" not in doc:
        raise CheckpointError(f"{source}: unsupported checkpoint schema (no 'schema' field)")
    if doc["schema"] != SCHEMA:
        raise CheckpointError(f"{source}: unsupported checkpoint schema {doc['schema']!r}, expected {SCHEMA}")
    missing = {"sha256", "architecture", "seed", "params"} - doc.keys()
    if missing:
        raise CheckpointError(f"{source}: missing fields {sorted(missing)}")
    payload = {k: doc[k] for k in ("architecture", "seed", "params")}
    if _digest(payload) != doc["sha256"]:
        raise CheckpointError(f"{source}: checksum mismatch, file is corrupt")
    try:
        arch_d = dict(payload["architecture"])
        arch_d["hidden"] = tuple(arch_d["hidden"])
        arch = Architecture(**arch_d)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{source}: bad architecture: {exc}") from None
    shapes = _layer_shapes(arch)
    if set(shapes) != set(payload["params"]):
        raise CheckpointError(f"{source}: parameter names do not match the architecture")
    params = {}
    for name, shape in shapes.items():
        arr = np.array(payload["params"][name], dtype=np.float64)
        if arr.shape != shape:
            raise CheckpointError(f"{source}: {name} has shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{source}: {name} contains non-finite values")
        params[name] = arr
    return DefenseNet(arch=arch, params=params, seed=payload["seed"])


def load_checkpoint(path: str | Path) -> DefenseNet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from None
    return parse_checkpoint(text, str(path))
