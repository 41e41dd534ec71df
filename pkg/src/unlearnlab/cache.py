"""On-disk store for pretrained models: ``<root>/<config-hash>/seed<k>.model``.

A blob is a magic line, one JSON header line and the raw little-endian
float64 parameters. The header carries a SHA-256 of the payload so a
damaged file raises instead of being silently retrained.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .nn import ModelParams

MAGIC = b"UNLEARNLAB-MODEL\n"
VERSION = 1


class CacheIntegrityError(RuntimeError):
    pass


def save_model(params: ModelParams, path, config_hash: str = "") -> None:
    payload = params.values.astype("<f8").tobytes()
    header = {
        "version": VERSION,
        "layer_shapes": [list(s) for s in params.layer_shapes],
        "config_hash": config_hash,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def load_model(path, config_hash: str | None = None) -> ModelParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CacheIntegrityError(f"{path}: not a model blob")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    try:
        header = json.loads(rest[:nl])
    except ValueError as exc:
        raise CacheIntegrityError(f"{path}: unreadable header") from exc
    payload = rest[nl + 1:]
    if header.get("version") != VERSION:
        raise CacheIntegrityError(f"{path}: unsupported version {header.get('version')}")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CacheIntegrityError(f"{path}: checksum mismatch")
    if config_hash is not None and header.get("config_hash") != config_hash:
        raise CacheIntegrityError(
            f"{path}: written for config {header.get('config_hash')}, expected {config_hash}"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        return ModelParams([tuple(s) for s in header["layer_shapes"]], values)
    except ValueError as exc:
        raise CacheIntegrityError(f"{path}: {exc}") from exc


class ModelCache:
    def __init__(self, root, config_hash: str):
        self.root = Path(root)
        self.config_hash = config_hash

    def path(self, seed: int) -> Path:
        return self.root / self.config_hash / f"seed{seed}.model"

    def has(self, seed: int) -> bool:
        return self.path(seed).exists()

    def load(self, seed: int) -> ModelParams:
        return load_model(self.path(seed), self.config_hash)

    def save(self, seed: int, params: ModelParams) -> Path:
        p = self.path(seed)
        save_model(params, p, self.config_hash)
        return p
