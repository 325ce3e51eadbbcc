"""Content hashes that stamp every artifact (configs, data, weights)."""

import hashlib
import json
from pathlib import Path
from typing import Any

import torch
from pydantic import BaseModel


def canonical_json(obj: BaseModel | dict[str, Any]) -> str:
    data = obj.model_dump(mode="json") if isinstance(obj, BaseModel) else obj
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(obj: BaseModel | dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def bytes_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def weights_hash(module: torch.nn.Module) -> str:
    """Hash of every parameter and buffer, in sorted key order."""
    h = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        h.update(key.encode())
        h.update(str(tuple(tensor.shape)).encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
