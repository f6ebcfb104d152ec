"""Bit-exact model persistence.

A checkpoint is a JSON document carrying a schema version, the model spec,
the parameter and mask vectors as hexadecimal floats (``float.hex``), a
decimal mirror of the parameters for humans, metadata, and a SHA-256 digest
of the hex payload so corrupted files are refused.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .network import Model, ModelSpec

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _digest(params_hex, mask_hex) -> str:
    h = hashlib.sha256()
    h.update("\n".join(params_hex).encode())
    h.update(b"|")
    h.update("\n".join(mask_hex).encode())
    return h.hexdigest()


def checkpoint_document(model: Model) -> dict:
    ph = [float(v).hex() for v in model.params]
    mh = [float(v).hex() for v in model.mask]
    return {
        "schema_version": SCHEMA_VERSION,
        "spec": model.spec.to_dict(),
        "n_params": int(model.params.size),
        "params_hex": ph,
        "mask_hex": mh,
        "params_decimal": [repr(float(v)) for v in model.params],
        "meta": _jsonable(model.meta),
        "sha256": _digest(ph, mh),
    }


def save_checkpoint(model: Model, path) -> Path:
    """Write atomically (temporary file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(checkpoint_document(model), fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def model_from_document(doc: dict) -> Model:
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise CheckpointError("not a checkpoint: missing schema_version")
    ver = doc["schema_version"]
    if ver != SCHEMA_VERSION:
        raise CheckpointError(
            f"checkpoint schema version {ver} is not supported; this build reads version {SCHEMA_VERSION}"
        )
    try:
        ph, mh = doc["params_hex"], doc["mask_hex"]
        if _digest(ph, mh) != doc["sha256"]:
            raise CheckpointError("checkpoint digest mismatch: parameter payload is corrupt")
        params = np.array([float.fromhex(v) for v in ph])
        mask = np.array([float.fromhex(v) for v in mh])
        if params.size != doc["n_params"]:
            raise CheckpointError(f"expected {doc['n_params']} parameters, found {params.size}")
        return Model(ModelSpec.from_dict(doc["spec"]), params, mask, doc.get("meta", {}))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path) -> Model:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return model_from_document(doc)
