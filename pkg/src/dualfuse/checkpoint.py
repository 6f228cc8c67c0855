"""Model checkpoints: ``manifest.json`` (config + parameter layout) and ``params.bin``.

``params.bin`` is every parameter's raw little-endian float32 data,
concatenated in manifest order with no padding.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import F32LE, FORMAT_VERSION, read_exact, read_manifest
from .errors import ShapeMismatchWithManifestError
from .models import model_from_config


def save_checkpoint(model, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    named = list(model.named_parameters())
    manifest = {
        "version": FORMAT_VERSION,
        "dtype": "f32le",
        "model": model.config(),
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in named],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    blob = b"".join(np.ascontiguousarray(p.data, dtype=F32LE).tobytes() for _, p in named)
    (out / "params.bin").write_bytes(blob)
    return out


def load_checkpoint(directory):
    """Rebuild the model from its config and fill in the saved parameters."""
    src = Path(directory)
    m = read_manifest(src / "manifest.json", ("model", "parameters"))
    model = model_from_config(m["model"])
    expected = [(n, tuple(p.shape)) for n, p in model.named_parameters()]
    listed = [(e["name"], tuple(e["shape"])) for e in m["parameters"]]
    if listed != expected:
        raise ShapeMismatchWithManifestError("parameter layout in manifest does not match the model config")
    total = sum(int(np.prod(s)) for _, s in listed)
    flat = read_exact(src / "params.bin", F32LE, total)
    state, offset = {}, 0
    for name, shape in listed:
        size = int(np.prod(shape))
        state[name] = flat[offset:offset + size].reshape(shape).astype(np.float32)
        offset += size
    model.load_state_dict(state)
    return model
