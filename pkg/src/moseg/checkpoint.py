"""Versioned checkpoint container.

A checkpoint is a ZIP archive holding:
    manifest.json  format version, model config, optional train config/extra,
                   and an index mapping parameter path -> shape/offset/nbytes
    params.bin     all tensors concatenated as little-endian float32

The index preserves state-dict order, so loading is a single sequential read.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .fusioncore import FusionConfig, TwoStreamSegmenter

FORMAT_VERSION = 1


def save_checkpoint(
    path,
    model,
    config: FusionConfig,
    train_config: dict | None = None,
    extra: dict | None = None,
    extra_tensors: dict | None = None,
) -> None:
    """extra_tensors: auxiliary named tensors (e.g. optimizer moments) stored
    alongside the model parameters; names must not collide with them."""
    index = []
    payload = io.BytesIO()
    offset = 0
    model_state = model.state_dict()
    entries = [(name, tensor, "model") for name, tensor in model_state.items()]
    for name, tensor in (extra_tensors or {}).items():
        if name in model_state:
            raise ValueError(f"extra tensor name collides with a parameter: {name}")
        entries.append((name, tensor, "aux"))
    for name, tensor, kind in entries:
        arr = tensor.detach().cpu().numpy().astype("<f4")
        data = arr.tobytes()
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
                "kind": kind,
            }
        )
        payload.write(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": config.to_dict(),
        "train_config": train_config,
        "extra": extra or {},
        "params": index,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        zf.writestr("params.bin", payload.getvalue())


def read_manifest(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {manifest.get('format_version')}")
    return manifest


def load_state_dict(path) -> tuple:
    """Returns (manifest, state_dict of float32 tensors)."""
    manifest = read_manifest(path)
    with zipfile.ZipFile(path) as zf:
        blob = zf.read("params.bin")
    state = {}
    for entry in manifest["params"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start : start + n], dtype="<f4").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    return manifest, state


def split_aux_tensors(manifest: dict, state: dict) -> tuple:
    """Split a loaded state into (model tensors, auxiliary tensors)."""
    aux_names = {e["name"] for e in manifest["params"] if e.get("kind", "model") == "aux"}
    model_state = {k: v for k, v in state.items() if k not in aux_names}
    aux = {k: v for k, v in state.items() if k in aux_names}
    return model_state, aux


def load_checkpoint(path) -> tuple:
    """Rebuild the model from its stored config; returns (model, manifest)."""
    manifest, state = load_state_dict(path)
    model_state, _ = split_aux_tensors(manifest, state)
    config = FusionConfig.from_dict(manifest["model_config"])
    model = TwoStreamSegmenter(config)
    model.load_state_dict(model_state)
    return model, manifest


def transfer_matching(model, state: dict) -> tuple:
    """Copy parameters whose name and shape both match; returns
    (copied names, skipped names)."""
    own = model.state_dict()
    copied, skipped = [], []
    for name, tensor in state.items():
        if name in own and tuple(own[name].shape) == tuple(tensor.shape):
            own[name].copy_(tensor)
            copied.append(name)
        else:
            skipped.append(name)
    return copied, skipped
