"""Checkpoint container.

A checkpoint is a directory holding:

- ``manifest.json``: schema version, model config, epoch counter, a
  manifest of tensor names/shapes/dtypes, optimizer bookkeeping, the
  resolved loss weights, and the EER operating thresholds when an
  evaluation has produced them;
- ``tensors.npz``: the model parameters, bit-exact float32;
- ``optimizer.npz``: optimizer state tensors (present when saved with an
  optimizer).

Loading restores parameters bit-identically, so a save/load round trip
does not change the forward pass.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .model import ComplianceNet, ModelConfig, build_model
from .types import DataError

SCHEMA_VERSION = 1


@dataclass
class LoadedCheckpoint:
    model: ComplianceNet
    epoch: int
    optimizer_state: Optional[dict]
    train_config: Optional[dict]
    weights: Optional[dict]  # lambda_r / beta_r / lambda_m arrays
    thresholds: Optional[np.ndarray]
    path: str


def _optimizer_payload(optimizer: torch.optim.Optimizer):
    sd = optimizer.state_dict()
    arrays: dict[str, np.ndarray] = {}
    scalars: dict[str, dict] = {}
    for pid, fields in sd["state"].items():
        scalars[str(pid)] = {}
        for name, value in fields.items():
            if isinstance(value, torch.Tensor):
                arrays[f"{pid}.{name}"] = value.detach().cpu().numpy()
            else:
                scalars[str(pid)][name] = value
    meta = {"param_groups": sd["param_groups"], "state_scalars": scalars}
    return meta, arrays


def _restore_optimizer_state(meta: dict, arrays: dict) -> dict:
    state: dict[int, dict] = {}
    for key, arr in arrays.items():
        pid_str, name = key.split(".", 1)
        state.setdefault(int(pid_str), {})[name] = torch.from_numpy(arr.copy())
    for pid_str, fields in meta.get("state_scalars", {}).items():
        state.setdefault(int(pid_str), {}).update(fields)
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(
    path: str | os.PathLike,
    model: ComplianceNet,
    epoch: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
    train_config: Optional[dict] = None,
    weights: Optional[dict] = None,
    thresholds: Optional[np.ndarray] = None,
) -> str:
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)

    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(os.path.join(path, "tensors.npz"), **tensors)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "model_config": model.config.to_dict(),
        "epoch": int(epoch),
        "tensors": [
            {"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in tensors.items()
        ],
        "optimizer": None,
        "train_config": train_config,
        "weights": {k: np.asarray(v).tolist() for k, v in weights.items()}
        if weights
        else None,
        "thresholds": np.asarray(thresholds).tolist() if thresholds is not None else None,
    }
    if optimizer is not None:
        meta, arrays = _optimizer_payload(optimizer)
        manifest["optimizer"] = meta
        np.savez(os.path.join(path, "optimizer.npz"), **arrays)

    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def update_checkpoint_thresholds(path: str | os.PathLike, thresholds: np.ndarray) -> None:
    """Record EER operating thresholds in an existing checkpoint."""
    manifest_path = os.path.join(os.fspath(path), "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    manifest["thresholds"] = np.asarray(thresholds, dtype=np.float64).tolist()
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(path: str | os.PathLike) -> LoadedCheckpoint:
    path = os.fspath(path)
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"not a checkpoint directory (no manifest.json): {path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(
            f"checkpoint schema-version mismatch: file has {version!r}, "
            f"this library reads {SCHEMA_VERSION}"
        )

    model = build_model(ModelConfig.from_dict(manifest["model_config"]))
    with np.load(os.path.join(path, "tensors.npz")) as data:
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files}
    declared = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
    for name, tensor in state.items():
        if name not in declared or tuple(tensor.shape) != declared[name]:
            raise DataError(f"tensor {name!r} does not match the checkpoint manifest")
    model.load_state_dict(state)

    optimizer_state = None
    if manifest.get("optimizer") is not None:
        with np.load(os.path.join(path, "optimizer.npz")) as data:
            arrays = {k: data[k].copy() for k in data.files}
        optimizer_state = _restore_optimizer_state(manifest["optimizer"], arrays)

    thresholds = None
    if manifest.get("thresholds") is not None:
        thresholds = np.asarray(manifest["thresholds"], dtype=np.float64)
        model.default_thresholds = thresholds

    weights = None
    if manifest.get("weights") is not None:
        weights = {
            k: np.asarray(v, dtype=np.float64) for k, v in manifest["weights"].items()
        }

    return LoadedCheckpoint(
        model=model,
        epoch=int(manifest.get("epoch", 0)),
        optimizer_state=optimizer_state,
        train_config=manifest.get("train_config"),
        weights=weights,
        thresholds=thresholds,
        path=path,
    )
