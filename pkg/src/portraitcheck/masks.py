"""Face-region mask stacks and their sidecar file format.

A mask set holds the 8 region maps (head coverings, hair, eyeglasses,
eyes, mouth, full face, torso, background) as H x W arrays in [0,1].
Regions may overlap; there is no per-pixel sum-to-one constraint.

Sidecar format: ``<masks_dir>/<image_id>.npz`` with a single array under
the key ``masks`` of shape (8, H, W), float32 or uint8.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .types import DataError, MASK_REGIONS, N_MASK_REGIONS


@dataclass(frozen=True)
class MaskSet:
    """8 x H x W region probabilities in [0,1], fixed region order."""

    maps: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.maps, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != N_MASK_REGIONS:
            raise DataError(f"mask set must have shape (8,H,W), got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("mask values must lie in [0,1]")
        object.__setattr__(self, "maps", arr)

    def region(self, name: str) -> np.ndarray:
        try:
            idx = MASK_REGIONS.index(name)
        except ValueError:
            raise DataError(f"unknown mask region: {name!r}") from None
        return self.maps[idx]

    def binary(self, name: str) -> np.ndarray:
        """Region binarized at 0.5."""
        return self.region(name) >= 0.5

    @property
    def height(self) -> int:
        return self.maps.shape[1]

    @property
    def width(self) -> int:
        return self.maps.shape[2]


def save_mask_set(masks: MaskSet, masks_dir: str | os.PathLike, image_id: str) -> str:
    os.makedirs(masks_dir, exist_ok=True)
    path = os.path.join(os.fspath(masks_dir), f"{image_id}.npz")
    np.savez_compressed(path, masks=masks.maps)
    return path


def load_mask_set(masks_dir: str | os.PathLike, image_id: str) -> MaskSet:
    path = os.path.join(os.fspath(masks_dir), f"{image_id}.npz")
    if not os.path.exists(path):
        raise DataError(f"missing mask sidecar for image_id {image_id!r}: {path}")
    with np.load(path) as data:
        if "masks" not in data:
            raise DataError(f"mask sidecar {path} has no 'masks' array")
        arr = data["masks"].astype(np.float32)
    if arr.max() > 1.0:  # uint8 0/255 sidecars
        arr = arr / 255.0
    return MaskSet(maps=arr)


def summarize_masks(mask_sets: Iterable[MaskSet]):
    """Aggregate positive/negative pixel counts per region (binarized at
    0.5), as needed for mask loss-weight derivation."""
    from .manifest import MaskSummary

    pos = np.zeros(N_MASK_REGIONS, dtype=np.int64)
    neg = np.zeros(N_MASK_REGIONS, dtype=np.int64)
    count = 0
    for ms in mask_sets:
        binary = ms.maps >= 0.5
        pos += binary.sum(axis=(1, 2))
        neg += (~binary).sum(axis=(1, 2))
        count += 1
    if count == 0:
        raise DataError("summarize_masks: no mask sets given")
    return MaskSummary(positive_pixels=pos, negative_pixels=neg)
