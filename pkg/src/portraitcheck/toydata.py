"""Procedural portrait stand-ins for desk-scale tests and demos.

Real portrait data cannot ship with the library, so these helpers draw
small schematic "portraits" (flat background, torso, face ellipse, hair,
eyes, mouth) together with pixel-exact region masks, then run the
degradation pipeline over them to produce fully labeled toy manifests.
Everything is deterministic in the seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .degrade import Effect, EffectSpec, PlanEntry, generate_corpus, save_image
from .manifest import save_manifest
from .masks import MaskSet, save_mask_set
from .types import (
    AgeGroup,
    DemographicProfile,
    Gender,
    ImageRecord,
    Origin,
    Partition,
    QualityTier,
    compliant_labels,
)

_HAIR_COLORS = ["black", "brown", "blonde", "red", "gray"]


def make_base_portrait(
    rng: np.random.Generator, size: int = 64
) -> tuple[np.ndarray, MaskSet]:
    """One schematic portrait and its 8 region masks."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    image = np.empty((h, w, 3), dtype=np.float64)

    bg_color = rng.uniform(0.55, 0.9, size=3)
    image[:] = bg_color
    image += (yy / h)[..., None] * rng.uniform(-0.05, 0.05, size=3)

    cx = w * rng.uniform(0.46, 0.54)
    cy = h * rng.uniform(0.42, 0.48)
    rx = w * rng.uniform(0.2, 0.24)
    ry = h * rng.uniform(0.26, 0.3)

    torso = yy >= h * rng.uniform(0.78, 0.84)
    face = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    hair = (((xx - cx) / (rx * 1.1)) ** 2 + ((yy - cy) / (ry * 1.1)) ** 2 <= 1.0) & (
        yy <= cy - 0.35 * ry
    )
    covering = (((xx - cx) / (rx * 1.15)) ** 2 + ((yy - cy) / (ry * 1.15)) ** 2 <= 1.0) & (
        yy <= cy - 0.75 * ry
    )
    eye_y = cy - 0.15 * ry
    eye_dx = 0.45 * rx
    eye_r = max(1.5, 0.1 * rx)
    eyes = (np.hypot(xx - (cx - eye_dx), yy - eye_y) <= eye_r) | (
        np.hypot(xx - (cx + eye_dx), yy - eye_y) <= eye_r
    )
    glasses = (np.abs(yy - eye_y) <= eye_r * 1.6) & (np.abs(xx - cx) <= eye_dx + 2 * eye_r)
    mouth = (np.abs(yy - (cy + 0.45 * ry)) <= max(1.0, 0.06 * ry)) & (
        np.abs(xx - cx) <= 0.4 * rx
    )

    shirt = rng.uniform(0.1, 0.7, size=3)
    skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.55, 1.1)
    hair_rgb = rng.uniform(0.05, 0.45, size=3)
    image[torso] = shirt
    image[face] = np.clip(skin, 0, 1)
    image[mouth & face] = [0.7, 0.25, 0.25]
    image[eyes] = [0.12, 0.1, 0.1]
    image[hair] = hair_rgb
    image[covering] = rng.uniform(0.2, 0.8, size=3)
    image = np.clip(image, 0.0, 1.0)

    background = ~(face | torso | hair | covering)
    maps = np.stack(
        [
            covering,
            hair,
            glasses,
            eyes,
            mouth,
            face,
            torso,
            background,
        ]
    ).astype(np.float32)
    return image, MaskSet(maps=maps)


def _profile(i: int) -> DemographicProfile:
    return DemographicProfile(
        gender=list(Gender)[i % 2],
        age_group=list(AgeGroup)[i % 5],
        origin=list(Origin)[i % 3],
    )


DEFAULT_TOY_EFFECTS: tuple[Effect, ...] = (
    Effect.POSTERIZATION,
    Effect.GAUSSIAN_BLUR,
    Effect.WASHED_OUT,
    Effect.EXPOSURE_SHIFT,
)

_EFFECT_PARAMS = {
    Effect.POSTERIZATION: {"levels": 3},
    Effect.GAUSSIAN_BLUR: {"sigma": 2.5},
    Effect.WASHED_OUT: {"strength": 0.7},
    Effect.EXPOSURE_SHIFT: {"exposure_delta": 1.8},
    Effect.PIXELATION: {"block_factor": 8},
    Effect.RED_EYES: {"strength": 0.9},
    Effect.UNNATURAL_SKIN_TONE: {"hue_degrees": 160.0},
    Effect.INK_MARKED: {"strokes": 4, "crease": 1},
    Effect.BACKGROUND_SUBSTITUTION: {"bg": "noise"},
}


@dataclass
class ToyDataset:
    root: str
    manifest_path: str
    images_dir: str
    masks_dir: str
    records: list[ImageRecord]

    @property
    def base_records(self) -> list[ImageRecord]:
        return [r for r in self.records if r.quality_tier is not QualityTier.GEN]


def build_toy_dataset(
    root: str | os.PathLike,
    n_bases: int = 4,
    effects: Optional[Sequence[Effect]] = None,
    seed: int = 0,
    image_size: int = 64,
    partition: Partition = Partition.TRAIN,
) -> ToyDataset:
    """Build a toy manifest: ``n_bases`` compliant portraits plus one
    generated non-compliant image per (base, effect)."""
    root = os.fspath(root)
    images_dir = os.path.join(root, "images")
    masks_dir = os.path.join(root, "masks")
    os.makedirs(images_dir, exist_ok=True)
    effects = tuple(effects) if effects is not None else DEFAULT_TOY_EFFECTS

    rng = np.random.default_rng(seed)
    bases: list[ImageRecord] = []
    for i in range(n_bases):
        image, mask_set = make_base_portrait(rng, size=image_size)
        image_id = f"base{i:02d}"
        path = os.path.join(images_dir, f"{image_id}.png")
        save_image(image, path)
        save_mask_set(mask_set, masks_dir, image_id)
        bases.append(
            ImageRecord(
                image_id=image_id,
                subject_id=f"subj{i:02d}",
                quality_tier=QualityTier.HQ,
                source_path=path,
                demographics=_profile(i),
                labels=compliant_labels(),
                attributes={"hair_color": _HAIR_COLORS[i % len(_HAIR_COLORS)]},
                partition=partition,
            )
        )

    plan = [
        PlanEntry(
            filter={"quality_tier": "hq"},
            spec=EffectSpec(effect=e, params=_EFFECT_PARAMS[e], seed=k),
        )
        for k, e in enumerate(effects)
    ]
    records, report = generate_corpus(
        bases, plan, images_dir, seed=seed, masks_dir=masks_dir
    )
    if report.warnings:
        raise RuntimeError(f"toy corpus generation warned: {report.warnings}")

    manifest_path = os.path.join(root, "toy.manifest")
    save_manifest(records, manifest_path)
    return ToyDataset(
        root=root,
        manifest_path=manifest_path,
        images_dir=images_dir,
        masks_dir=masks_dir,
        records=records,
    )
