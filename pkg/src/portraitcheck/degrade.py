"""Synthetic non-compliance generation.

Each effect degrades a clean portrait into a non-compliant one and flips
the targeted requirement label(s). The formulas are documented per effect
so that, together with the seeds, a generated corpus is reproducible
bit for bit:

- posterization: uniform quantization to ``levels`` values per channel,
  round(x * (L-1)) / (L-1)
- washed_out: contrast compression toward mid-gray,
  0.5 + (x - 0.5) * (1 - strength)
- ink_marked: seeded random stroke/crease overlay
- unnatural_skin_tone: hue rotation about the achromatic axis, restricted
  to the face mask when one is supplied
- pixelation: block-average downsample/upsample
- exposure_shift: gamma 2**(-delta) in linear light (delta > 0 brightens)
- gaussian_blur: isotropic Gaussian filter of the given sigma
- red_eyes: red-channel push inside the eyes mask
- background_substitution: replace pixels inside the background mask

Images are H x W x 3 float arrays in [0,1]; outputs are clamped to the
same range.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .masks import MaskSet, load_mask_set, save_mask_set
from .types import (
    ComplianceLabel,
    ConfigError,
    DataError,
    ImageRecord,
    LabelState,
    Partition,
    QualityTier,
    Requirement,
    non_compliant,
)


class Effect(enum.Enum):
    UNNATURAL_SKIN_TONE = "unnatural_skin_tone"
    RED_EYES = "red_eyes"
    PIXELATION = "pixelation"
    WASHED_OUT = "washed_out"
    INK_MARKED = "ink_marked"
    POSTERIZATION = "posterization"
    EXPOSURE_SHIFT = "exposure_shift"
    GAUSSIAN_BLUR = "gaussian_blur"
    BACKGROUND_SUBSTITUTION = "background_substitution"


# Requirement hit by each effect.
EFFECT_TARGETS: dict[Effect, Requirement] = {
    Effect.UNNATURAL_SKIN_TONE: Requirement.UNNATURAL_SKIN_TONE,
    Effect.RED_EYES: Requirement.RED_EYES,
    Effect.PIXELATION: Requirement.PIXELATION,
    Effect.WASHED_OUT: Requirement.WASHED_OUT,
    Effect.INK_MARKED: Requirement.INK_MARKED_CREASED,
    Effect.POSTERIZATION: Requirement.POSTERIZATION,
    Effect.EXPOSURE_SHIFT: Requirement.TOO_DARK_LIGHT,
    Effect.GAUSSIAN_BLUR: Requirement.BLURRED,
    Effect.BACKGROUND_SUBSTITUTION: Requirement.VARIED_BACKGROUND,
}

_EFFECTS_NEEDING_MASKS = {Effect.RED_EYES, Effect.BACKGROUND_SUBSTITUTION}

# Closed parameter schema per effect: name -> (python type, default).
_PARAM_SCHEMA: dict[Effect, dict[str, tuple[type, object]]] = {
    Effect.UNNATURAL_SKIN_TONE: {"hue_degrees": (float, 140.0)},
    Effect.RED_EYES: {"strength": (float, 0.8)},
    Effect.PIXELATION: {"block_factor": (int, 8)},
    Effect.WASHED_OUT: {"strength": (float, 0.6)},
    Effect.INK_MARKED: {"strokes": (int, 3), "crease": (int, 1)},
    Effect.POSTERIZATION: {"levels": (int, 4)},
    Effect.EXPOSURE_SHIFT: {"exposure_delta": (float, 1.0)},
    Effect.GAUSSIAN_BLUR: {"sigma": (float, 2.0)},
    Effect.BACKGROUND_SUBSTITUTION: {"bg": (str, "noise"), "bg_image": (str, "")},
}


@dataclass(frozen=True)
class DegradeThresholds:
    """Minimum severities below which an effect does not count as
    non-compliant. Defaults are configuration, not measured constants."""

    min_blur_sigma: float = 1.0
    min_exposure_delta: float = 0.5
    min_washout_strength: float = 0.2
    max_posterize_levels: int = 32
    min_block_factor: int = 2


DEFAULT_THRESHOLDS = DegradeThresholds()


@dataclass(frozen=True)
class EffectSpec:
    """One degradation with validated parameters and a seed."""

    effect: Effect
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        schema = _PARAM_SCHEMA[self.effect]
        clean: dict[str, object] = {}
        for name, value in self.params.items():
            if name not in schema:
                raise ConfigError(
                    f"unknown param {name!r} for effect {self.effect.value} "
                    f"(allowed: {sorted(schema)})"
                )
            typ, _ = schema[name]
            try:
                clean[name] = typ(value)
            except (TypeError, ValueError):
                raise ConfigError(
                    f"param {name!r} for {self.effect.value} must be {typ.__name__}"
                ) from None
        for name, (_, default) in schema.items():
            clean.setdefault(name, default)
        _validate_ranges(self.effect, clean)
        object.__setattr__(self, "params", clean)

    def __getitem__(self, name: str):
        return self.params[name]


def _validate_ranges(effect: Effect, params: dict) -> None:
    def bad(msg: str):
        raise ConfigError(f"{effect.value}: {msg}")

    if effect is Effect.POSTERIZATION and params["levels"] < 2:
        bad(f"levels must be >= 2, got {params['levels']}")
    if effect is Effect.PIXELATION and params["block_factor"] < 1:
        bad(f"block_factor must be >= 1, got {params['block_factor']}")
    if effect is Effect.GAUSSIAN_BLUR and params["sigma"] < 0:
        bad(f"sigma must be >= 0, got {params['sigma']}")
    if effect in (Effect.WASHED_OUT, Effect.RED_EYES):
        s = params["strength"]
        if not 0.0 < s <= 1.0:
            bad(f"strength must lie in (0,1], got {s}")
    if effect is Effect.EXPOSURE_SHIFT and abs(params["exposure_delta"]) > 4.0:
        bad(f"exposure_delta out of range [-4,4]: {params['exposure_delta']}")
    if effect is Effect.UNNATURAL_SKIN_TONE:
        if not -360.0 < params["hue_degrees"] < 360.0:
            bad(f"hue_degrees out of range (-360,360): {params['hue_degrees']}")
    if effect is Effect.INK_MARKED and params["strokes"] < 0:
        bad("strokes must be >= 0")
    if effect is Effect.BACKGROUND_SUBSTITUTION:
        if params["bg"] not in ("noise", "gradient", "checker"):
            bad(f"bg must be one of noise|gradient|checker, got {params['bg']!r}")


# ---------------------------------------------------------------------------
# Effect implementations
# ---------------------------------------------------------------------------


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"image must have shape (H,W,3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError("image values must be finite and lie in [0,1]")
    return arr


def _hue_rotation_matrix(degrees: float) -> np.ndarray:
    # Rodrigues rotation about the achromatic axis (1,1,1)/sqrt(3).
    theta = np.deg2rad(degrees)
    u = np.ones(3) / np.sqrt(3.0)
    k = np.array(
        [[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]], dtype=np.float64
    )
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def _posterize(image: np.ndarray, levels: int) -> np.ndarray:
    return np.round(image * (levels - 1)) / (levels - 1)


def _pixelate(image: np.ndarray, block: int) -> np.ndarray:
    if block <= 1:
        return image.copy()
    h, w = image.shape[:2]
    rows = np.arange(h) // block
    cols = np.arange(w) // block
    out = np.empty_like(image)
    n_r, n_c = rows[-1] + 1, cols[-1] + 1
    for c in range(3):
        sums = np.zeros((n_r, n_c))
        counts = np.zeros((n_r, n_c))
        np.add.at(sums, (rows[:, None], cols[None, :]), image[:, :, c])
        np.add.at(counts, (rows[:, None], cols[None, :]), 1.0)
        means = sums / counts
        out[:, :, c] = means[rows[:, None], cols[None, :]]
    return out


def _washed_out(image: np.ndarray, strength: float) -> np.ndarray:
    return 0.5 + (image - 0.5) * (1.0 - strength)


def _exposure_shift(image: np.ndarray, delta: float) -> np.ndarray:
    return np.power(image, 2.0 ** (-delta))


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image.copy()
    return ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0), mode="nearest")


def _ink_marked(image: np.ndarray, rng: np.random.Generator, strokes: int, crease: int) -> np.ndarray:
    h, w = image.shape[:2]
    out = image.copy()
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(strokes):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(0.3, 0.9) * min(h, w)
        x1 = x0 + np.cos(angle) * length
        y1 = y0 + np.sin(angle) * length
        thickness = rng.uniform(1.0, max(2.0, 0.01 * min(h, w)))
        # distance from each pixel to the stroke segment
        dx, dy = x1 - x0, y1 - y0
        seg_len2 = dx * dx + dy * dy
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / max(seg_len2, 1e-9), 0, 1)
        dist = np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))
        ink = dist <= thickness
        shade = rng.uniform(0.0, 0.15)
        out[ink] = shade
    if crease:
        x0 = rng.uniform(0.2 * w, 0.8 * w)
        angle = rng.uniform(-0.3, 0.3)
        band = np.abs((xx - x0) + angle * (yy - h / 2))
        width = rng.uniform(1.5, 4.0)
        lighten = np.clip(1.0 - band / width, 0, 1) * 0.35
        out = np.clip(out + lighten[:, :, None], 0, 1)
        dark = (band > width) & (band <= 2 * width)
        out[dark] = np.clip(out[dark] * 0.8, 0, 1)
    return out


def _red_eyes(image: np.ndarray, eyes_mask: np.ndarray, strength: float) -> np.ndarray:
    out = image.copy()
    m = eyes_mask
    out[m, 0] = image[m, 0] + strength * (1.0 - image[m, 0])
    out[m, 1] = image[m, 1] * (1.0 - 0.6 * strength)
    out[m, 2] = image[m, 2] * (1.0 - 0.6 * strength)
    return out


def _synth_background(kind: str, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    if kind == "noise":
        return rng.uniform(0, 1, size=(h, w, 3))
    if kind == "gradient":
        ramp = np.linspace(0, 1, w)[None, :, None]
        color_a = rng.uniform(0, 1, size=3)
        color_b = rng.uniform(0, 1, size=3)
        return np.broadcast_to(color_a * (1 - ramp) + color_b * ramp, (h, w, 3)).copy()
    if kind == "checker":
        cell = max(4, min(h, w) // 8)
        yy, xx = np.mgrid[0:h, 0:w]
        checker = ((yy // cell + xx // cell) % 2).astype(np.float64)
        color_a = rng.uniform(0, 1, size=3)
        color_b = rng.uniform(0, 1, size=3)
        return checker[:, :, None] * color_a + (1 - checker[:, :, None]) * color_b
    raise ConfigError(f"unknown background kind: {kind!r}")


def _unnatural_skin_tone(
    image: np.ndarray, degrees: float, face_masks: Optional[MaskSet]
) -> np.ndarray:
    rotated = np.clip(image @ _hue_rotation_matrix(degrees).T, 0, 1)
    if face_masks is None:
        return rotated
    out = image.copy()
    region = face_masks.binary("full_face")
    out[region] = rotated[region]
    return out


def apply_effect(
    image: np.ndarray,
    spec: EffectSpec,
    face_masks: Optional[MaskSet] = None,
    thresholds: DegradeThresholds = DEFAULT_THRESHOLDS,
) -> tuple[np.ndarray, dict[Requirement, ComplianceLabel]]:
    """Apply one degradation.

    Returns the degraded image (same shape, clamped to [0,1]) and the
    label delta: the targeted requirement flipped to non-compliant with
    reason ``generated:<effect>``, or an empty delta when the parameters
    fall below the configured non-compliance threshold. Deterministic
    given ``spec.seed``.
    """
    image = _check_image(image)
    effect = spec.effect
    if effect in _EFFECTS_NEEDING_MASKS and face_masks is None:
        raise DataError(f"effect {effect.value} requires face masks")
    rng = np.random.default_rng(spec.seed)

    flips = True
    if effect is Effect.POSTERIZATION:
        out = _posterize(image, spec["levels"])
        flips = spec["levels"] <= thresholds.max_posterize_levels
    elif effect is Effect.PIXELATION:
        out = _pixelate(image, spec["block_factor"])
        flips = spec["block_factor"] >= thresholds.min_block_factor
    elif effect is Effect.WASHED_OUT:
        out = _washed_out(image, spec["strength"])
        flips = spec["strength"] >= thresholds.min_washout_strength
    elif effect is Effect.EXPOSURE_SHIFT:
        out = _exposure_shift(image, spec["exposure_delta"])
        flips = abs(spec["exposure_delta"]) >= thresholds.min_exposure_delta
    elif effect is Effect.GAUSSIAN_BLUR:
        out = _gaussian_blur(image, spec["sigma"])
        flips = spec["sigma"] >= thresholds.min_blur_sigma
    elif effect is Effect.INK_MARKED:
        out = _ink_marked(image, rng, spec["strokes"], spec["crease"])
    elif effect is Effect.RED_EYES:
        out = _red_eyes(image, face_masks.binary("eyes"), spec["strength"])
    elif effect is Effect.UNNATURAL_SKIN_TONE:
        out = _unnatural_skin_tone(image, spec["hue_degrees"], face_masks)
    elif effect is Effect.BACKGROUND_SUBSTITUTION:
        bg_mask = face_masks.binary("background")
        if spec["bg_image"]:
            bg = load_image(spec["bg_image"])
            if bg.shape != image.shape:
                raise DataError(
                    f"bg_image shape {bg.shape} does not match image {image.shape}"
                )
        else:
            bg = _synth_background(spec["bg"], image.shape[:2], rng)
        out = image.copy()
        out[bg_mask] = bg[bg_mask]
    else:  # pragma: no cover
        raise ConfigError(f"unhandled effect: {effect}")

    out = np.clip(out, 0.0, 1.0)
    delta: dict[Requirement, ComplianceLabel] = {}
    if flips:
        target = EFFECT_TARGETS[effect]
        delta[target] = non_compliant(f"generated:{effect.value}")
    return out, delta


# ---------------------------------------------------------------------------
# Image IO
# ---------------------------------------------------------------------------


def load_image(path: str | os.PathLike) -> np.ndarray:
    path = os.fspath(path)
    if path.endswith(".npy"):
        arr = np.load(path).astype(np.float64)
    else:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def save_image(image: np.ndarray, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if path.endswith(".npy"):
        np.save(path, image.astype(np.float32))
        return
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanEntry:
    filter: Mapping[str, str]
    spec: EffectSpec


def load_plan(path: str | os.PathLike) -> list[PlanEntry]:
    """Plan file: JSON (or YAML) list of {filter, effect, params, seed}."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        import yaml

        raw = yaml.safe_load(text)
    if not isinstance(raw, list):
        raise ConfigError("plan file must contain a list of entries")
    entries = []
    for item in raw:
        try:
            effect = Effect(item["effect"])
        except (KeyError, ValueError):
            raise ConfigError(f"plan entry missing or invalid effect: {item!r}") from None
        entries.append(
            PlanEntry(
                filter=dict(item.get("filter", {})),
                spec=EffectSpec(
                    effect=effect,
                    params=item.get("params", {}),
                    seed=int(item.get("seed", 0)),
                ),
            )
        )
    return entries


def _matches(record: ImageRecord, flt: Mapping[str, str]) -> bool:
    for key, wanted in flt.items():
        if key == "quality_tier":
            if record.quality_tier.value != wanted:
                return False
        elif key == "partition":
            if record.partition.value != wanted:
                return False
        elif key == "subject_id":
            if record.subject_id != wanted:
                return False
        elif key == "image_id":
            if record.image_id != wanted:
                return False
        else:
            raise ConfigError(f"unknown plan filter key: {key!r}")
    return True


def _record_seed(base_seed: int, spec_seed: int, image_id: str) -> int:
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    mixed = np.random.SeedSequence(
        [base_seed, spec_seed, int.from_bytes(digest[:8], "big")]
    )
    return int(mixed.generate_state(1, np.uint64)[0])


@dataclass
class CorpusReport:
    n_generated: int = 0
    warnings: list[str] = field(default_factory=list)


def generate_corpus(
    records: Sequence[ImageRecord],
    plan: Sequence[PlanEntry],
    out_dir: str | os.PathLike,
    seed: int,
    masks_dir: Optional[str | os.PathLike] = None,
    images_root: Optional[str | os.PathLike] = None,
    thresholds: DegradeThresholds = DEFAULT_THRESHOLDS,
) -> tuple[list[ImageRecord], CorpusReport]:
    """Run a generation plan over a manifest.

    Only records whose targeted requirement is currently Compliant are
    degraded. Each generated record is Gen tier, carries provenance, and
    is restricted to the flipped requirement(s). Returns the augmented
    manifest (originals + generated, in order) and a report; empty filter
    matches are warnings, not errors.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    report = CorpusReport()
    generated: list[ImageRecord] = []

    for entry in plan:
        target = EFFECT_TARGETS[entry.spec.effect]
        matched = [r for r in records if _matches(r, entry.filter)]
        sources = [
            r
            for r in matched
            if r.quality_tier is not QualityTier.GEN
            and r.labels[target].state is LabelState.COMPLIANT
        ]
        if not sources:
            report.warnings.append(
                f"plan entry {entry.spec.effect.value}: no compliant source records matched"
            )
            continue
        for src in sources:
            image_path = src.source_path
            if images_root is not None and not os.path.isabs(image_path):
                image_path = os.path.join(os.fspath(images_root), image_path)
            image = load_image(image_path)
            face_masks = None
            if masks_dir is not None:
                try:
                    face_masks = load_mask_set(masks_dir, src.image_id)
                except DataError:
                    face_masks = None
            if entry.spec.effect in _EFFECTS_NEEDING_MASKS and face_masks is None:
                report.warnings.append(
                    f"{src.image_id}: skipped {entry.spec.effect.value}, no mask sidecar"
                )
                continue

            per_record = replace(
                entry.spec, seed=_record_seed(seed, entry.spec.seed, src.image_id)
            )
            out_image, delta = apply_effect(
                image, per_record, face_masks=face_masks, thresholds=thresholds
            )
            if not delta:
                report.warnings.append(
                    f"{src.image_id}: {entry.spec.effect.value} below non-compliance "
                    "threshold, nothing generated"
                )
                continue

            new_id = f"{src.image_id}__{entry.spec.effect.value}"
            out_path = os.path.join(out_dir, f"{new_id}.png")
            save_image(out_image, out_path)
            if face_masks is not None and masks_dir is not None:
                # regions do not move under photometric degradation
                save_mask_set(face_masks, masks_dir, new_id)

            labels = dict(src.labels)
            labels.update(delta)
            generated.append(
                ImageRecord(
                    image_id=new_id,
                    subject_id=src.subject_id,
                    quality_tier=QualityTier.GEN,
                    source_path=out_path,
                    demographics=src.demographics,
                    labels=labels,
                    attributes=dict(src.attributes),
                    partition=src.partition,
                    generated_from=src.image_id,
                    restricted_to=tuple(sorted(delta, key=lambda r: r.value)),
                )
            )
            report.n_generated += 1

    return list(records) + generated, report
