"""Joint optimization of the segmentation and classification losses over
a manifest, with checkpointing and desk-scale reproducibility.

Training is deterministic given the config seed: parameter init comes
from the seed, the per-epoch sample order is derived from (seed, epoch),
and there is no other source of randomness, so resuming from a
checkpoint reproduces the uninterrupted run exactly.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint, update_checkpoint_thresholds
from .degrade import load_image
from .gating import ConflictRule, gate
from .losses import cls_loss, seg_loss, targets_from_labels
from .manifest import WeightSet, derive_weights
from .masks import load_mask_set, summarize_masks
from .metrics import Category, EvalReport, ScoredSample, build_report, threshold_vector
from .model import ComplianceNet, ModelConfig, build_model
from .types import (
    ALL_REQUIREMENTS,
    ConfigError,
    DataError,
    ImageRecord,
    N_REQUIREMENTS,
    PortraitCheckError,
)


class TrainingDiverged(PortraitCheckError):
    """The total loss became non-finite."""


@dataclass
class TrainConfig:
    epochs: int
    seed: int
    input_size: tuple[int, int] = (64, 64)
    batch_size: int = 8
    lr_schedule: dict = field(default_factory=lambda: {"kind": "constant", "lr": 1e-3})
    loss_mix_alpha: float = 0.5  # total = alpha * seg + (1 - alpha) * cls
    model: ModelConfig = field(default_factory=ModelConfig)
    weight_source: str = "derived"  # "derived" | path to a weights .npz

    def __post_init__(self):
        if not 0.0 <= self.loss_mix_alpha <= 1.0:
            raise ConfigError(f"loss_mix_alpha must lie in [0,1]: {self.loss_mix_alpha}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        kind = self.lr_schedule.get("kind")
        if kind not in ("constant", "step"):
            raise ConfigError(f"unknown lr schedule kind: {kind!r}")

    def lr_at(self, epoch: int) -> float:
        lr = float(self.lr_schedule.get("lr", 1e-3))
        if self.lr_schedule["kind"] == "step":
            every = int(self.lr_schedule.get("step_epochs", 10))
            gamma = float(self.lr_schedule.get("gamma", 0.1))
            lr *= gamma ** ((epoch - 1) // every)
        return lr

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "seed": self.seed,
            "input_size": list(self.input_size),
            "batch_size": self.batch_size,
            "lr_schedule": dict(self.lr_schedule),
            "loss_mix_alpha": self.loss_mix_alpha,
            "model": self.model.to_dict(),
            "weight_source": self.weight_source,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        if "seed" not in raw:
            raise ConfigError("train config requires a seed")
        if "model" in raw:
            raw["model"] = ModelConfig.from_dict(raw["model"])
        if "input_size" in raw:
            raw["input_size"] = tuple(int(v) for v in raw["input_size"])
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**raw)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def uniform_weights() -> WeightSet:
    return WeightSet(
        lambda_r=np.ones(N_REQUIREMENTS),
        beta_r=np.ones(N_REQUIREMENTS),
        lambda_m=np.ones(8),
    )


def save_weights(weights: WeightSet, path: str | os.PathLike) -> None:
    np.savez(
        os.fspath(path),
        lambda_r=weights.lambda_r,
        beta_r=weights.beta_r,
        lambda_m=weights.lambda_m,
    )


def load_weights(path: str | os.PathLike) -> WeightSet:
    with np.load(os.fspath(path)) as data:
        return WeightSet(
            lambda_r=data["lambda_r"],
            beta_r=data["beta_r"],
            lambda_m=data["lambda_m"],
        )


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------


def _resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    if image.shape[:2] == (h, w):
        return image
    img8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    resized = Image.fromarray(img8, mode="RGB").resize((w, h), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0


def _resize_masks(maps: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    if maps.shape[1:] == (h, w):
        return maps
    out = np.empty((maps.shape[0], h, w), dtype=np.float32)
    for i, m in enumerate(maps):
        img = Image.fromarray((m * 255.0).astype(np.uint8), mode="L")
        out[i] = np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float32) / 255.0
    return out


@dataclass
class _Batchable:
    images: torch.Tensor  # (N,3,H,W)
    masks: torch.Tensor  # (N,8,H,W) binary
    targets: torch.Tensor  # (N,26)
    gates: torch.Tensor  # (N,26)


def _assemble(
    records: Sequence[ImageRecord],
    masks_dir: str | os.PathLike,
    input_size: tuple[int, int],
    rules: Optional[Sequence[ConflictRule]],
    images_root: Optional[str | os.PathLike],
) -> _Batchable:
    missing = []
    for r in records:
        if not os.path.exists(os.path.join(os.fspath(masks_dir), f"{r.image_id}.npz")):
            missing.append(r.image_id)
    if missing:
        raise DataError(f"missing mask sidecars for image_ids: {missing}")

    images, masks, targets, gates = [], [], [], []
    for r in records:
        path = r.source_path
        if images_root is not None and not os.path.isabs(path):
            path = os.path.join(os.fspath(images_root), path)
        img = _resize(load_image(path), input_size)
        images.append(np.transpose(img, (2, 0, 1)).astype(np.float32))
        ms = load_mask_set(masks_dir, r.image_id)
        binary = (_resize_masks(ms.maps, input_size) >= 0.5).astype(np.float32)
        masks.append(binary)
        targets.append(targets_from_labels(r.labels).astype(np.float32))
        gates.append(
            gate(r.labels, rules, restricted_to=r.restricted_to).gates.astype(np.float32)
        )
    return _Batchable(
        images=torch.from_numpy(np.stack(images)),
        masks=torch.from_numpy(np.stack(masks)),
        targets=torch.from_numpy(np.stack(targets)),
        gates=torch.from_numpy(np.stack(gates)),
    )


def _resolve_weights(
    config: TrainConfig,
    records: Sequence[ImageRecord],
    masks_dir: str | os.PathLike,
    rules: Optional[Sequence[ConflictRule]],
) -> WeightSet:
    if config.weight_source == "derived":
        summary = summarize_masks(
            load_mask_set(masks_dir, r.image_id) for r in records
        )
        return derive_weights(records, summary, rules=rules)
    return load_weights(config.weight_source)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_dir: str
    log: list[dict]

    @property
    def initial_total(self) -> float:
        return self.log[0]["total_loss"]

    @property
    def final_total(self) -> float:
        return self.log[-1]["total_loss"]


def train(
    records: Sequence[ImageRecord],
    masks_dir: str | os.PathLike,
    config: TrainConfig,
    out_dir: str | os.PathLike,
    rules: Optional[Sequence[ConflictRule]] = None,
    images_root: Optional[str | os.PathLike] = None,
    resume_from: Optional[str | os.PathLike] = None,
) -> TrainResult:
    """Optimize both branches jointly and checkpoint the result.

    The per-epoch log records the mean segmentation, classification and
    total losses. Raises TrainingDiverged when the loss leaves the finite
    range, and DataError when any training image lacks a mask sidecar.
    """
    if not records:
        raise DataError("train: empty record sequence")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    data = _assemble(records, masks_dir, config.input_size, rules, images_root)
    n = data.images.shape[0]

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model = ckpt.model
        if ckpt.weights is None:
            raise DataError("resume checkpoint carries no loss weights")
        weights = WeightSet(
            lambda_r=ckpt.weights["lambda_r"],
            beta_r=ckpt.weights["beta_r"],
            lambda_m=ckpt.weights["lambda_m"],
        )
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_at(1))
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        start_epoch = ckpt.epoch
    else:
        weights = _resolve_weights(config, records, masks_dir, rules)
        model = build_model(config.model, seed=config.seed)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_at(1))
        start_epoch = 0

    lam_m = torch.from_numpy(weights.lambda_m.astype(np.float32))
    lam_r = torch.from_numpy(weights.lambda_r.astype(np.float32))
    beta_r = torch.from_numpy(weights.beta_r.astype(np.float32))
    alpha = config.loss_mix_alpha

    log: list[dict] = []
    model.train()
    for epoch in range(start_epoch + 1, config.epochs + 1):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng((config.seed, epoch)).permutation(n)

        seg_sum = cls_sum = total_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            out = model(data.images[idx])
            seg = seg_loss(torch.sigmoid(out.seg_logits), data.masks[idx], lam_m)
            cls = cls_loss(
                torch.sigmoid(out.cls_logits),
                data.targets[idx],
                data.gates[idx],
                lam_r,
                beta_r,
            )
            parts = []
            if alpha > 0.0:
                parts.append(alpha * seg)
            if alpha < 1.0:
                parts.append((1.0 - alpha) * cls)
            total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (seg={seg.item()}, cls={cls.item()})"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            bs = idx.shape[0]
            seg_sum += seg.item() * bs
            cls_sum += cls.item() * bs
            total_sum += total.item() * bs

        log.append(
            {
                "epoch": epoch,
                "seg_loss": seg_sum / n,
                "cls_loss": cls_sum / n,
                "total_loss": total_sum / n,
                "lr": lr,
            }
        )

    ckpt_dir = os.path.join(out_dir, "checkpoint")
    save_checkpoint(
        ckpt_dir,
        model,
        epoch=config.epochs,
        optimizer=optimizer,
        train_config=config.to_dict(),
        weights={
            "lambda_r": weights.lambda_r,
            "beta_r": weights.beta_r,
            "lambda_m": weights.lambda_m,
        },
        thresholds=model.default_thresholds,
    )
    with open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    return TrainResult(checkpoint_dir=ckpt_dir, log=log)


# ---------------------------------------------------------------------------
# Scoring and evaluation
# ---------------------------------------------------------------------------


def score_records(
    model: ComplianceNet,
    records: Sequence[ImageRecord],
    input_size: tuple[int, int],
    images_root: Optional[str | os.PathLike] = None,
    batch_size: int = 16,
) -> dict[str, np.ndarray]:
    """Non-compliance score vectors for every record, keyed by image_id."""
    was_training = model.training
    model.eval()
    scores: dict[str, np.ndarray] = {}
    try:
        with torch.no_grad():
            for start in range(0, len(records), batch_size):
                chunk = records[start : start + batch_size]
                batch = []
                for r in chunk:
                    path = r.source_path
                    if images_root is not None and not os.path.isabs(path):
                        path = os.path.join(os.fspath(images_root), path)
                    img = _resize(load_image(path), input_size)
                    batch.append(np.transpose(img, (2, 0, 1)).astype(np.float32))
                out = model(torch.from_numpy(np.stack(batch)))
                probs = out.cls_scores.cpu().numpy().astype(np.float64)
                for r, p in zip(chunk, probs):
                    scores[r.image_id] = p
    finally:
        if was_training:
            model.train()
    return scores


def scored_samples(
    records: Sequence[ImageRecord],
    scores: dict[str, np.ndarray],
    rules: Optional[Sequence[ConflictRule]] = None,
) -> list[ScoredSample]:
    """Join model scores with ground-truth labels and gates."""
    samples: list[ScoredSample] = []
    for r in records:
        if r.image_id not in scores:
            continue
        vec = scores[r.image_id]
        gv = gate(r.labels, rules, restricted_to=r.restricted_to)
        t = targets_from_labels(r.labels)
        for req in ALL_REQUIREMENTS:
            i = req.value - 1
            samples.append(
                ScoredSample(
                    image_id=r.image_id,
                    requirement=req,
                    score=float(vec[i]),
                    label=int(t[i]),
                    group=r.demographics,
                    gated_in=bool(gv.gates[i]),
                )
            )
    return samples


def evaluate_checkpoint(
    checkpoint_dir: str | os.PathLike,
    records: Sequence[ImageRecord],
    categories: Sequence[Category] = (),
    aggregation: str = "mean",
    rules: Optional[Sequence[ConflictRule]] = None,
    images_root: Optional[str | os.PathLike] = None,
    update_thresholds: bool = True,
) -> EvalReport:
    """Score a manifest with a checkpoint and build the evaluation report.

    Gates come from the ground-truth labels, matching the training
    convention. When ``update_thresholds`` is set, the report's EER
    operating points are written back into the checkpoint as the default
    decision thresholds.
    """
    ckpt = load_checkpoint(checkpoint_dir)
    input_size = (64, 64)
    if ckpt.train_config and "input_size" in ckpt.train_config:
        input_size = tuple(int(v) for v in ckpt.train_config["input_size"])
    scores = score_records(ckpt.model, records, input_size, images_root=images_root)
    samples = scored_samples(records, scores, rules=rules)
    report = build_report(samples, categories=categories, aggregation=aggregation, strict=False)
    if update_thresholds:
        thr = threshold_vector(report)
        # operating points are probabilities; keep them usable as decision
        # thresholds by clamping away from the ends
        thr = np.clip(thr, 1e-6, 1.0 - 1e-6)
        ckpt.model.default_thresholds = thr
        update_checkpoint_thresholds(checkpoint_dir, thr)
    return report
