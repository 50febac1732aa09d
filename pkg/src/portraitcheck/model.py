"""Dual-branch compliance network.

A shared encoder feeds (a) a segmentation head that emits the 8 region
maps, upsampled to input resolution, and (b) a classification path that
multiplies the encoder features point-wise with each region's sigmoid
probabilities at feature resolution, pools each product into a region
descriptor, reweights the concatenated descriptors with a
squeeze-and-excitation gate, and maps them through a fully connected
layer to 26 non-compliance logits.

Encoders are pluggable: a small from-scratch convolutional encoder for
desk-scale work, a one-layer stub for gradient checking, and an adapter
slot for an externally trained backbone. Mask probabilities are detached
from the classification gradient by default, so the segmentation head is
supervised only by its own loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .types import (
    ALL_REQUIREMENTS,
    ConfigError,
    DataError,
    Decision,
    N_MASK_REGIONS,
    N_REQUIREMENTS,
    Requirement,
    ScoreVector,
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; the defaults describe the desk-scale network."""

    encoder: str = "tiny"  # tiny | stub | external
    encoder_channels: int = 32
    se_reduction: int = 16
    aspp_rates: tuple[int, ...] = (6, 12, 18)
    input_mean: float = 0.5
    input_std: float = 0.5
    min_input_size: int = 16
    mask_grad_to_cls: bool = False  # let cls gradient reach the seg head
    mssam_normalized: bool = False  # divide pooled products by the mask mass

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "encoder_channels": self.encoder_channels,
            "se_reduction": self.se_reduction,
            "aspp_rates": list(self.aspp_rates),
            "input_mean": self.input_mean,
            "input_std": self.input_std,
            "min_input_size": self.min_input_size,
            "mask_grad_to_cls": self.mask_grad_to_cls,
            "mssam_normalized": self.mssam_normalized,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "aspp_rates" in kwargs:
            kwargs["aspp_rates"] = tuple(int(r) for r in kwargs["aspp_rates"])
        return cls(**kwargs)


@dataclass
class ModelOutput:
    seg_logits: torch.Tensor  # (8,H,W) or (B,8,H,W)
    cls_logits: torch.Tensor  # (26,) or (B,26)
    region_features: torch.Tensor  # (8,C) or (B,8,C), diagnostic

    @property
    def cls_scores(self) -> torch.Tensor:
        return torch.sigmoid(self.cls_logits)


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


class TinyEncoder(nn.Module):
    """Two strided convolutions; stride 4 overall."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.stride = 4
        self.out_channels = channels
        self.conv1 = nn.Conv2d(3, channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        return F.relu(self.conv2(x))


class StubEncoder(nn.Module):
    """Single 3x3 convolution at full resolution, for gradient checks."""

    def __init__(self, channels: int = 4):
        super().__init__()
        self.stride = 1
        self.out_channels = channels
        self.conv = nn.Conv2d(3, channels, 3, stride=1, padding=1)

    def forward(self, x):
        return torch.tanh(self.conv(x))


class ExternalEncoderAdapter(nn.Module):
    """Slot for an externally trained backbone.

    The wrapped module must map (B,3,H,W) to (B,out_channels,ceil(H/s),
    ceil(W/s)); the contract is verified on every call.
    """

    def __init__(self, module: nn.Module, stride: int, out_channels: int):
        super().__init__()
        self.inner = module
        self.stride = stride
        self.out_channels = out_channels

    def forward(self, x):
        out = self.inner(x)
        b, _, h, w = x.shape
        expected = (b, self.out_channels, math.ceil(h / self.stride), math.ceil(w / self.stride))
        if tuple(out.shape) != expected:
            raise DataError(
                f"external encoder produced {tuple(out.shape)}, expected {expected}"
            )
        return out


def _build_encoder(config: ModelConfig, external: Optional[nn.Module] = None) -> nn.Module:
    if config.encoder == "tiny":
        return TinyEncoder(config.encoder_channels)
    if config.encoder == "stub":
        return StubEncoder(config.encoder_channels)
    if config.encoder == "external":
        if external is None:
            raise ConfigError("encoder 'external' requires an adapter module")
        return external
    raise ConfigError(f"unknown encoder: {config.encoder!r}")


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


class MultiScaleContext(nn.Module):
    """Parallel dilated 3x3 branches plus a 1x1 and an image-pooling
    branch, projected back to ``channels``."""

    def __init__(self, channels: int, rates: tuple[int, ...]):
        super().__init__()
        self.local = nn.Conv2d(channels, channels, 1)
        self.dilated = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=r, dilation=r) for r in rates
        )
        self.pooled = nn.Conv2d(channels, channels, 1)
        self.project = nn.Conv2d(channels * (len(rates) + 2), channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        branches = [F.relu(self.local(x))]
        branches += [F.relu(conv(x)) for conv in self.dilated]
        pooled = F.relu(self.pooled(x.mean(dim=(-2, -1), keepdim=True)))
        branches.append(pooled.expand(-1, -1, h, w))
        return F.relu(self.project(torch.cat(branches, dim=1)))


def mssam(
    features: torch.Tensor, mask_prob: torch.Tensor, normalized: bool = False
) -> torch.Tensor:
    """Mask-specific spatial attention: pool features gated by one region.

    features: (C,h,w) or (B,C,h,w); mask_prob: (h,w) or (B,h,w) in [0,1]
    at feature resolution. Returns the spatial average of
    features * mask, shape (C,) or (B,C). With ``normalized`` the product
    is divided by the mask mass instead of the pixel count (the zero-mask
    case still yields a zero vector).
    """
    batched = features.dim() == 4
    f = features if batched else features.unsqueeze(0)
    m = mask_prob if mask_prob.dim() == 3 else mask_prob.unsqueeze(0)
    if f.shape[-2:] != m.shape[-2:]:
        raise DataError(
            f"mssam resolution mismatch: features {tuple(f.shape[-2:])} "
            f"vs mask {tuple(m.shape[-2:])}"
        )
    product = f * m.unsqueeze(1)
    if normalized:
        mass = m.sum(dim=(-2, -1)).clamp_min(EPS_MASS).unsqueeze(1)
        out = product.sum(dim=(-2, -1)) / mass
    else:
        out = product.mean(dim=(-2, -1))
    return out if batched else out.squeeze(0)


EPS_MASS = 1e-12


class SqueezeExcite(nn.Module):
    """Channel gating over a feature vector; gates lie strictly in (0,1).

    ``frozen_open`` bypasses the bottleneck with gates of exactly 1,
    which makes causality tests on the surrounding wiring exact.
    """

    def __init__(self, dim: int, reduction: int = 16, frozen_open: bool = False):
        super().__init__()
        hidden = max(1, dim // reduction)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.frozen_open = frozen_open

    def gate_values(self, x: torch.Tensor) -> torch.Tensor:
        if self.frozen_open:
            return torch.ones_like(x)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(x))))

    def forward(self, x):
        return x * self.gate_values(x)


def channel_attention(se: SqueezeExcite, concat_features: torch.Tensor) -> torch.Tensor:
    """Apply an SE module to a concatenated region-feature vector."""
    return se(concat_features)


# ---------------------------------------------------------------------------
# The full network
# ---------------------------------------------------------------------------


class ComplianceNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), external_encoder=None):
        super().__init__()
        self.config = config
        self.encoder = _build_encoder(config, external_encoder)
        c = self.encoder.out_channels
        self.context = MultiScaleContext(c, config.aspp_rates)
        self.seg_head = nn.Conv2d(c, N_MASK_REGIONS, 1)
        self.se = SqueezeExcite(N_MASK_REGIONS * c, reduction=config.se_reduction)
        self.fc = nn.Linear(N_MASK_REGIONS * c, N_REQUIREMENTS)
        self.default_thresholds: Optional[np.ndarray] = None

    @property
    def feature_channels(self) -> int:
        return self.encoder.out_channels

    def _check_input(self, x: torch.Tensor) -> tuple[torch.Tensor, bool]:
        if x.dim() == 3:
            x = x.unsqueeze(0)
            batched = False
        elif x.dim() == 4:
            batched = True
        else:
            raise DataError(f"input must be (3,H,W) or (B,3,H,W), got {tuple(x.shape)}")
        if x.shape[1] != 3:
            raise DataError(f"input must have 3 channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h < self.config.min_input_size or w < self.config.min_input_size:
            raise DataError(
                f"input {h}x{w} below minimum size {self.config.min_input_size}"
            )
        return x, batched

    def forward(
        self, image: torch.Tensor, mask_override: Optional[torch.Tensor] = None
    ) -> ModelOutput:
        """Run both branches.

        ``mask_override`` replaces the sigmoid mask probabilities consumed
        by the classification path (shape (8,h,w) or (B,8,h,w) at feature
        resolution); the segmentation output is unaffected.
        """
        x, batched = self._check_input(image)
        h_in, w_in = x.shape[-2:]
        x = (x - self.config.input_mean) / self.config.input_std

        feats = self.context(self.encoder(x))  # (B,C,h,w)
        seg_logits_lr = self.seg_head(feats)  # (B,8,h,w)
        seg_logits = F.interpolate(
            seg_logits_lr, size=(h_in, w_in), mode="bilinear", align_corners=False
        )

        mask_probs = torch.sigmoid(seg_logits_lr)
        if not self.config.mask_grad_to_cls:
            mask_probs = mask_probs.detach()
        if mask_override is not None:
            mask_probs = (
                mask_override if mask_override.dim() == 4 else mask_override.unsqueeze(0)
            )
            if mask_probs.shape[-2:] != feats.shape[-2:]:
                raise DataError(
                    f"mask_override resolution {tuple(mask_probs.shape[-2:])} does not "
                    f"match feature resolution {tuple(feats.shape[-2:])}"
                )

        region = torch.stack(
            [
                mssam(feats, mask_probs[:, m], normalized=self.config.mssam_normalized)
                for m in range(N_MASK_REGIONS)
            ],
            dim=1,
        )  # (B,8,C)
        flat = region.flatten(1)  # (B,8C)
        cls_logits = self.fc(self.se(flat))  # (B,26)

        if not batched:
            return ModelOutput(
                seg_logits=seg_logits.squeeze(0),
                cls_logits=cls_logits.squeeze(0),
                region_features=region.squeeze(0),
            )
        return ModelOutput(
            seg_logits=seg_logits, cls_logits=cls_logits, region_features=region
        )


def build_model(config: ModelConfig, external_encoder=None, seed: Optional[int] = None) -> ComplianceNet:
    if seed is not None:
        torch.manual_seed(seed)
    return ComplianceNet(config, external_encoder=external_encoder)


# ---------------------------------------------------------------------------
# Decision layer
# ---------------------------------------------------------------------------


def predict_compliance(
    model: ComplianceNet,
    image: torch.Tensor,
    thresholds: Optional[np.ndarray] = None,
) -> tuple[dict[Requirement, Decision], ScoreVector]:
    """Threshold the 26 scores into per-requirement decisions.

    A requirement is non-compliant iff its score is >= its threshold
    (ties reject). Without an explicit threshold vector the model's
    stored EER operating points are used; if none exist this is an error.
    """
    if thresholds is None:
        thresholds = model.default_thresholds
    if thresholds is None:
        raise ConfigError(
            "no thresholds available: pass a threshold vector or evaluate a "
            "checkpoint first to set the EER operating points"
        )
    thr = np.asarray(thresholds, dtype=np.float64)
    if thr.shape != (N_REQUIREMENTS,):
        raise ConfigError(f"threshold vector must have shape (26,), got {thr.shape}")
    if thr.min() <= 0.0 or thr.max() >= 1.0:
        raise ConfigError("thresholds must lie strictly inside (0,1)")

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(image)
    finally:
        if was_training:
            model.train()
    scores = ScoreVector(out.cls_scores.detach().cpu().numpy().astype(np.float64))
    decisions = {
        req: (
            Decision.NON_COMPLIANT
            if scores.scores[req.value - 1] >= thr[req.value - 1]
            else Decision.COMPLIANT
        )
        for req in ALL_REQUIREMENTS
    }
    return decisions, scores
