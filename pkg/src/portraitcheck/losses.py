"""The two supervised objectives.

Segmentation: multi-label BCE over the 8 region maps with a per-mask
positive weight so small regions are not drowned out by large ones:

    L_seg = -(1/(M*H*W)) * sum_m sum_px [lam_m * Y * log X + (1-Y) * log(1-X)]

Classification: gated, doubly weighted multi-label BCE over the 26
requirements; lam_r balances compliant vs non-compliant within a
requirement, beta_r balances requirements against each other, and the
binary gate removes conflicted or unverifiable requirements from both
the loss and its gradient:

    L_cls = -(1/R) * sum_r beta_r * g_r * [lam_r * t_r * log p_r + (1-t_r) * log(1-p_r)]

Probabilities are clamped to [eps, 1-eps] with eps = 1e-7 before the
logs. Batched inputs (leading batch dimension) produce the mean of the
per-sample losses.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np
import torch

from .gating import (  # noqa: F401  (re-exported: the gate lives with the losses)
    ConflictRule,
    default_conflict_rules,
    gate,
    rules_from_config,
    rules_to_config,
)
from .types import (
    ALL_REQUIREMENTS,
    ComplianceLabel,
    DataError,
    GateVector,
    LabelState,
    Requirement,
)

EPS = 1e-7


def _as_tensor(value, name: str) -> torch.Tensor:
    if isinstance(value, GateVector):
        value = value.gates
    if isinstance(value, torch.Tensor):
        return value.double() if not value.is_floating_point() else value
    arr = np.asarray(value)
    if isinstance(arr, np.ndarray) and not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr, dtype=torch.float64)


def seg_loss(x_probs, y, lambda_m) -> torch.Tensor:
    """Weighted multi-label segmentation BCE.

    x_probs: (8,H,W) or (B,8,H,W) probabilities; y: same shape, binary;
    lambda_m: (8,) positive weights. Returns a nonnegative scalar tensor.
    """
    x = _as_tensor(x_probs, "x_probs")
    t = _as_tensor(y, "y")
    lam = _as_tensor(lambda_m, "lambda_m")
    if x.shape != t.shape:
        raise DataError(f"seg_loss shape mismatch: {tuple(x.shape)} vs {tuple(t.shape)}")
    if x.dim() not in (3, 4):
        raise DataError(f"seg_loss expects (8,H,W) or (B,8,H,W), got {tuple(x.shape)}")
    m = x.shape[-3]
    if lam.shape != (m,):
        raise DataError(f"lambda_m must have shape ({m},), got {tuple(lam.shape)}")
    xc = x.clamp(EPS, 1.0 - EPS)
    lam = lam.view(m, 1, 1)
    term = lam * t * torch.log(xc) + (1.0 - t) * torch.log(1.0 - xc)
    per_sample = -term.sum(dim=(-3, -2, -1)) / (m * x.shape[-2] * x.shape[-1])
    return per_sample.mean()


def cls_loss(p, t, gates, lambda_r, beta_r) -> torch.Tensor:
    """Gated, doubly weighted multi-label classification BCE.

    p: (R,) or (B,R) non-compliance probabilities; t: same shape binary
    targets (1 = non-compliant); gates: same shape or (R,), 0/1;
    lambda_r, beta_r: (R,) weights. A gate of 0 removes the requirement's
    term entirely, so its gradient is exactly zero.
    """
    pp = _as_tensor(p, "p")
    tt = _as_tensor(t, "t")
    gg = _as_tensor(gates, "gates")
    lam = _as_tensor(lambda_r, "lambda_r")
    beta = _as_tensor(beta_r, "beta_r")
    if pp.shape != tt.shape:
        raise DataError(f"cls_loss shape mismatch: {tuple(pp.shape)} vs {tuple(tt.shape)}")
    r = pp.shape[-1]
    for name, arr in (("lambda_r", lam), ("beta_r", beta)):
        if arr.shape != (r,):
            raise DataError(f"{name} must have shape ({r},), got {tuple(arr.shape)}")
    if gg.shape != pp.shape and gg.shape != (r,):
        raise DataError(f"gates must have shape ({r},) or match p, got {tuple(gg.shape)}")
    pc = pp.clamp(EPS, 1.0 - EPS)
    term = lam * tt * torch.log(pc) + (1.0 - tt) * torch.log(1.0 - pc)
    per_sample = -(beta * gg * term).sum(dim=-1) / r
    return per_sample.mean()


def targets_from_labels(labels: Mapping[Requirement, ComplianceLabel]) -> np.ndarray:
    """Binary target vector: 1 where the label is non-compliant."""
    t = np.zeros(len(ALL_REQUIREMENTS), dtype=np.float64)
    for req in ALL_REQUIREMENTS:
        label = labels.get(req)
        if label is not None and label.state is LabelState.NON_COMPLIANT:
            t[req.value - 1] = 1.0
    return t
