"""Masked binary segmentation losses.

Every loss takes ``(logits, target, valid)`` tensors of the same shape and
returns a non-negative scalar. Pixels with ``valid == 0`` never enter a sum
or a mean. Dice, Jaccard and Lovász pool all valid pixels of the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F

LOSS_NAMES = ("BCELoss", "DiceLoss", "FocalLoss", "JaccardLoss", "LovaszLoss")

LossFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    name: str
    smooth_eps: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 1.0

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise LossError(f"unknown loss {self.name!r}; valid names: {', '.join(LOSS_NAMES)}")
        if self.smooth_eps <= 0:
            raise LossError("smooth_eps must be > 0")
        if self.focal_gamma < 0:
            raise LossError("focal_gamma must be >= 0")


def _flat_valid(logits, target, valid):
    if logits.shape != target.shape or logits.shape != valid.shape:
        raise LossError(f"shape mismatch: logits {tuple(logits.shape)}, target {tuple(target.shape)}, valid {tuple(valid.shape)}")
    m = valid.reshape(-1) > 0
    z = logits.reshape(-1)[m]
    y = target.reshape(-1)[m].to(logits.dtype)
    return z, y


def _require_pixels(z):
    if z.numel() == 0:
        raise LossError("no valid pixels")


def bce(logits, target, valid) -> torch.Tensor:
    z, y = _flat_valid(logits, target, valid)
    _require_pixels(z)
    return F.binary_cross_entropy_with_logits(z, y, reduction="mean")


def dice_loss(logits, target, valid, smooth_eps: float = 1.0) -> torch.Tensor:
    z, y = _flat_valid(logits, target, valid)
    p = torch.sigmoid(z)
    inter = (p * y).sum()
    return 1.0 - (2.0 * inter + smooth_eps) / (p.sum() + y.sum() + smooth_eps)


def jaccard_loss(logits, target, valid, smooth_eps: float = 1.0) -> torch.Tensor:
    z, y = _flat_valid(logits, target, valid)
    p = torch.sigmoid(z)
    inter = (p * y).sum()
    return 1.0 - (inter + smooth_eps) / (p.sum() + y.sum() - inter + smooth_eps)


def focal_loss(logits, target, valid, gamma: float = 2.0, alpha: float = 1.0) -> torch.Tensor:
    z, y = _flat_valid(logits, target, valid)
    _require_pixels(z)
    # log p_t = logsigmoid(s * z) with s = +1 for positives, -1 for negatives
    log_pt = F.logsigmoid((2.0 * y - 1.0) * z)
    if gamma == 0:
        mod = torch.ones_like(log_pt)
    else:
        mod = (-torch.expm1(log_pt)).clamp_min(0.0) ** gamma
    return (-alpha * mod * log_pt).mean()


def lovasz_grad(gt_sorted: torch.Tensor) -> torch.Tensor:
    """Gradient of the Lovász extension of the Jaccard loss w.r.t. sorted errors."""
    gts = gt_sorted.sum()
    intersection = gts - gt_sorted.cumsum(0)
    union = gts + (1.0 - gt_sorted).cumsum(0)
    jaccard = 1.0 - intersection / union
    if gt_sorted.numel() > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1].clone()
    return jaccard


def lovasz_loss(logits, target, valid) -> torch.Tensor:
    """Binary Lovász hinge over all valid pixels; 0 without positives."""
    z, y = _flat_valid(logits, target, valid)
    if z.numel() == 0 or y.sum() == 0:
        return (z * 0.0).sum()
    signs = 2.0 * y - 1.0
    errors = (1.0 - z * signs).clamp_min(0.0)
    errors_sorted, perm = torch.sort(errors, descending=True, stable=True)
    grad = lovasz_grad(y[perm])
    return torch.dot(errors_sorted, grad)


def get_loss(config: LossConfig | str) -> LossFn:
    if isinstance(config, str):
        config = LossConfig(config)
    name = config.name
    if name == "BCELoss":
        return bce
    if name == "DiceLoss":
        return lambda z, y, v: dice_loss(z, y, v, config.smooth_eps)
    if name == "JaccardLoss":
        return lambda z, y, v: jaccard_loss(z, y, v, config.smooth_eps)
    if name == "FocalLoss":
        return lambda z, y, v: focal_loss(z, y, v, config.focal_gamma, config.focal_alpha)
    return lovasz_loss


REGISTRY: dict[str, LossFn] = {name: get_loss(name) for name in LOSS_NAMES}
