"""Pre-training and fine-tuning objectives.

Shape/texture features for a pre-training batch are laid out as
``(n, 2m, d)``: n input sets, each holding m onset-derived instances
followed by m apex-derived instances.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, NumericError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 0.3
    alpha_1: float = 0.5
    alpha_2: float = 1.0
    m: int = 3

    def __post_init__(self):
        if not 0.2 <= self.epsilon <= 0.5:
            raise ConfigError(f"epsilon must lie in [0.2, 0.5], got {self.epsilon}")
        if not (0 <= self.alpha_1 <= 1 and 0 <= self.alpha_2 <= 1):
            raise ConfigError("alpha weights must lie in [0, 1]")
        if self.m < 1:
            raise ConfigError("m must be >= 1")

    def to_dict(self):
        return asdict(self)


def set_labels(m: int) -> torch.Tensor:
    """0 for onset-derived instances, 1 for apex-derived ones."""
    return torch.cat([torch.zeros(m, dtype=torch.long), torch.ones(m, dtype=torch.long)])


def reconstruction_loss(target: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    if target.shape != recon.shape:
        raise ValueError(f"shape mismatch {tuple(target.shape)} vs {tuple(recon.shape)}")
    return (target - recon).abs().mean()


def mean_shape_anchor(shapes: torch.Tensor) -> torch.Tensor:
    if shapes.numel() == 0:
        raise ValueError("no shape features")
    return shapes.reshape(-1, shapes.shape[-1]).mean(0)


def _check_batch(shapes: torch.Tensor, m: int | None = None):
    if shapes.dim() != 3:
        raise ValueError(f"expected (n, 2m, d) features, got {tuple(shapes.shape)}")
    if shapes.shape[1] % 2:
        raise ValueError("second dimension must be 2m")
    if m is not None and shapes.shape[1] != 2 * m:
        raise ValueError(f"expected 2m={2 * m} instances per set, got {shapes.shape[1]}")


def st_loss(shapes: torch.Tensor, textures: torch.Tensor, projector: nn.Module, epsilon: float) -> torch.Tensor:
    """Hinge pushing each shape embedding closer to the batch shape anchor than to its own texture."""
    _check_batch(shapes)
    if shapes.shape != textures.shape:
        raise ValueError("shape and texture features differ in shape")
    d = shapes.shape[-1]
    # One projector call for shapes and anchor so identical rows map to identical embeddings.
    joint = projector(torch.cat([shapes.reshape(-1, d), mean_shape_anchor(shapes)[None]]))
    fs, fbar = joint[:-1].reshape(shapes.shape[:-1] + joint.shape[-1:]), joint[-1]
    ft = projector(textures)
    d_anchor = torch.linalg.vector_norm(fbar - fs, dim=-1)
    d_texture = torch.linalg.vector_norm(fs - ft, dim=-1)
    return torch.relu(d_anchor - d_texture + epsilon).mean()


def ss_loss(shapes: torch.Tensor, projector: nn.Module, epsilon: float) -> torch.Tensor:
    """Within each set: pull same-origin embeddings together, push onset/apex apart to >= epsilon."""
    _check_batch(shapes)
    two_m = shapes.shape[1]
    fs = projector(shapes)
    diff = fs[:, :, None, :] - fs[:, None, :, :]
    dist = torch.linalg.vector_norm(diff, dim=-1)
    y = set_labels(two_m // 2).to(shapes.device)
    same = (y[:, None] == y[None, :])
    terms = torch.where(same, dist, torch.relu(epsilon - dist))
    return terms.mean()


def total_pretrain_loss(l_re, l_st, l_ss, cfg: LossConfig):
    for name, v in (("l_re", l_re), ("l_st", l_st), ("l_ss", l_ss)):
        if not math.isfinite(float(v.detach() if torch.is_tensor(v) else v)):
            raise NumericError(f"{name} is not finite")
    return l_re + cfg.alpha_1 * l_st + cfg.alpha_2 * l_ss


class CrossEntropy:
    """Mean negative log-probability of the true class.

    Probabilities below ``PROB_FLOOR`` are clamped; ``clamped`` counts how
    many true-class entries hit the floor since construction.
    """

    def __init__(self, floor: float = PROB_FLOOR):
        self.floor = floor
        self.clamped = 0

    def __call__(self, probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if probs.dim() != 2:
            raise ValueError("probabilities must be (n, C)")
        if labels.min() < 0 or labels.max() >= probs.shape[1]:
            raise ValueError("label out of range")
        p = probs.gather(1, labels[:, None])[:, 0]
        low = p < self.floor
        self.clamped += int(low.sum())
        return -torch.log(p.clamp_min(self.floor)).mean()


def cross_entropy(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return CrossEntropy()(probs, labels)
