"""Training-set augmentation (mirror + rotations) and contrastive expansion sets.

Images are 3xHxW float32 arrays in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import cv2
import numpy as np

from ..errors import ConfigError

AUGMENT_FACTOR = 10
N_ROTATIONS = 8
MAX_ROTATION_DEG = 10.0
NOISE_AMPLITUDE = 0.05
CONTRAST_GAIN = 1.3
EXPANSION_OPS = ("noise", "contrast", "grayscale")
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def mirror(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, :, ::-1])


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    _, h, w = img.shape
    mat = cv2.getRotationMatrix2D(((w - 1) / 2, (h - 1) / 2), degrees, 1.0)
    hwc = np.ascontiguousarray(img.transpose(1, 2, 0))
    out = cv2.warpAffine(hwc, mat, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0).transpose(2, 0, 1))


def plan_augmentations(n_pairs: int, seed: int) -> list[list[tuple[str, float]]]:
    """Per pair: the original, its mirror and eight random rotations in [-10, 10] degrees."""
    plans = []
    for i in range(n_pairs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        angles = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG, N_ROTATIONS)
        plans.append([("identity", 0.0), ("mirror", 0.0)] + [("rotate", float(a)) for a in angles])
    return plans


def apply_op(img: np.ndarray, op: tuple[str, float]) -> np.ndarray:
    kind, value = op
    if kind == "identity":
        return img
    if kind == "mirror":
        return mirror(img)
    if kind == "rotate":
        return rotate(img, value)
    raise ValueError(f"unknown augmentation {kind!r}")


class AugmentedPairs(Sequence):
    """Lazy tenfold view over (onset, apex) pairs; the same op is applied to both frames."""

    def __init__(self, pairs: Sequence, seed: int, enabled: bool = True):
        self.pairs = pairs
        self.enabled = enabled
        self.plans = plan_augmentations(len(pairs), seed) if enabled else None
        self.factor = AUGMENT_FACTOR if enabled else 1

    def __len__(self):
        return len(self.pairs) * self.factor

    def source_index(self, k: int) -> int:
        return k // self.factor

    def __getitem__(self, k):
        if not 0 <= k < len(self):
            raise IndexError(k)
        onset, apex = self.pairs[k // self.factor]
        if not self.enabled:
            return onset, apex
        op = self.plans[k // self.factor][k % self.factor]
        return apply_op(onset, op), apply_op(apex, op)


def augment_training_set(pairs: Sequence, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    return list(AugmentedPairs(pairs, seed))


def add_noise(img: np.ndarray, rng: np.random.Generator, amplitude: float = NOISE_AMPLITUDE) -> np.ndarray:
    noise = rng.uniform(-amplitude, amplitude, img.shape).astype(np.float32)
    return np.clip(img + noise, 0.0, 1.0)


def increase_contrast(img: np.ndarray, gain: float = CONTRAST_GAIN) -> np.ndarray:
    mean = img.mean(dtype=np.float64)
    return np.clip((img - mean) * gain + mean, 0.0, 1.0).astype(np.float32)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    gray = np.tensordot(LUMA, img, axes=1).astype(np.float32)
    return np.ascontiguousarray(np.broadcast_to(gray, img.shape))


def apply_expansion_op(img: np.ndarray, op: str, rng: np.random.Generator) -> np.ndarray:
    if op == "noise":
        return add_noise(img, rng)
    if op == "contrast":
        return increase_contrast(img)
    if op == "grayscale":
        return to_grayscale(img)
    raise ValueError(f"unknown expansion op {op!r}")


@dataclass
class ExpansionSet:
    instances: np.ndarray  # m x 3 x H x W
    origin: str  # "onset" or "apex"
    ops: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.instances)


def build_expansion_sets(onset: np.ndarray, apex: np.ndarray, m: int, seed) -> tuple[ExpansionSet, ExpansionSet]:
    """Original frame plus m-1 distinct augmentations, the same op list for onset and apex."""
    if m < 1:
        raise ConfigError("expansion set size m must be >= 1")
    if m - 1 > len(EXPANSION_OPS):
        raise ConfigError(f"m-1={m - 1} exceeds the {len(EXPANSION_OPS)} available augmentation ops")
    rng = np.random.default_rng(seed)
    ops = [EXPANSION_OPS[i] for i in rng.choice(len(EXPANSION_OPS), size=m - 1, replace=False)]
    sets = []
    for img, origin in ((onset, "onset"), (apex, "apex")):
        inst = [img] + [apply_expansion_op(img, op, rng) for op in ops]
        sets.append(ExpansionSet(np.stack(inst).astype(np.float32, copy=False), origin, list(ops)))
    return sets[0], sets[1]
