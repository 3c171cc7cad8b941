"""Dense optical flow and per-frame polar statistics.

Flow is computed with OpenCV's pyramidal polynomial-expansion method
(Farneback) using fixed parameters, so results are deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

FARNEBACK = dict(pyr_scale=0.5, levels=3, winsize=15, iterations=3, poly_n=5, poly_sigma=1.2, flags=0)
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    @property
    def angle(self) -> np.ndarray:
        a = np.mod(np.arctan2(self.v, self.u), TWO_PI)
        # mod of a tiny negative angle rounds up to exactly 2*pi
        return np.where(a >= TWO_PI, 0.0, a)

    def mean(self, region: tuple[slice, slice] | None = None) -> tuple[float, float]:
        r = region or (slice(None), slice(None))
        return float(self.u[r].mean()), float(self.v[r].mean())


def to_gray_u8(frame) -> np.ndarray:
    """Accept a 3xHxW float tensor in [0, 1], an HxWx3 image or an HxW array."""
    a = np.asarray(frame.detach().cpu() if hasattr(frame, "detach") else frame)
    if a.ndim == 3 and a.shape[0] == 3 and a.shape[-1] != 3:
        a = np.moveaxis(a, 0, -1)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(a.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    if a.ndim == 3:
        a = cv2.cvtColor(np.ascontiguousarray(a), cv2.COLOR_RGB2GRAY)
    if a.ndim != 2:
        raise ValueError(f"unsupported frame shape {a.shape}")
    return a


def dense_flow(frame_a, frame_b) -> FlowField:
    a, b = to_gray_u8(frame_a), to_gray_u8(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if np.array_equal(a, b) or (a.min() == a.max() and b.min() == b.max()):
        z = np.zeros(a.shape, dtype=np.float32)
        return FlowField(z, z.copy())
    flow = cv2.calcOpticalFlowFarneback(a, b, None, **FARNEBACK)
    flow = np.nan_to_num(flow, nan=0.0, posinf=0.0, neginf=0.0)
    return FlowField(flow[..., 0], flow[..., 1])


def circular_mean(angles, weights=None) -> float:
    """Mean direction in [0, 2*pi); 0.0 when the resultant vector vanishes."""
    ang = np.asarray(angles, dtype=np.float64).ravel()
    w = np.ones_like(ang) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    s, c = float((w * np.sin(ang)).sum()), float((w * np.cos(ang)).sum())
    if np.hypot(s, c) < 1e-12:
        return 0.0
    out = float(np.mod(np.arctan2(s, c), TWO_PI))
    return 0.0 if out >= TWO_PI else out


def flow_stats(frames: Sequence, reference_idx: int = 0) -> list[dict]:
    """Mean magnitude and magnitude-weighted circular-mean angle of flow from the reference to every other frame."""
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    if not 0 <= reference_idx < len(frames):
        raise ValueError(f"reference_idx {reference_idx} out of range")
    ref = frames[reference_idx]
    rows = []
    for k, frame in enumerate(frames):
        if k == reference_idx:
            continue
        f = dense_flow(ref, frame)
        mag = f.magnitude
        rows.append({
            "frame_idx": k,
            "mean_magnitude": float(mag.mean()),
            "mean_angle_rad": circular_mean(f.angle, mag),
        })
    return rows


def write_flow_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["frame_idx", "mean_magnitude", "mean_angle_rad"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def plot_flow(rows: list[dict], path, title: str = "") -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    idx = [r["frame_idx"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(idx, [r["mean_magnitude"] for r in rows], marker="o")
    ax1.set_ylabel("mean magnitude (px)")
    ax2.plot(idx, [r["mean_angle_rad"] for r in rows], marker="o", color="tab:orange")
    ax2.set_ylabel("mean angle (rad)")
    ax2.set_xlabel("frame index")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
