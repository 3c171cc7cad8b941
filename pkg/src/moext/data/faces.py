"""Five-point landmark detection and similarity alignment to a 224x224 crop.

Landmark order everywhere: left eye, right eye, nose, left mouth corner,
right mouth corner. "Left" means smaller image x.
"""

from __future__ import annotations

import cv2
import numpy as np
from scipy import ndimage

from ..errors import LandmarkDetectionError

IMAGE_SIZE = 224

# Canonical positions as fractions of the output width/height.
TEMPLATE_FRACTIONS = np.array(
    [
        [0.35, 0.40],
        [0.65, 0.40],
        [0.50, 0.55],
        [0.38, 0.72],
        [0.62, 0.72],
    ]
)


def template(size: int = IMAGE_SIZE) -> np.ndarray:
    return TEMPLATE_FRACTIONS * size


def similarity_transform(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares similarity (rotation, uniform scale, translation) mapping src -> dst.

    Closed form of Umeyama (1991). Returns a 2x3 matrix.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    s0, d0 = src - mu_s, dst - mu_d
    var_s = (s0**2).sum() / len(src)
    if var_s == 0:
        raise LandmarkDetectionError("degenerate landmarks (all points coincide)")
    cov = d0.T @ s0 / len(src)
    u, sig, vt = np.linalg.svd(cov)
    d = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[-1] = -1
    rot = u @ np.diag(d) @ vt
    scale = (sig * d).sum() / var_s
    mat = np.empty((2, 3))
    mat[:, :2] = scale * rot
    mat[:, 2] = mu_d - scale * rot @ mu_s
    return mat


def apply_affine(mat: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ mat[:, :2].T + mat[:, 2]


def to_chw_float(image: np.ndarray) -> np.ndarray:
    """HxWx3 uint8 (or float in [0,1]) -> 3xHxW float32 in [0,1]."""
    if image.dtype == np.uint8:
        out = image.astype(np.float32) / 255.0
    else:
        out = np.clip(image.astype(np.float32), 0.0, 1.0)
    if out.ndim == 2:
        out = np.repeat(out[:, :, None], 3, axis=2)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def alignment_matrix(landmarks: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    return similarity_transform(landmarks, template(size))


def align_and_crop(image: np.ndarray, landmarks: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Warp ``image`` so its landmarks land on the canonical template.

    ``image`` is HxWx3 RGB (uint8 or float in [0,1]); returns 3 x size x size float32.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.shape != (5, 2):
        raise ValueError(f"expected 5 landmarks, got shape {landmarks.shape}")
    h, w = image.shape[:2]
    if np.any(landmarks < 0) or np.any(landmarks[:, 0] > w - 1) or np.any(landmarks[:, 1] > h - 1):
        raise LandmarkDetectionError("landmarks outside image bounds")
    mat = alignment_matrix(landmarks, size)
    if (h, w) == (size, size) and np.allclose(mat, [[1, 0, 0], [0, 1, 0]], atol=1e-9):
        return to_chw_float(image)
    warped = cv2.warpAffine(
        image, mat, (size, size), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
    )
    return to_chw_float(warped)


def _components(mask: np.ndarray, min_area: int = 4):
    labels, n = ndimage.label(mask)
    comps = []
    for i in range(1, n + 1):
        ys, xs = np.nonzero(labels == i)
        if len(xs) >= min_area:
            comps.append((xs.astype(np.float64), ys.astype(np.float64)))
    return comps


def _mouth_corners(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    pts = np.stack([xs, ys], 1)
    c = pts.mean(0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    axis = vt[0]
    proj = (pts - c) @ axis
    lo = pts[proj <= proj.min() + 0.75].mean(0)
    hi = pts[proj >= proj.max() - 0.75].mean(0)
    corners = np.stack([lo, hi])
    return corners[np.argsort(corners[:, 0])]


def detect_landmarks(image: np.ndarray) -> np.ndarray:
    """Locate the five alignment landmarks on a rendered synthetic face.

    Works on the parametric faces produced by the synthetic generator: eyes and
    nostrils are near-black blobs, lips are saturated red. Real footage needs an
    external landmark file instead (see ``preprocess``).
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise LandmarkDetectionError("expected an HxWx3 RGB image")
    img = image.astype(np.float32)
    if img.max() <= 1.0:
        img = img * 255.0
    r, g, b = img[..., 0], img[..., 1], img[..., 2]

    mouth = _components((r > 140) & (g < 70) & (b < 80), min_area=8)
    if not mouth:
        raise LandmarkDetectionError("no mouth region found")
    mx, my = max(mouth, key=lambda c: len(c[0]))
    corners = _mouth_corners(mx, my)
    mouth_y = my.mean()

    dark = _components(img.max(axis=2) < 60)
    dark = [c for c in dark if c[1].mean() < mouth_y]
    if len(dark) < 4:
        raise LandmarkDetectionError(f"expected eyes and nostrils, found {len(dark)} dark regions")
    dark.sort(key=lambda c: len(c[0]), reverse=True)
    eyes = np.array([[xs.mean(), ys.mean()] for xs, ys in dark[:2]])
    eyes = eyes[np.argsort(eyes[:, 0])]
    eye_y = eyes[:, 1].mean()
    nostrils = [c for c in dark[2:] if eye_y < c[1].mean() < mouth_y]
    if len(nostrils) < 2:
        raise LandmarkDetectionError("nose not found")
    nostrils = np.array([[xs.mean(), ys.mean()] for xs, ys in nostrils[:2]])
    nose = nostrils.mean(0)
    return np.vstack([eyes, nose[None], corners])


def mirror_landmarks(points: np.ndarray, width: int) -> np.ndarray:
    """Reflect landmarks horizontally and restore left/right ordering."""
    p = np.asarray(points, dtype=np.float64).copy()
    p[:, 0] = (width - 1) - p[:, 0]
    return p[[1, 0, 2, 4, 3]]
