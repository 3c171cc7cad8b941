"""Parametric cartoon faces with class-specific deformations.

Each subject has its own pose, skin tone, skin texture and feature spacing.
Each class is a fixed direction in a small space of facial-action
parameters; a clip ramps from neutral (onset) to the deformed apex and back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .faces import IMAGE_SIZE
from .manifest import Manifest, Sample, list_frames, write_manifest

RAW_SIZE = 256
CLASS_NAMES = ("happiness", "surprise", "disgust", "sadness", "anger", "fear", "contempt")
ACTION_KEYS = (
    "brow_raise",
    "brow_inner_down",
    "brow_inner_up",
    "eye_open",
    "corner_up",
    "corner_out",
    "mouth_open",
    "asym",
)
# Displacements in canonical pixels (224 frame) at unit amplitude; eye_open is relative.
CLASS_ACTIONS = {
    "happiness": dict(corner_up=7.0, corner_out=6.0, eye_open=-0.3),
    "surprise": dict(brow_raise=8.0, eye_open=0.45, mouth_open=9.0),
    "disgust": dict(brow_inner_down=6.0, eye_open=-0.4, corner_up=-2.0, corner_out=-4.0),
    "sadness": dict(brow_inner_up=7.0, corner_up=-7.0),
    "anger": dict(brow_inner_down=7.0, brow_raise=-3.0, corner_out=-5.0, mouth_open=-2.0),
    "fear": dict(brow_raise=5.0, brow_inner_up=4.0, corner_out=6.0, eye_open=0.35),
    "contempt": dict(asym=8.0),
}
SKIN_TONES = np.array(
    [[224, 172, 110], [241, 194, 135], [198, 140, 96], [165, 110, 80], [250, 215, 175]], dtype=np.float64
)
MICRO_FRAMES, MICRO_APEX = 9, 4
MACRO_FRAMES, MACRO_APEX = 15, 9
MACRO_GAIN = 3.0


def class_names(n_classes: int) -> list[str]:
    names = list(CLASS_NAMES[:n_classes])
    names += [f"class_{i:02d}" for i in range(len(names), n_classes)]
    return names


def class_action(name: str) -> dict[str, float]:
    if name in CLASS_ACTIONS:
        return CLASS_ACTIONS[name]
    idx = int(name.split("_")[1])
    rng = np.random.default_rng(1000 + idx)
    vec = rng.normal(size=len(ACTION_KEYS))
    vec *= 8.0 / np.linalg.norm(vec)
    vec[ACTION_KEYS.index("eye_open")] /= 20.0
    return dict(zip(ACTION_KEYS, vec))


@dataclass(frozen=True)
class Subject:
    skin: np.ndarray
    background: np.ndarray
    spacing: float
    mouth_width: float
    pose: np.ndarray  # 2x3 canonical -> raw
    texture: np.ndarray  # RAW_SIZE x RAW_SIZE additive shading


def make_subject(rng: np.random.Generator) -> Subject:
    skin = SKIN_TONES[rng.integers(len(SKIN_TONES))] + rng.uniform(-8, 8, 3)
    background = np.array([190.0, 195.0, 205.0]) + rng.uniform(-15, 15, 3)
    angle = rng.uniform(-8, 8)
    scale = rng.uniform(0.95, 1.08)
    shift = rng.uniform(-10, 10, 2)
    c = IMAGE_SIZE / 2
    pose = cv2.getRotationMatrix2D((c, c), angle, scale)
    pose[:, 2] += (RAW_SIZE - IMAGE_SIZE) / 2 + shift
    noise = rng.normal(size=(RAW_SIZE // 16 + 1, RAW_SIZE // 16 + 1))
    texture = cv2.resize(noise, (RAW_SIZE, RAW_SIZE), interpolation=cv2.INTER_CUBIC) * 6.0
    return Subject(
        skin=np.clip(skin, 0, 255),
        background=background,
        spacing=rng.uniform(0.93, 1.07),
        mouth_width=rng.uniform(0.92, 1.08),
        pose=pose,
        texture=texture,
    )


def _ellipse(cx, cy, ax, ay, n=48):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.stack([cx + ax * np.cos(t), cy + ay * np.sin(t)], 1)


def _bezier(p0, p1, p2, n=16):
    t = np.linspace(0, 1, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def face_geometry(subject: Subject, action: dict[str, float]):
    """Canonical-frame polygons and landmarks for one frame."""
    a = {k: action.get(k, 0.0) for k in ACTION_KEYS}
    cx = IMAGE_SIZE / 2
    eye_y = 0.40 * IMAGE_SIZE
    eye_dx = 0.15 * IMAGE_SIZE * subject.spacing
    eye_open = max(0.15, 1.0 + a["eye_open"])
    polys = {"eyes": [], "brows": [], "nostrils": []}
    eye_centers = []
    for side in (-1, 1):
        ex = cx + side * eye_dx
        eye_centers.append((ex, eye_y))
        polys["eyes"].append(_ellipse(ex, eye_y, 11.0, 5.5 * eye_open))
        by = eye_y - 17.0 - a["brow_raise"]
        inner_dy = a["brow_inner_down"] - a["brow_inner_up"]
        inner = np.array([ex - side * 13.0, by + inner_dy])
        outer = np.array([ex + side * 13.0, by])
        d = outer - inner
        nrm = np.array([-d[1], d[0]]) / np.linalg.norm(d) * 2.2
        polys["brows"].append(np.array([inner + nrm, outer + nrm, outer - nrm, inner - nrm]))
    nose_y = 0.55 * IMAGE_SIZE
    for side in (-1, 1):
        polys["nostrils"].append(_ellipse(cx + side * 5.0, nose_y, 2.8, 2.2, n=24))

    mouth_y = 0.72 * IMAGE_SIZE
    half_w = 0.12 * IMAGE_SIZE * subject.mouth_width + a["corner_out"]
    left = np.array([cx - half_w, mouth_y - a["corner_up"] + a["asym"] * 0.2])
    right = np.array([cx + half_w, mouth_y - a["corner_up"] - a["asym"]])
    open_ = max(0.0, a["mouth_open"])
    press = min(0.0, a["mouth_open"])
    top = np.array([cx, mouth_y - 7.0 - 0.3 * a["corner_up"] - press * 0.5])
    bottom = np.array([cx, mouth_y + 9.0 + 2.0 * open_ + press - 0.3 * a["corner_up"]])
    upper = _bezier(left, top, right)
    lower = _bezier(right, bottom, left)[1:-1]
    polys["mouth"] = [np.vstack([upper, lower])]
    nose = np.array([cx, nose_y])
    landmarks = np.array([eye_centers[0], eye_centers[1], nose, left, right])
    return polys, landmarks


def _fill(canvas, poly, color):
    pts = np.round(poly * 16).astype(np.int32)
    cv2.fillPoly(canvas, [pts], color=tuple(float(c) for c in color), lineType=cv2.LINE_AA, shift=4)


def render_frame(subject: Subject, action: dict[str, float], pose: np.ndarray | None = None,
                 size: int = RAW_SIZE):
    """Render one RGB frame; returns (uint8 HxWx3 image, 5x2 landmarks in image coords)."""
    pose = subject.pose if pose is None else pose
    polys, landmarks = face_geometry(subject, action)

    def to_img(p):
        return p @ pose[:, :2].T + pose[:, 2]

    head = np.zeros((size, size), np.uint8)
    _fill(head, to_img(_ellipse(IMAGE_SIZE / 2, IMAGE_SIZE * 0.53, 80.0, 104.0, n=96)), (255,))
    mask = head.astype(np.float64)[..., None] / 255.0
    texture = subject.texture[:size, :size, None] if subject.texture.shape[0] >= size else 0.0
    skin = subject.skin[None, None, :] + texture
    img = subject.background[None, None, :] * (1 - mask) + skin * mask
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    img = np.ascontiguousarray(img)
    for poly in polys["brows"]:
        _fill(img, to_img(poly), (85, 55, 35))
    for poly in polys["eyes"]:
        _fill(img, to_img(poly), (15, 15, 20))
    for poly in polys["nostrils"]:
        _fill(img, to_img(poly), (25, 15, 15))
    for poly in polys["mouth"]:
        _fill(img, to_img(poly), (200, 25, 35))
    return img, to_img(landmarks)


def _write_png(path: Path, rgb: np.ndarray) -> None:
    cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))


def _clip_intensities(n_frames: int, apex: int) -> np.ndarray:
    k = np.arange(n_frames, dtype=np.float64)
    up = k / apex
    down = (n_frames - 1 - k) / (n_frames - 1 - apex)
    return np.where(k <= apex, up, down)


def generate_synthetic_dataset(
    out_dir,
    n_subjects: int,
    clips_per_subject: int,
    n_classes: int,
    seed: int = 0,
    macro_clips_per_subject: int = 0,
    motion_scale: float = 1.0,
    dataset_id: str = "SYNTH",
) -> Manifest:
    """Write frames, ``manifest.csv``, ``landmarks.json`` (and ``macro_manifest.csv``) under ``out_dir``.

    Returns the micro-expression manifest.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    names = class_names(n_classes)
    landmarks: dict[str, list] = {}
    micro, macro = [], []
    counter = 0
    for s in range(n_subjects):
        sid = f"s{s + 1:02d}"
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        subject = make_subject(rng)
        specs = []
        for c in range(clips_per_subject):
            specs.append((f"{sid}_c{c:02d}", names[counter % n_classes], False))
            counter += 1
        for c in range(macro_clips_per_subject):
            specs.append((f"{sid}_m{c:02d}", names[(s + c) % n_classes], True))
        for clip_id, label, is_macro in specs:
            gain = rng.uniform(0.85, 1.15) * motion_scale * (MACRO_GAIN if is_macro else 1.0)
            n_frames, apex = (MACRO_FRAMES, MACRO_APEX) if is_macro else (MICRO_FRAMES, MICRO_APEX)
            direction = class_action(label)
            clip_dir = out / "frames" / sid / clip_id
            clip_dir.mkdir(parents=True, exist_ok=True)
            for k, w in enumerate(_clip_intensities(n_frames, apex)):
                action = {key: val * gain * w for key, val in direction.items()}
                img, lm = render_frame(subject, action)
                path = clip_dir / f"frame_{k:03d}.png"
                _write_png(path, img)
                landmarks[path.relative_to(out).as_posix()] = np.round(lm, 4).tolist()
            sample = Sample(
                dataset_id=dataset_id,
                subject_id=sid,
                clip_id=clip_id,
                frames_dir=clip_dir.resolve(),
                frame_paths=list_frames(clip_dir.resolve()),
                onset_idx=0,
                apex_idx=apex,
                offset_idx=n_frames - 1,
                label=label,
                is_macro=is_macro,
            )
            (macro if is_macro else micro).append(sample)
    schema = sorted(names)
    manifest = Manifest(micro, dataset_id, schema)
    write_manifest(manifest, out / "manifest.csv")
    if macro:
        write_manifest(Manifest(macro, dataset_id, schema), out / "macro_manifest.csv")
    with (out / "landmarks.json").open("w") as fh:
        json.dump(landmarks, fh, indent=0, sort_keys=True)
    return manifest
