from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ..errors import LandmarkDetectionError, MissingFileError
from .faces import IMAGE_SIZE, align_and_crop, alignment_matrix, detect_landmarks
from .manifest import Manifest, Sample, list_frames, write_manifest

log = logging.getLogger(__name__)


def load_rgb(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise MissingFileError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def load_image_tensor(path) -> np.ndarray:
    """Read a preprocessed crop as a 3x224x224 float32 array in [0, 1]."""
    img = load_rgb(path)
    if img.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"{path}: expected a {IMAGE_SIZE}x{IMAGE_SIZE} crop, got {img.shape[:2]}; run preprocess first")
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32) / 255.0


def save_image_tensor(path, chw: np.ndarray) -> None:
    hwc = np.round(np.clip(chw, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)
    cv2.imwrite(str(path), cv2.cvtColor(hwc, cv2.COLOR_RGB2BGR))


def load_landmark_file(path) -> dict[Path, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        raw = json.load(fh)
    return {(path.parent / k).resolve(): np.asarray(v, dtype=np.float64) for k, v in raw.items()}


@dataclass
class PreprocessReport:
    processed: int = 0
    skipped: list[str] = field(default_factory=list)

    def as_dict(self):
        return {"processed": self.processed, "skipped": len(self.skipped), "skipped_clips": self.skipped}


def preprocess_manifest(manifest: Manifest, out_dir, landmarks: dict | None = None,
                        manifest_name: str = "manifest.csv") -> tuple[Manifest, PreprocessReport]:
    """Align and crop every frame of every clip to 224x224.

    One similarity transform per clip, estimated on the onset frame and applied
    to all frames so that inter-frame motion is not disturbed by alignment jitter.
    With ``landmarks`` (frame path -> 5x2) those points are used, otherwise the
    detector runs. Clips whose landmarks cannot be found are skipped and counted.
    """
    out = Path(out_dir)
    report = PreprocessReport()
    kept = []
    for s in manifest.samples:
        onset_path = s.frame_paths[s.onset_idx]
        try:
            onset = load_rgb(onset_path)
            if landmarks is not None:
                key = Path(onset_path).resolve()
                if key not in landmarks:
                    raise LandmarkDetectionError(f"no landmarks for {onset_path}")
                pts = landmarks[key]
            else:
                pts = detect_landmarks(onset)
            alignment_matrix(pts)
        except LandmarkDetectionError as exc:
            log.warning("skipping clip %s/%s: %s", s.subject_id, s.clip_id, exc)
            report.skipped.append(f"{s.dataset_id}/{s.subject_id}/{s.clip_id}")
            continue
        clip_dir = out / "frames" / s.dataset_id / s.subject_id / s.clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        for k, fp in enumerate(s.frame_paths):
            img = onset if k == s.onset_idx else load_rgb(fp)
            save_image_tensor(clip_dir / f"frame_{k:04d}.png", align_and_crop(img, pts))
        kept.append(Sample(
            dataset_id=s.dataset_id,
            subject_id=s.subject_id,
            clip_id=s.clip_id,
            frames_dir=clip_dir.resolve(),
            frame_paths=list_frames(clip_dir.resolve()),
            onset_idx=s.onset_idx,
            apex_idx=s.apex_idx,
            offset_idx=s.offset_idx,
            label=s.label,
            is_macro=s.is_macro,
        ))
        report.processed += 1
    if report.skipped:
        log.warning("%d of %d clips skipped (landmark failure)", len(report.skipped), len(manifest))
    result = Manifest(kept, manifest.dataset_id, list(manifest.label_schema))
    write_manifest(result, out / manifest_name)
    return result, report
