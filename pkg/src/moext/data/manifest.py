"""Sample manifests: one CSV row per expression clip."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ManifestParseError, MissingFileError, SchemaError

DATASET_IDS = ("CASME2", "SAMM", "SMIC_HS", "CASME3_A", "SYNTH")
MANIFEST_HEADER = (
    "dataset_id",
    "subject_id",
    "clip_id",
    "frames_dir",
    "onset_idx",
    "apex_idx",
    "offset_idx",
    "label",
    "is_macro",
)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
MACRO_PSEUDO_APEX_N = 5


@dataclass(frozen=True)
class Sample:
    dataset_id: str
    subject_id: str
    clip_id: str
    frames_dir: Path
    frame_paths: tuple[Path, ...]
    onset_idx: int
    apex_idx: int | None
    offset_idx: int
    label: str
    is_macro: bool = False

    @property
    def key(self) -> tuple[str, str]:
        """Subject identity across datasets."""
        return (self.dataset_id, self.subject_id)

    def validate(self) -> None:
        if not self.frame_paths:
            raise ValueError(f"clip {self.clip_id}: no frames")
        n = len(self.frame_paths)
        idx = [self.onset_idx, self.offset_idx]
        if self.apex_idx is not None:
            idx.append(self.apex_idx)
        if any(i < 0 or i >= n for i in idx):
            raise ValueError(f"clip {self.clip_id}: frame index out of range [0, {n})")
        if self.onset_idx > self.offset_idx:
            raise ValueError(f"clip {self.clip_id}: onset_idx > offset_idx")
        if self.apex_idx is not None and not self.onset_idx <= self.apex_idx <= self.offset_idx:
            raise ValueError(f"clip {self.clip_id}: apex_idx outside [onset_idx, offset_idx]")


@dataclass
class Manifest:
    samples: list[Sample]
    dataset_id: str
    label_schema: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.label_schema:
            self.label_schema = sorted({s.label for s in self.samples})
        self.validate()

    def validate(self) -> None:
        schema = set(self.label_schema)
        seen = set()
        for s in self.samples:
            if s.label not in schema:
                raise SchemaError(f"label {s.label!r} of clip {s.clip_id} not in schema {self.label_schema}")
            # Composite manifests may reuse subject/clip ids across datasets.
            k = (s.dataset_id, s.subject_id, s.clip_id)
            if k in seen:
                raise SchemaError(f"duplicate clip {'/'.join(k)}")
            seen.add(k)

    def __len__(self):
        return len(self.samples)

    @property
    def subjects(self) -> list[tuple[str, str]]:
        return sorted({s.key for s in self.samples})

    def label_index(self, label: str) -> int:
        return self.label_schema.index(label)

    def subset(self, samples) -> "Manifest":
        return Manifest(list(samples), self.dataset_id, list(self.label_schema))


def resolve_apex(sample: Sample, macro_pseudo_apex_n: int = MACRO_PSEUDO_APEX_N) -> int:
    """Index of the frame used as the apex.

    Macro clips use a pseudo-apex ``macro_pseudo_apex_n - 1`` frames after onset
    so their motion amplitude is comparable to micro clips.
    """
    if not sample.frame_paths:
        raise ValueError(f"clip {sample.clip_id}: empty frame list")
    if sample.is_macro:
        return min(sample.onset_idx + macro_pseudo_apex_n - 1, sample.offset_idx)
    if sample.apex_idx is not None:
        return sample.apex_idx
    return (sample.onset_idx + sample.offset_idx) // 2


def list_frames(frames_dir: Path) -> tuple[Path, ...]:
    return tuple(sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_manifest(path, dataset_id: str | None = None, label_schema=None) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    root = path.parent
    samples = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestParseError(f"bad header, expected {','.join(MANIFEST_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestParseError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}", line=lineno)
            rec = dict(zip(MANIFEST_HEADER, (c.strip() for c in row)))
            try:
                ds = rec["dataset_id"]
                if ds not in DATASET_IDS:
                    raise ValueError(f"unknown dataset_id {ds!r}")
                if dataset_id is not None and ds != dataset_id:
                    raise ValueError(f"dataset_id {ds!r} does not match expected {dataset_id!r}")
                frames_dir = (root / rec["frames_dir"]).resolve()
                if not frames_dir.is_dir():
                    raise ValueError(f"frames_dir not found: {frames_dir}")
                sample = Sample(
                    dataset_id=ds,
                    subject_id=rec["subject_id"],
                    clip_id=rec["clip_id"],
                    frames_dir=frames_dir,
                    frame_paths=list_frames(frames_dir),
                    onset_idx=int(rec["onset_idx"]),
                    apex_idx=int(rec["apex_idx"]) if rec["apex_idx"] else None,
                    offset_idx=int(rec["offset_idx"]),
                    label=rec["label"],
                    is_macro=_parse_bool(rec["is_macro"]),
                )
                sample.validate()
            except ValueError as exc:
                raise ManifestParseError(str(exc), line=lineno) from None
            if sample.apex_idx is None:
                sample = replace(sample, apex_idx=resolve_apex(sample))
            samples.append(sample)
    if dataset_id is None:
        ids = {s.dataset_id for s in samples}
        dataset_id = ids.pop() if len(ids) == 1 else "MIXED"
    return Manifest(samples, dataset_id, list(label_schema) if label_schema else [])


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for s in manifest.samples:
            w.writerow([
                s.dataset_id,
                s.subject_id,
                s.clip_id,
                Path(os.path.relpath(s.frames_dir, root)).as_posix(),
                s.onset_idx,
                "" if s.apex_idx is None else s.apex_idx,
                s.offset_idx,
                s.label,
                int(s.is_macro),
            ])
    return path
