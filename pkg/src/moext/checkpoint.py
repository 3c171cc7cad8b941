"""Checkpoint archives.

A checkpoint is a zip archive holding ``header.json`` plus one ``.npy``
member per state entry, keyed by its layer path (``separator.backbone...``).
Values are stored as 32-bit floats. Member timestamps are fixed so identical
state produces identical bytes.
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError, MissingFileError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
PHASES = ("pretrain", "finetune")
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
# Layer-path prefixes carried from pre-training into the classifier.
TRANSFER_PREFIXES = ("separator.backbone.", "separator.shape_branch.", "motion.")


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    phase: str
    model_config: dict
    train_config: dict = field(default_factory=dict)
    seed: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise CheckpointError(f"unknown phase tag {self.phase!r}")

    @classmethod
    def from_model(cls, model: nn.Module, phase: str, model_config: dict, **kw) -> "Checkpoint":
        state = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
        return cls(state=state, phase=phase, model_config=dict(model_config), **kw)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "phase": self.phase,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "seed": self.seed,
            "epoch": self.epoch,
            "history": self.history,
            "extra": self.extra,
            "keys": sorted(self.state),
        }


def state_to_torch(state: dict[str, np.ndarray], reference: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    out = {}
    for k, ref in reference.items():
        out[k] = torch.from_numpy(np.asarray(state[k])).to(dtype=ref.dtype).reshape(ref.shape)
    return out


def load_into(model: nn.Module, ckpt: Checkpoint) -> None:
    """Load a checkpoint of the same architecture into ``model`` (strict)."""
    ref = model.state_dict()
    missing = sorted(set(ref) - set(ckpt.state))
    unexpected = sorted(set(ckpt.state) - set(ref))
    if missing or unexpected:
        raise CheckpointError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
    model.load_state_dict(state_to_torch(ckpt.state, ref))


def transfer_pretrained(model: nn.Module, ckpt: Checkpoint) -> list[str]:
    """Copy backbone, shape branch and motion extractor weights from a pre-training checkpoint.

    Returns the ignored keys (texture branch, reconstructor, projector).
    """
    if ckpt.phase != "pretrain":
        raise CheckpointError(f"expected a pretrain checkpoint, got phase {ckpt.phase!r}")
    ref = model.state_dict()
    wanted = [k for k in ref if k.startswith(TRANSFER_PREFIXES)]
    missing = [k for k in wanted if k not in ckpt.state]
    if missing:
        raise CheckpointError(f"pretrain checkpoint lacks {missing[:5]}")
    for k in wanted:
        if tuple(ckpt.state[k].shape) != tuple(ref[k].shape):
            raise CheckpointError(f"{k}: shape {ckpt.state[k].shape} != {tuple(ref[k].shape)}")
    model.load_state_dict(state_to_torch({k: ckpt.state[k] for k in wanted}, {k: ref[k] for k in wanted}),
                          strict=False)
    ignored = sorted(k for k in ckpt.state if k not in set(wanted))
    if ignored:
        log.info("pretrain checkpoint: %d entries not used by the classifier (texture branch, "
                 "reconstructor, projector) were ignored", len(ignored))
    return ignored


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    return info


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_member("header.json"), json.dumps(ckpt.header(), sort_keys=True, indent=1))
        for k in sorted(ckpt.state):
            buf = io.BytesIO()
            np.save(buf, np.array(ckpt.state[k], dtype=np.float32, order="C"), allow_pickle=False)
            zf.writestr(_member(f"state/{k}.npy"), buf.getvalue())
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format version {header.get('format_version')} != supported {FORMAT_VERSION}")
            state = {}
            for k in header["keys"]:
                state[k] = np.load(io.BytesIO(zf.read(f"state/{k}.npy")), allow_pickle=False)
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise CheckpointError(f"corrupt checkpoint archive {path}: {exc}") from None
    return Checkpoint(
        state=state,
        phase=header["phase"],
        model_config=header["model_config"],
        train_config=header.get("train_config", {}),
        seed=header.get("seed", 0),
        epoch=header.get("epoch", 0),
        history=header.get("history", []),
        extra=header.get("extra", {}),
    )
