"""Two-phase training: self-supervised pre-training, then classifier fine-tuning."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, load_into, transfer_pretrained
from .data.augment import AugmentedPairs, build_expansion_sets
from .data.manifest import Manifest, Sample, resolve_apex
from .data.preprocess import load_image_tensor
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .losses import CrossEntropy, LossConfig, reconstruction_loss, ss_loss, st_loss, total_pretrain_loss
from .model import ClassifierNet, ModelConfig, PretrainNet

log = logging.getLogger(__name__)

PRETRAIN_COLUMNS = ("epoch", "l_re", "l_st", "l_ss", "total")
FINETUNE_COLUMNS = ("epoch", "ce", "train_acc")


@dataclass(frozen=True)
class AblationFlags:
    use_pretrained: bool = True
    use_macro_data: bool = True
    use_motion_extractor: bool = True
    use_st_loss: bool = True
    use_ss_loss: bool = True


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "pretrain"
    batch_size: int = 20
    epochs: int = 30
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    augment: bool = True
    macro_pseudo_apex_n: int = 5
    n_classes: int | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("batch_size, epochs and learning_rate must be positive")

    def to_dict(self):
        return asdict(self)

    def model_config(self, **overrides) -> ModelConfig:
        return replace(self.model, use_motion_extractor=self.ablation.use_motion_extractor, **overrides)


def configure_runtime(deterministic: bool = True, threads: int | None = None) -> None:
    """Single-threaded deterministic kernels, or a bounded thread pool."""
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)
        if threads:
            torch.set_num_threads(threads)


def load_pairs(samples: Sequence[Sample], pseudo_apex_n: int = 5) -> list[tuple[np.ndarray, np.ndarray]]:
    """(onset, apex) crops for each sample; macro clips use the pseudo-apex frame."""
    pairs = []
    for s in samples:
        apex = resolve_apex(s, pseudo_apex_n)
        pairs.append((load_image_tensor(s.frame_paths[s.onset_idx]), load_image_tensor(s.frame_paths[apex])))
    return pairs


def iter_batches(order: np.ndarray, size: int) -> Iterable[np.ndarray]:
    """Consecutive chunks of ``order``; a trailing chunk of one is merged into its predecessor
    because batch normalisation needs at least two samples."""
    chunks = [order[i:i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        params,
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )


def select_pretrain_samples(manifests: Sequence[Manifest], cfg: TrainConfig,
                            exclude_subjects: Iterable[tuple[str, str]] = ()) -> list[Sample]:
    excluded = set(exclude_subjects)
    samples = []
    for man in manifests:
        for s in man.samples:
            if s.is_macro and not cfg.ablation.use_macro_data:
                continue
            if s.key in excluded:
                continue
            samples.append(s)
    return samples


def _expansion_batch(ds: AugmentedPairs, idx: np.ndarray, m: int, seed: int, epoch: int):
    onsets, apexes = [], []
    for k in idx:
        onset, apex = ds[int(k)]
        eo, ea = build_expansion_sets(onset, apex, m, np.random.SeedSequence([seed, epoch, int(k)]))
        onsets.append(eo.instances)
        apexes.append(ea.instances)
    return torch.from_numpy(np.stack(onsets)), torch.from_numpy(np.stack(apexes))


def pretrain_step_losses(model: PretrainNet, x_on: torch.Tensor, x_ap: torch.Tensor, loss_cfg: LossConfig):
    """Losses for one batch of expansion sets.

    ``x_on``/``x_ap`` are (n, m, 3, H, W). Onset instance j is paired with apex
    instance j for reconstruction; all 2m instances enter the contrastive terms.
    """
    n, m = x_on.shape[:2]
    flat_on = x_on.reshape(n * m, *x_on.shape[2:])
    flat_ap = x_ap.reshape(n * m, *x_ap.shape[2:])
    s, t = model.separator(torch.cat([flat_on, flat_ap]))
    s_on, s_ap = s[: n * m], s[n * m:]
    t_on, t_ap = t[: n * m], t[n * m:]
    motion = model.motion_features(s_on, s_ap)
    recon = model.reconstructor(motion, t_on)
    shapes = torch.cat([s_on.view(n, m, -1), s_ap.view(n, m, -1)], dim=1)
    textures = torch.cat([t_on.view(n, m, -1), t_ap.view(n, m, -1)], dim=1)
    l_re = reconstruction_loss(flat_ap, recon)
    l_st = st_loss(shapes, textures, model.projector, loss_cfg.epsilon)
    l_ss = ss_loss(shapes, model.projector, loss_cfg.epsilon)
    return l_re, l_st, l_ss


def effective_loss_config(cfg: TrainConfig) -> LossConfig:
    return replace(
        cfg.loss,
        alpha_1=cfg.loss.alpha_1 if cfg.ablation.use_st_loss else 0.0,
        alpha_2=cfg.loss.alpha_2 if cfg.ablation.use_ss_loss else 0.0,
    )


def pretrain(cfg: TrainConfig, manifests: Sequence[Manifest],
             exclude_subjects: Iterable[tuple[str, str]] = (), pairs=None) -> Checkpoint:
    """Self-supervised pre-training on micro (and, unless ablated, macro) clips.

    Returns the final checkpoint with one history record per epoch. ``pairs``
    may supply already-loaded (onset, apex) crops matching the selected samples.
    """
    cfg = replace(cfg, phase="pretrain")
    samples = select_pretrain_samples(manifests, cfg, exclude_subjects)
    if not samples:
        raise ConfigError("empty pre-training set")
    if pairs is None:
        pairs = load_pairs(samples, cfg.macro_pseudo_apex_n)
    ds = AugmentedPairs(pairs, cfg.seed, enabled=cfg.augment)
    model_cfg = cfg.model_config()
    model = PretrainNet(model_cfg, seed=cfg.seed)
    opt = make_optimizer(model.parameters(), cfg)
    loss_cfg = effective_loss_config(cfg)
    history: list[dict] = []
    extra = {
        "n_samples": len(samples),
        "n_macro": sum(s.is_macro for s in samples),
        "subjects": sorted({"/".join(s.key) for s in samples}),
    }

    def snapshot(epoch):
        return Checkpoint.from_model(model, "pretrain", model_cfg.to_dict(), train_config=cfg.to_dict(),
                                     seed=cfg.seed, epoch=epoch, history=copy.deepcopy(history), extra=extra)

    last_good = snapshot(0)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        sums = dict.fromkeys(PRETRAIN_COLUMNS[1:], 0.0)
        count = 0
        for idx in iter_batches(rng.permutation(len(ds)), cfg.batch_size):
            x_on, x_ap = _expansion_batch(ds, idx, cfg.loss.m, cfg.seed, epoch)
            l_re, l_st, l_ss = pretrain_step_losses(model, x_on, x_ap, cfg.loss)
            values = [float(v.detach()) for v in (l_re, l_st, l_ss)]
            if not all(math.isfinite(v) for v in values):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", checkpoint=last_good)
            total = total_pretrain_loss(l_re, l_st, l_ss, loss_cfg)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            for key, v in zip(PRETRAIN_COLUMNS[1:], values + [float(total.detach())]):
                sums[key] += v * len(idx)
            count += len(idx)
        history.append({"epoch": epoch, **{k: v / count for k, v in sums.items()}})
        log.info("pretrain epoch %d: %s", epoch, history[-1])
        last_good = snapshot(epoch)
    return last_good


def build_classifier(cfg: TrainConfig, n_classes: int, pretrained: Checkpoint | None) -> ClassifierNet:
    if cfg.ablation.use_pretrained:
        if pretrained is None:
            raise CheckpointError("fine-tuning with use_pretrained=true needs a pretrain checkpoint")
        base = ModelConfig.from_dict(pretrained.model_config)
        model_cfg = replace(base, n_classes=n_classes, use_motion_extractor=cfg.ablation.use_motion_extractor)
        model = ClassifierNet(model_cfg, seed=cfg.seed)
        transfer_pretrained(model, pretrained)
    else:
        model = ClassifierNet(cfg.model_config(n_classes=n_classes), seed=cfg.seed)
    return model


def finetune(cfg: TrainConfig, pretrained: Checkpoint | None, manifest: Manifest, pairs=None) -> Checkpoint:
    """Train the shape-only classifier on micro-expression (onset, apex) pairs."""
    cfg = replace(cfg, phase="finetune")
    samples = [s for s in manifest.samples if not s.is_macro]
    if not samples:
        raise ConfigError("empty fine-tuning set")
    n_classes = len(manifest.label_schema)
    if cfg.n_classes is not None and cfg.n_classes != n_classes:
        raise ConfigError(f"class count mismatch: config {cfg.n_classes}, manifest {n_classes}")
    labels = np.array([manifest.label_index(s.label) for s in samples])
    if pairs is None:
        pairs = load_pairs(samples, cfg.macro_pseudo_apex_n)
    ds = AugmentedPairs(pairs, cfg.seed, enabled=cfg.augment)
    model = build_classifier(cfg, n_classes, pretrained)
    opt = make_optimizer(model.parameters(), cfg)
    ce = CrossEntropy()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        loss_sum, correct, count = 0.0, 0, 0
        for idx in iter_batches(rng.permutation(len(ds)), cfg.batch_size):
            items = [ds[int(k)] for k in idx]
            x_on = torch.from_numpy(np.stack([a for a, _ in items]))
            x_ap = torch.from_numpy(np.stack([b for _, b in items]))
            y = torch.from_numpy(labels[[ds.source_index(int(k)) for k in idx]])
            probs = model(x_on, x_ap)
            loss = ce(probs, y)
            if not math.isfinite(float(loss.detach())):
                raise TrainingDivergedError(f"non-finite cross-entropy at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            loss_sum += float(loss.detach()) * len(idx)
            correct += int((probs.argmax(1) == y).sum())
            count += len(idx)
        history.append({"epoch": epoch, "ce": loss_sum / count, "train_acc": correct / count})
        log.info("finetune epoch %d: %s", epoch, history[-1])
    return Checkpoint.from_model(
        model, "finetune", model.cfg.to_dict(), train_config=cfg.to_dict(), seed=cfg.seed,
        epoch=cfg.epochs, history=history,
        extra={"label_schema": list(manifest.label_schema), "clamped": ce.clamped, "n_samples": len(samples)},
    )


def classifier_from_checkpoint(ckpt: Checkpoint) -> ClassifierNet:
    if ckpt.phase != "finetune":
        raise CheckpointError(f"expected a finetune checkpoint, got {ckpt.phase!r}")
    model = ClassifierNet(ModelConfig.from_dict(ckpt.model_config))
    load_into(model, ckpt)
    model.eval()
    return model


@torch.no_grad()
def predict(model: ClassifierNet, pairs: Sequence[tuple[np.ndarray, np.ndarray]], batch_size: int = 32) -> np.ndarray:
    model.eval()
    preds = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        x_on = torch.from_numpy(np.stack([a for a, _ in chunk]))
        x_ap = torch.from_numpy(np.stack([b for _, b in chunk]))
        preds.append(model(x_on, x_ap).argmax(1).numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def write_history_csv(history: Sequence[dict], path, columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in history:
            w.writerow([rec[c] if c == "epoch" else repr(float(rec[c])) for c in columns])
    return path
