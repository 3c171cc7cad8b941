"""Label schemas, LOSO splits and the SDE/CDE protocol runner."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..checkpoint import Checkpoint
from ..data.manifest import Manifest, Sample
from ..errors import ConfigError, MissingDatasetError
from ..training import (
    TrainConfig,
    classifier_from_checkpoint,
    finetune,
    load_pairs,
    predict,
    pretrain,
    select_pretrain_samples,
)
from .metrics import ConfusionMatrix, summarize

log = logging.getLogger(__name__)

CDE_CLASSES = ("negative", "positive", "surprise")
CDE_MAP = {
    "happiness": "positive",
    "positive": "positive",
    "surprise": "surprise",
    "negative": "negative",
    "disgust": "negative",
    "repression": "negative",
    "anger": "negative",
    "contempt": "negative",
    "fear": "negative",
    "sadness": "negative",
}
LABEL_ALIASES = {"happy": "happiness", "surprised": "surprise", "repressed": "repression", "other": "others"}
CASME2_5 = ("happiness", "disgust", "repression", "surprise", "others")
SAMM_5 = ("happiness", "anger", "contempt", "surprise", "others")


@dataclass(frozen=True)
class Protocol:
    name: str
    datasets: tuple[str, ...]
    classes: tuple[str, ...] | None  # None: keep the manifest's own schema
    mapping: dict | None = None  # None: identity restricted to ``classes``


PROTOCOLS = {
    "SDE_CASME2_5": Protocol("SDE_CASME2_5", ("CASME2",), CASME2_5),
    "SDE_SAMM_5": Protocol("SDE_SAMM_5", ("SAMM",), SAMM_5),
    "SDE_CASME3_3": Protocol("SDE_CASME3_3", ("CASME3_A",), CDE_CLASSES, CDE_MAP),
    "CDE_3": Protocol("CDE_3", ("SMIC_HS", "CASME2", "SAMM"), CDE_CLASSES, CDE_MAP),
    "SDE_SYNTH": Protocol("SDE_SYNTH", ("SYNTH",), None),
}


def get_protocol(name: str, schema_overrides: dict | None = None) -> Protocol:
    if name not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {name!r}; choose from {sorted(PROTOCOLS)}")
    proto = PROTOCOLS[name]
    if schema_overrides and name in schema_overrides:
        proto = replace(proto, classes=tuple(schema_overrides[name]))
    return proto


def normalize_label(label: str) -> str:
    key = label.strip().lower()
    return LABEL_ALIASES.get(key, key)


def map_labels(manifest: Manifest, protocol, schema_overrides: dict | None = None) -> tuple[Manifest, Counter]:
    """Relabel a manifest into the protocol's class schema.

    Returns the mapped manifest and a count of excluded samples per original label.
    """
    proto = protocol if isinstance(protocol, Protocol) else get_protocol(protocol, schema_overrides)
    excluded: Counter = Counter()
    kept = []
    if proto.classes is None:
        return manifest.subset(manifest.samples), excluded
    classes = list(proto.classes)
    for s in manifest.samples:
        label = normalize_label(s.label)
        target = proto.mapping.get(label) if proto.mapping is not None else label
        if target is None or target not in classes:
            excluded[s.label] += 1
            continue
        kept.append(replace(s, label=target))
    if excluded:
        log.info("%s: excluded %d samples with unmapped labels %s", proto.name, sum(excluded.values()),
                 dict(excluded))
    return Manifest(kept, manifest.dataset_id, classes), excluded


def loso_splits(manifest: Manifest) -> list[tuple[list[tuple[str, str]], tuple[str, str]]]:
    """One fold per subject: (training subjects, held-out subject)."""
    subjects = manifest.subjects
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    return [([s for s in subjects if s != test], test) for test in subjects]


def split_manifest(manifest: Manifest, test_subject: tuple[str, str]) -> tuple[Manifest, Manifest]:
    train = [s for s in manifest.samples if s.key != test_subject]
    test = [s for s in manifest.samples if s.key == test_subject]
    return manifest.subset(train), manifest.subset(test)


@dataclass
class FoldResult:
    subject: tuple[str, str]
    true: list[int]
    pred: list[int]
    datasets: list[str]
    confusion: ConfusionMatrix
    n_train: int
    history: list[dict] = field(default_factory=list)
    pretrain_history: list[dict] = field(default_factory=list)

    def to_dict(self):
        return {
            "subject": "/".join(self.subject),
            "n_train": self.n_train,
            "n_test": len(self.true),
            "pairs": [[t, p] for t, p in zip(self.true, self.pred)],
            "confusion": self.confusion.counts.tolist(),
        }


class _PairCache:
    def __init__(self, pseudo_apex_n: int):
        self.n = pseudo_apex_n
        self.store: dict = {}

    def get(self, samples: Sequence[Sample]):
        missing = [s for s in samples if self._key(s) not in self.store]
        for s, pair in zip(missing, load_pairs(missing, self.n)):
            self.store[self._key(s)] = pair
        return [self.store[self._key(s)] for s in samples]

    def _key(self, s: Sample):
        return (s.dataset_id, s.subject_id, s.clip_id, s.is_macro)


@dataclass
class ProtocolSettings:
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(phase="pretrain"))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(phase="finetune"))
    exclude_test_subjects_from_pretrain: bool = False
    schema_overrides: dict = field(default_factory=dict)
    jobs: int = 1


def _combine(manifests: Sequence[Manifest], proto: Protocol, overrides) -> tuple[Manifest, dict]:
    present = {m.dataset_id for m in manifests} | {s.dataset_id for m in manifests for s in m.samples}
    missing = [d for d in proto.datasets if d not in present]
    if missing:
        raise MissingDatasetError(f"protocol {proto.name} needs datasets {list(proto.datasets)}; missing {missing}")
    samples, exclusions, schema = [], {}, None
    for ds in proto.datasets:
        ds_samples = [s for m in manifests for s in m.samples if s.dataset_id == ds and not s.is_macro]
        schemas = [m.label_schema for m in manifests if any(s.dataset_id == ds for s in m.samples)]
        src = Manifest(ds_samples, ds, sorted({l for sc in schemas for l in sc}))
        mapped, excl = map_labels(src, proto, overrides)
        exclusions[ds] = dict(sorted(excl.items()))
        samples.extend(mapped.samples)
        schema = mapped.label_schema if schema is None else schema
    name = proto.datasets[0] if len(proto.datasets) == 1 else "COMPOSITE"
    return Manifest(samples, name, list(schema)), exclusions


def run_protocol(
    protocol: str,
    settings: ProtocolSettings,
    manifests: Sequence[Manifest],
    pretrain_manifests: Sequence[Manifest] = (),
    pretrain_checkpoint: Checkpoint | None = None,
    config_hash: str = "",
) -> dict:
    """LOSO evaluation: per fold, fine-tune on the other subjects and predict the held-out one.

    Metrics come from one confusion matrix summed over all folds.
    """
    proto = get_protocol(protocol, settings.schema_overrides)
    combined, exclusions = _combine(manifests, proto, settings.schema_overrides)
    folds = loso_splits(combined)
    ft_cfg = settings.finetune
    pt_cfg = settings.pretrain
    cache = _PairCache(ft_cfg.macro_pseudo_apex_n)
    pt_sources = list(pretrain_manifests) or [m for m in manifests]

    mode = "none"
    shared = None
    if ft_cfg.ablation.use_pretrained:
        if settings.exclude_test_subjects_from_pretrain:
            if pretrain_checkpoint is not None:
                raise ConfigError("a fixed pretrain checkpoint cannot exclude per-fold test subjects")
            mode = "per_fold_excluding_test_subject"
        elif pretrain_checkpoint is not None:
            mode, shared = "checkpoint", pretrain_checkpoint
        else:
            mode = "shared"
            samples = select_pretrain_samples(pt_sources, pt_cfg)
            shared = pretrain(pt_cfg, pt_sources, pairs=cache.get(samples))

    def run_fold(fold):
        _, test_subject = fold
        train_man, test_man = split_manifest(combined, test_subject)
        ckpt = shared
        if mode == "per_fold_excluding_test_subject":
            samples = select_pretrain_samples(pt_sources, pt_cfg, exclude_subjects=[test_subject])
            assert all(s.key != test_subject for s in samples)
            ckpt = pretrain(pt_cfg, pt_sources, exclude_subjects=[test_subject], pairs=cache.get(samples))
        assert all(s.key != test_subject for s in train_man.samples)
        ft = finetune(ft_cfg, ckpt, train_man, pairs=cache.get(train_man.samples))
        model = classifier_from_checkpoint(ft)
        pred = predict(model, cache.get(test_man.samples)).tolist()
        true = [combined.label_index(s.label) for s in test_man.samples]
        cm = ConfusionMatrix.from_pairs(true, pred, combined.label_schema)
        return FoldResult(
            subject=test_subject,
            true=true,
            pred=pred,
            datasets=[s.dataset_id for s in test_man.samples],
            confusion=cm,
            n_train=len(train_man),
            history=ft.history,
            pretrain_history=ckpt.history if (ckpt is not None and mode == "per_fold_excluding_test_subject") else [],
        )

    if settings.jobs > 1:
        # Folds only touch their own models and explicitly seeded RNGs, so results are order-independent.
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            results = list(pool.map(run_fold, folds))
    else:
        results = [run_fold(f) for f in folds]
    return build_report(proto, combined, results, exclusions, mode, config_hash,
                        shared.history if (shared is not None and mode == "shared") else [])


def aggregate(results: Sequence[FoldResult], class_names) -> ConfusionMatrix:
    total = ConfusionMatrix(np.zeros((len(class_names),) * 2, dtype=np.int64), list(class_names))
    for r in results:
        total = total + r.confusion
    return total


def build_report(proto: Protocol, combined: Manifest, results: Sequence[FoldResult], exclusions: dict,
                 pretrain_mode: str, config_hash: str, pretrain_history=()) -> dict:
    classes = list(combined.label_schema)
    agg = aggregate(results, classes)
    per_dataset = {}
    for ds in proto.datasets:
        true = [t for r in results for t, d in zip(r.true, r.datasets) if d == ds]
        pred = [p for r in results for p, d in zip(r.pred, r.datasets) if d == ds]
        if true:
            cm = ConfusionMatrix.from_pairs(true, pred, classes)
            per_dataset[ds] = {"confusion": cm.counts.tolist(), **summarize(cm)}
    label = "composite" if len(proto.datasets) > 1 else proto.datasets[0]
    return {
        "protocol": proto.name,
        "config_hash": config_hash,
        "class_names": classes,
        "pretrain_mode": pretrain_mode,
        "exclusions": exclusions,
        "n_folds": len(results),
        "folds": [r.to_dict() for r in results],
        "aggregate": {"dataset": label, "confusion": agg.counts.tolist(), **summarize(agg)},
        "per_dataset": per_dataset,
        "histories": {
            "pretrain": list(pretrain_history),
            "folds": {"/".join(r.subject): {"finetune": r.history, "pretrain": r.pretrain_history} for r in results},
        },
    }
