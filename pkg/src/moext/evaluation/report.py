"""Report emission: JSON, CSV summary and optional plots."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from ..training import FINETUNE_COLUMNS, PRETRAIN_COLUMNS, write_history_csv

SUMMARY_COLUMNS = ("protocol", "dataset", "uf1", "uar", "acc", "n_samples")


def summary_rows(report: dict) -> list[dict]:
    agg = report["aggregate"]
    rows = [{"protocol": report["protocol"], "dataset": agg["dataset"], **{k: agg[k] for k in SUMMARY_COLUMNS[2:]}}]
    if len(report["per_dataset"]) > 1:
        for ds, m in report["per_dataset"].items():
            rows.append({"protocol": report["protocol"], "dataset": ds, **{k: m[k] for k in SUMMARY_COLUMNS[2:]}})
    return rows


def write_report(report: dict, out_dir, plots: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "summary": out / "summary.csv"}
    with paths["report"].open("w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    with paths["summary"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in summary_rows(report):
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    hist = report.get("histories", {})
    if hist.get("pretrain"):
        paths["pretrain_history"] = write_history_csv(hist["pretrain"], out / "pretrain_history.csv", PRETRAIN_COLUMNS)
    for subject, h in hist.get("folds", {}).items():
        tag = subject.replace("/", "_")
        write_history_csv(h["finetune"], out / "folds" / f"{tag}_finetune.csv", FINETUNE_COLUMNS)
        if h.get("pretrain"):
            write_history_csv(h["pretrain"], out / "folds" / f"{tag}_pretrain.csv", PRETRAIN_COLUMNS)
    if plots:
        paths.update(plot_report(report, out))
    (out / "config_hash.txt").write_text(report.get("config_hash", "") + "\n")
    return paths


def plot_report(report: dict, out: Path) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    from .metrics import ConfusionMatrix, summarize

    classes = report["class_names"]
    counts = np.array(report["aggregate"]["confusion"])
    fig, ax = plt.subplots(figsize=(1.2 * len(classes) + 2, 1.2 * len(classes) + 1.5))
    ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(len(classes)):
        for j in range(len(classes)):
            ax.text(j, i, int(counts[i, j]), ha="center", va="center")
    ax.set_title(f"{report['protocol']}  UF1={report['aggregate']['uf1']:.3f}  UAR={report['aggregate']['uar']:.3f}")
    fig.tight_layout()
    cm_path = out / "confusion_matrix.png"
    fig.savefig(cm_path, dpi=100)
    plt.close(fig)

    names, accs = [], []
    for f in report["folds"]:
        cm = ConfusionMatrix(np.array(f["confusion"]), classes)
        names.append(f["subject"])
        accs.append(summarize(cm)["acc"])
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(names) + 2), 3))
    ax.bar(range(len(names)), accs)
    ax.set_xticks(range(len(names)), names, rotation=90)
    ax.set_ylim(0, 1)
    ax.set_ylabel("fold accuracy")
    fig.tight_layout()
    fold_path = out / "fold_accuracy.png"
    fig.savefig(fold_path, dpi=100)
    plt.close(fig)
    return {"confusion_plot": cm_path, "fold_plot": fold_path}
