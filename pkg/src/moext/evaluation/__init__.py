from .metrics import ConfusionMatrix, acc, summarize, uar, uf1
from .protocols import PROTOCOLS, FoldResult, ProtocolSettings, loso_splits, map_labels, run_protocol
from .report import write_report

__all__ = [
    "PROTOCOLS",
    "ConfusionMatrix",
    "FoldResult",
    "ProtocolSettings",
    "acc",
    "loso_splits",
    "map_labels",
    "run_protocol",
    "summarize",
    "uar",
    "uf1",
    "write_report",
]
