from pathlib import Path

import pytest
import torch

from moext.data import generate_synthetic_dataset, load_manifest, preprocess_manifest
from moext.data.preprocess import load_landmark_file
from moext.model import ModelConfig

# Reduced instantiation used wherever a full-width network would be too slow on CPU.
SMALL = ModelConfig(width=0.0625, input_downsample=4, n_classes=3)


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def build_synth(root: Path, n_subjects=6, clips=4, classes=3, macro=2, seed=0):
    raw, proc = root / "raw", root / "proc"
    generate_synthetic_dataset(raw, n_subjects, clips, classes, seed=seed, macro_clips_per_subject=macro)
    landmarks = load_landmark_file(raw / "landmarks.json")
    micro, _ = preprocess_manifest(load_manifest(raw / "manifest.csv"), proc, landmarks)
    macro_man = None
    if macro:
        macro_man, _ = preprocess_manifest(load_manifest(raw / "macro_manifest.csv"), proc, landmarks,
                                           manifest_name="macro_manifest.csv")
    return {"raw": raw, "proc": proc, "micro": micro, "macro": macro_man}


@pytest.fixture(scope="session")
def synth6(tmp_path_factory):
    """6 subjects x 4 micro clips x 3 classes, plus 2 macro clips per subject, aligned."""
    return build_synth(tmp_path_factory.mktemp("synth6"))


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """3 subjects x 3 micro clips x 3 classes, plus 1 macro clip per subject."""
    return build_synth(tmp_path_factory.mktemp("synth_small"), n_subjects=3, clips=3, macro=1)


_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = next((m for m in getattr(report, "_criterion", []) if m), None)
    if marker is None:
        return
    number, title = marker
    verdict = "PASS" if report.outcome == "passed" else "FAIL"
    # Parametrized criteria: any failing case fails the criterion.
    _, prev, spent = _CRITERIA.get(number, (title, "PASS", 0.0))
    _CRITERIA[number] = (title, "FAIL" if "FAIL" in (prev, verdict) else "PASS", spent + report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    rep._criterion = [tuple(m.args)] if m else []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}  ({duration:.1f}s)")
