"""Independent oracles and fakes shared by the unit and acceptance tests.

The loss oracles are literal loop transcriptions over nested Python lists and
share no code with the library.
"""

import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from moext.checkpoint import Checkpoint
from moext.data.manifest import Manifest, Sample
from moext.evaluation import protocols
from moext.model import (
    Backbone,
    Branch,
    Classifier,
    ConvBlock,
    ModelConfig,
    MotionExtractor,
    Projector,
    Reconstructor,
    init_weights,
)


def ident(x):
    return x


def _norm(a):
    return math.sqrt(sum(v * v for v in a))


def _sub(a, b):
    return [x - y for x, y in zip(a, b)]


def brute_re(x, y):
    flat_x, flat_y = np.asarray(x).ravel().tolist(), np.asarray(y).ravel().tolist()
    return sum(abs(a - b) for a, b in zip(flat_x, flat_y)) / len(flat_x)


def brute_anchor(S):
    n, two_m, d = len(S), len(S[0]), len(S[0][0])
    return [sum(S[i][j][c] for i in range(n) for j in range(two_m)) / (n * two_m) for c in range(d)]


def brute_st(S, T, f, eps):
    n, two_m = len(S), len(S[0])
    fbar = f(brute_anchor(S))
    total = 0.0
    for i in range(n):
        for j in range(two_m):
            fs, ft = f(S[i][j]), f(T[i][j])
            total += max(0.0, _norm(_sub(fbar, fs)) - _norm(_sub(fs, ft)) + eps)
    return total / n / two_m


def brute_ss(S, f, eps):
    n, two_m = len(S), len(S[0])
    m = two_m // 2
    y = [0] * m + [1] * m
    total = 0.0
    for i in range(n):
        for j in range(two_m):
            for k in range(two_m):
                d = _norm(_sub(f(S[i][j]), f(S[i][k])))
                total += d if y[j] == y[k] else max(0.0, eps - d)
    return total / n / two_m / two_m


class MLP(torch.nn.Module):
    def __init__(self, d, seed):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.w1 = torch.nn.Parameter(torch.randn(d, d, generator=g, dtype=torch.float64))
        self.b1 = torch.nn.Parameter(torch.randn(d, generator=g, dtype=torch.float64))
        self.w2 = torch.nn.Parameter(torch.randn(d, d, generator=g, dtype=torch.float64))

    def forward(self, v):
        return torch.relu(v @ self.w1.T + self.b1) @ self.w2.T

    def py(self, v):
        w1, b1, w2 = self.w1.tolist(), self.b1.tolist(), self.w2.tolist()
        h = [max(0.0, sum(w1[r][c] * v[c] for c in range(len(v))) + b1[r]) for r in range(len(v))]
        return [sum(w2[r][c] * h[c] for c in range(len(h))) for r in range(len(h))]


# Directional finite-difference checks in float64. A random direction in input
# and parameter space avoids per-parameter loops on a network this size.
# Biases are randomised: with zero biases, channels fed by dead ReLU regions sit
# exactly on the ReLU kink, where one-sided differences disagree with any subgradient.
def directional_check(fn, tensors, seed=0, h=1e-6):
    g = torch.Generator().manual_seed(seed)
    dirs = [torch.randn(t.shape, generator=g, dtype=torch.float64) for t in tensors]
    out = fn()
    grads = torch.autograd.grad(out, tensors)
    analytic = sum((gr * d).sum() for gr, d in zip(grads, dirs)).item()
    with torch.no_grad():
        for t, d in zip(tensors, dirs):
            t.add_(h * d)
        plus = fn().item()
        for t, d in zip(tensors, dirs):
            t.sub_(2 * h * d)
        minus = fn().item()
        for t, d in zip(tensors, dirs):
            t.add_(h * d)
    numeric = (plus - minus) / (2 * h)
    assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-10, (analytic, numeric)


def weighted_sum(y, seed=1):
    w = torch.randn(y.shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return (y * w).sum()




TINY = ModelConfig(width=1 / 64, input_downsample=4, n_classes=3)
COMPONENTS = ("conv_block", "backbone", "branch", "motion", "reconstructor", "projector", "classifier")


def component_case(name, seed=0):
    """A float64 module at tiny width plus inputs that require grad."""
    torch.manual_seed(seed)
    d = TINY.feat_dim
    if name == "conv_block":
        mod, inputs = ConvBlock(3, 4), [torch.rand(2, 3, 10, 10)]
    elif name == "backbone":
        mod, inputs = Backbone(TINY), [torch.rand(2, 3, 224, 224)]
    elif name == "branch":
        mod, inputs = Branch(TINY.ch(512), TINY), [torch.rand(4, TINY.ch(512), 14, 14)]
    elif name == "motion":
        mod, inputs = MotionExtractor(TINY), [torch.randn(6, d), torch.randn(6, d)]
    elif name == "reconstructor":
        mod, inputs = Reconstructor(TINY), [torch.randn(2, d), torch.randn(2, d)]
    elif name == "projector":
        mod, inputs = Projector(TINY), [torch.randn(3, d)]
    elif name == "classifier":
        mod, inputs = Classifier(TINY), [torch.randn(3, d)]
    else:
        raise KeyError(name)
    mod = init_weights(mod.double(), seed)
    g = torch.Generator().manual_seed(seed + 9)
    with torch.no_grad():
        for pname, p in mod.named_parameters():
            if pname.endswith("bias"):
                p.copy_(0.1 * torch.randn(p.shape, generator=g, dtype=torch.float64))
    # Deep stacks use batch norm as a fixed affine map: batch statistics over a few
    # samples leave near-constant channels that amplify kink crossings by 1/sqrt(eps).
    mod.train(name not in ("backbone", "reconstructor"))
    return mod, [x.double().requires_grad_() for x in inputs]


def expand(counts):
    """Confusion matrix back to a list of (true, predicted) samples."""
    return [(t, p) for t in range(len(counts)) for p in range(len(counts)) for _ in range(int(counts[t][p]))]


def brute_metrics(counts):
    pairs = expand(counts)
    classes = [c for c in range(len(counts)) if any(t == c for t, _ in pairs)]
    recalls, f1s = [], []
    for c in classes:
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        recalls.append(Fraction(tp, tp + fn))
        f1s.append(Fraction(2 * tp, 2 * tp + fp + fn))
    correct = sum(1 for t, p in pairs if t == p)
    return (float(sum(f1s) / len(f1s)), float(sum(recalls) / len(recalls)), float(Fraction(correct, len(pairs))))


def fake_sample(ds, subject, clip, label, macro=False):
    paths = tuple(Path(f"/virtual/{ds}/{subject}/{clip}/{k}.png") for k in range(9))
    return Sample(ds, subject, clip, Path(f"/virtual/{ds}/{subject}/{clip}"), paths, 0, 4, 8, label, macro)


def fake_manifest(ds, subjects, labels, clips=3, macro=0):
    samples = []
    for s in subjects:
        for c in range(clips):
            samples.append(fake_sample(ds, s, f"{s}_c{c}", labels[(c + len(samples)) % len(labels)]))
        for c in range(macro):
            samples.append(fake_sample(ds, s, f"{s}_m{c}", labels[c % len(labels)], macro=True))
    return Manifest(samples, ds)


class Recorder:
    """Stands in for the training calls; records which samples each call saw."""

    def __init__(self):
        self.pretrain_calls = []
        self.finetune_calls = []

    def install(self, monkeypatch):
        monkeypatch.setattr(protocols, "load_pairs", lambda samples, n=5: [(s.key, s.clip_id) for s in samples])
        monkeypatch.setattr(protocols, "pretrain", self.pretrain)
        monkeypatch.setattr(protocols, "finetune", self.finetune)
        monkeypatch.setattr(protocols, "classifier_from_checkpoint", lambda ckpt: ckpt)
        monkeypatch.setattr(protocols, "predict", self.predict)

    def pretrain(self, cfg, manifests, exclude_subjects=(), pairs=None):
        samples = protocols.select_pretrain_samples(manifests, cfg, exclude_subjects)
        self.pretrain_calls.append({s.key for s in samples})
        assert [p[1] for p in pairs] == [s.clip_id for s in samples]
        return Checkpoint({}, "pretrain", {}, history=[{"epoch": 1, "l_re": 0.1, "l_st": 0.0, "l_ss": 0.0,
                                                         "total": 0.1}])

    def finetune(self, cfg, ckpt, manifest, pairs=None):
        self.finetune_calls.append({s.key for s in manifest.samples})
        return Checkpoint({}, "finetune", {}, history=[{"epoch": 1, "ce": 1.0, "train_acc": 0.5}],
                          extra={"schema": list(manifest.label_schema)})

    @staticmethod
    def predict(model, pairs):
        return np.array([int(clip.rsplit("_c", 1)[-1]) % 3 for _, clip in pairs])
