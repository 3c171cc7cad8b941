"""Network components.

Feature separator (backbone + shape/texture branches), motion extractor,
apex-frame reconstructor, projection head and classifier, plus the two
assembled networks used for pre-training and classification.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ArchitectureError, ConfigError, NumericError

IMAGE_SIZE = 224
FEATURE_DIM = 512
BACKBONE_WIDTHS = (64, 128, 256, 512)
BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch


@dataclass(frozen=True)
class ModelConfig:
    width: float = 1.0
    input_downsample: int = 1
    n_classes: int | None = 5
    use_motion_extractor: bool = True
    # Start the texture branch as a copy of the shape branch so the shape/texture
    # hinge is active from the first step; the two branches still train independently.
    tie_branch_init: bool = True

    def ch(self, c: int) -> int:
        return max(1, int(round(c * self.width)))

    @property
    def feat_dim(self) -> int:
        return self.ch(FEATURE_DIM)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def reconstruction_trace(cfg: ModelConfig) -> list[tuple[int, int, int]]:
    """Expected (C, H, W) after each reconstructor stage."""
    c = cfg.ch
    return [
        (2 * cfg.feat_dim, 1, 1),
        (c(512), 8, 8),
        (c(512), 7, 7),
        (c(512), 14, 14),
        (c(256), 28, 28),
        (c(128), 56, 56),
        (c(64), 112, 112),
        (c(32), 112, 112),
        (c(32), 224, 224),
        (3, 224, 224),
    ]


def check_finite(x: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite activations after {name}")
    return x


class ConvBlock(nn.Sequential):
    """Two (3x3 conv, BN, ReLU) units; spatial size preserved."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, 1, 1),
            nn.BatchNorm2d(out_ch, momentum=BN_MOMENTUM),
            nn.ReLU(),
            nn.Conv2d(out_ch, out_ch, 3, 1, 1),
            nn.BatchNorm2d(out_ch, momentum=BN_MOMENTUM),
            nn.ReLU(),
        )


def up_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(in_ch, out_ch, 3, 1, 1),
        nn.BatchNorm2d(out_ch, momentum=BN_MOMENTUM),
        nn.ReLU(),
    )


class Backbone(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.downsample = nn.AvgPool2d(cfg.input_downsample) if cfg.input_downsample > 1 else nn.Identity()
        stages, in_ch = [], 3
        for w in BACKBONE_WIDTHS:
            stages.append(nn.Sequential(ConvBlock(in_ch, cfg.ch(w)), nn.MaxPool2d(2)))
            in_ch = cfg.ch(w)
        self.stages = nn.Sequential(*stages)
        self.out_channels = in_ch

    def forward(self, x):
        return self.stages(self.downsample(x))


class Branch(nn.Module):
    """Conv block, global average pool, fully connected projection to the feature size."""

    def __init__(self, in_ch: int, cfg: ModelConfig):
        super().__init__()
        self.block = ConvBlock(in_ch, cfg.ch(512))
        self.fc = nn.Linear(cfg.ch(512), cfg.feat_dim)

    def forward(self, x):
        x = self.block(x)
        return self.fc(x.mean(dim=(2, 3)))


class FeatureSeparator(nn.Module):
    def __init__(self, cfg: ModelConfig, with_texture: bool = True):
        super().__init__()
        self.backbone = Backbone(cfg)
        self.shape_branch = Branch(self.backbone.out_channels, cfg)
        self.texture_branch = Branch(self.backbone.out_channels, cfg) if with_texture else None

    def shape(self, x):
        g = check_finite(self.backbone(x), "backbone")
        return check_finite(self.shape_branch(g), "shape_branch")

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ArchitectureError(f"expected n x 3 x H x W input, got {tuple(x.shape)}")
        g = check_finite(self.backbone(x), "backbone")
        s = check_finite(self.shape_branch(g), "shape_branch")
        if self.texture_branch is None:
            return s, None
        t = check_finite(self.texture_branch(g), "texture_branch")
        return s, t


class MotionExtractor(nn.Module):
    """M = C2(concat(C1(|S_a - S_o|), S_a)), conv blocks applied to 1x1 maps."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.feat_dim
        self.c1 = ConvBlock(d, d)
        self.c2 = ConvBlock(2 * d, d)

    def forward(self, s_o, s_a):
        if s_o.shape != s_a.shape:
            raise ArchitectureError(f"shape feature mismatch {tuple(s_o.shape)} vs {tuple(s_a.shape)}")
        delta = (s_a - s_o).abs()[:, :, None, None]
        h = torch.cat([self.c1(delta), s_a[:, :, None, None]], dim=1)
        return self.c2(h).flatten(1)


class Reconstructor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.ch
        self.cfg = cfg
        self.expected_trace = reconstruction_trace(cfg)
        self.head = nn.Sequential(
            up_conv(2 * cfg.feat_dim, c(512)), up_conv(c(512), c(512)), up_conv(c(512), c(512))
        )
        self.pool = nn.AvgPool2d(2, 1)
        self.ups = nn.ModuleList([
            up_conv(c(512), c(512)),
            up_conv(c(512), c(256)),
            up_conv(c(256), c(128)),
            up_conv(c(128), c(64)),
        ])
        self.blocks = nn.Sequential(*[ConvBlock(c(64) if i == 0 else c(32), c(32)) for i in range(5)])
        self.final_up = nn.Upsample(scale_factor=2, mode="nearest")
        self.out = nn.Conv2d(c(32), 3, 3, 1, 1)
        self.last_trace: list[tuple[int, int, int]] = []

    def forward(self, m, t_o):
        x = torch.cat([m, t_o], dim=1)[:, :, None, None]
        trace = [tuple(x.shape[1:])]
        x = self.head(x)
        trace.append(tuple(x.shape[1:]))
        x = self.pool(x)
        trace.append(tuple(x.shape[1:]))
        for up in self.ups:
            x = up(x)
            trace.append(tuple(x.shape[1:]))
        x = self.blocks(x)
        trace.append(tuple(x.shape[1:]))
        x = self.final_up(x)
        trace.append(tuple(x.shape[1:]))
        x = F.relu(self.out(x))
        trace.append(tuple(x.shape[1:]))
        self.last_trace = trace
        if trace != self.expected_trace:
            raise ArchitectureError(f"reconstructor shape trace {trace} != expected {self.expected_trace}")
        return x


class Projector(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.feat_dim
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, d)

    def forward(self, v):
        return self.fc2(F.relu(self.fc1(v)))


class Classifier(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.n_classes is None or cfg.n_classes < 2:
            raise ConfigError("classifier needs at least 2 classes")
        self.fc = nn.Linear(cfg.feat_dim, cfg.n_classes)

    def logits(self, m):
        return self.fc(m)

    def forward(self, m):
        return F.softmax(self.fc(m), dim=1)


class PretrainOutput(NamedTuple):
    recon: torch.Tensor
    s_o: torch.Tensor
    s_a: torch.Tensor
    t_o: torch.Tensor
    t_a: torch.Tensor
    m: torch.Tensor


def init_weights(module: nn.Module, seed: int) -> nn.Module:
    g = torch.Generator().manual_seed(seed)
    for layer in module.modules():
        if isinstance(layer, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(layer.weight, mode="fan_in", nonlinearity="relu", generator=g)
            nn.init.zeros_(layer.bias)
        elif isinstance(layer, nn.BatchNorm2d):
            nn.init.ones_(layer.weight)
            nn.init.zeros_(layer.bias)
    return module


class _MotionMixin:
    def motion_features(self, s_o, s_a):
        if self.motion is None:
            if s_o.shape != s_a.shape:
                raise ArchitectureError("shape feature mismatch")
            return (s_a - s_o).abs()
        return self.motion(s_o, s_a)


class PretrainNet(_MotionMixin, nn.Module):
    """Separator, motion extractor, reconstructor and projector used in pre-training."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.separator = FeatureSeparator(cfg, with_texture=True)
        self.motion = MotionExtractor(cfg) if cfg.use_motion_extractor else None
        self.reconstructor = Reconstructor(cfg)
        self.projector = Projector(cfg)
        init_weights(self, seed)
        if cfg.tie_branch_init:
            self.separator.texture_branch.load_state_dict(self.separator.shape_branch.state_dict())

    def forward(self, x_o, x_a) -> PretrainOutput:
        if x_o.shape != x_a.shape:
            raise ArchitectureError("onset and apex batches differ in shape")
        n = x_o.shape[0]
        s, t = self.separator(torch.cat([x_o, x_a]))
        s_o, s_a, t_o, t_a = s[:n], s[n:], t[:n], t[n:]
        m = self.motion_features(s_o, s_a)
        recon = self.reconstructor(m, t_o)
        return PretrainOutput(recon, s_o, s_a, t_o, t_a, m)


class ClassifierNet(_MotionMixin, nn.Module):
    """Shape-only separator, motion extractor and a softmax classifier."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.separator = FeatureSeparator(cfg, with_texture=False)
        self.motion = MotionExtractor(cfg) if cfg.use_motion_extractor else None
        self.classifier = Classifier(cfg)
        init_weights(self, seed)

    def motion_of(self, x_o, x_a):
        n = x_o.shape[0]
        s = self.separator.shape(torch.cat([x_o, x_a]))
        return self.motion_features(s[:n], s[n:])

    def logits(self, x_o, x_a):
        return self.classifier.logits(self.motion_of(x_o, x_a))

    def forward(self, x_o, x_a):
        return self.classifier(self.motion_of(x_o, x_a))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
