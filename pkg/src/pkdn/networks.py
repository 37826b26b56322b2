"""Teacher and student encoder-decoder networks.

Both networks share one topology::

    up  = bicubic(lr, scale)                      # fixed, H x W
    x   = head(up)                                # conv 3 -> C
    for each stage:   x = fusion(x); keep x; x = down(x); tap
    x   = fusion(x)                               # bottleneck
    for each stage:   x = up(x); tap; x = FFB(x, kept); x = fusion(x)
    sr  = tail(x) + up                            # conv C -> 3, global residual

``fusion`` is ``blocks_per_stage`` PFBs (teacher, fed the parsing map) or
RCAGs (student).  With every weight at zero the output is exactly ``up``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import ops
from .blocks import FFB, PFB, RCAG, Conv, Downsample, Module, Upsample
from .resample import upsample_matrices
from .tensor import ShapeError, Tensor, element_mode


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 16
    stages: int = 2
    blocks_per_stage: int = 1
    n_classes: int = 4
    scale: int = 4
    lambda_ts: float = 1.0
    lambda_fs: float = 0.05
    rcab_per_group: int = 2
    reduction: int = 4
    spatial_kernel: int = 7
    element_mode: str = "float32"
    use_pfb: bool = True
    use_ffb: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        s = self.scale
        if s < 1 or s & (s - 1):
            raise ConfigError(f"scale must be a power of two, got {s}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.blocks_per_stage < 1 or self.rcab_per_group < 1:
            raise ConfigError("blocks_per_stage and rcab_per_group must be >= 1")
        if self.base_channels < 1 or self.n_classes < 1:
            raise ConfigError("base_channels and n_classes must be positive")
        if self.lambda_ts < 0 or self.lambda_fs < 0:
            raise ConfigError("lambda weights must be non-negative")
        if self.reduction < 1 or self.base_channels % self.reduction:
            raise ConfigError(f"base_channels={self.base_channels} not divisible by reduction={self.reduction}")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ConfigError(f"spatial_kernel must be odd, got {self.spatial_kernel}")
        if self.element_mode not in ("float32", "float64"):
            raise ConfigError(f"element_mode must be float32 or float64, got {self.element_mode!r}")

    @property
    def dtype(self):
        return np.float32 if self.element_mode == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "NetConfig":
        return replace(self, **changes)


DESK = NetConfig()
FULL = NetConfig(base_channels=64, stages=3, scale=8, n_classes=19, reduction=16)


@dataclass
class ForwardResult:
    sr: Tensor
    taps: list  # one Tensor per down/up block, execution order


class EncoderStage(Module):
    def __init__(self, blocks, channels, rng):
        self.blocks = blocks
        self.down = Downsample(channels, rng)


class DecoderStage(Module):
    def __init__(self, blocks, channels, reduction, use_ffb, rng):
        self.up = Upsample(channels, rng)
        self.ffb = FFB(channels, reduction, rng) if use_ffb else None
        self.blocks = blocks


class PKDNet(Module):
    """Encoder-decoder SR network; ``role`` is "teacher" or "student"."""

    def __init__(self, cfg: NetConfig, role: str):
        if role not in ("teacher", "student"):
            raise ValueError(f"role must be teacher or student, got {role!r}")
        cfg.validate()
        self._cfg = cfg
        self._role = role
        self._frozen = False
        self._uses_parsing = role == "teacher" and cfg.use_pfb
        rng = np.random.default_rng(cfg.seed)
        c = cfg.base_channels
        with element_mode(cfg.element_mode):
            self.head = Conv(3, c, 3, rng)
            self.encoder = [EncoderStage(self._fusion(rng), c, rng) for _ in range(cfg.stages)]
            self.bottleneck = self._fusion(rng)
            self.decoder = [DecoderStage(self._fusion(rng), c, cfg.reduction, cfg.use_ffb, rng)
                            for _ in range(cfg.stages)]
            self.tail = Conv(c, 3, 3, rng)
        self.assign_names()

    def _fusion(self, rng):
        cfg = self._cfg
        if self._uses_parsing:
            return [PFB(cfg.base_channels, cfg.n_classes, cfg.reduction, cfg.spatial_kernel, rng)
                    for _ in range(cfg.blocks_per_stage)]
        return [RCAG(cfg.base_channels, cfg.reduction, cfg.rcab_per_group, rng)
                for _ in range(cfg.blocks_per_stage)]

    @property
    def cfg(self) -> NetConfig:
        return self._cfg

    @property
    def role(self) -> str:
        return self._role

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def dtype(self):
        return self._cfg.dtype

    def freeze(self) -> "PKDNet":
        for p in self.parameters():
            p.freeze()
        self._frozen = True
        return self

    def _as_tensor(self, x, what: str) -> Tensor:
        if isinstance(x, Tensor):
            if x.dtype != self.dtype:
                x = Tensor(x.data, dtype=self.dtype)
            return x
        arr = np.asarray(x)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4:
            raise ShapeError(f"{what} must be (n, c, h, w), got shape {arr.shape}")
        return Tensor(arr, dtype=self.dtype)

    def _apply_fusion(self, blocks, x, parsing):
        for block in blocks:
            x = block(x, parsing) if self._uses_parsing else block(x)
        return x

    def forward(self, lr, parsing=None) -> ForwardResult:
        cfg = self._cfg
        lr = self._as_tensor(lr, "lr")
        n, ch, h, w = lr.shape
        if ch != 3:
            raise ShapeError(f"lr must have 3 channels, got c={ch}")
        H, W = h * cfg.scale, w * cfg.scale
        k = 2 ** cfg.stages
        if H % k or W % k:
            raise ShapeError(f"output size {H}x{W} not divisible by 2^stages={k}")
        if self._role == "teacher":
            if parsing is None:
                raise ShapeError("the teacher needs a parsing map (n, n_classes, H, W)")
            parsing = self._as_tensor(parsing, "parsing")
            if parsing.shape != (n, cfg.n_classes, H, W):
                raise ShapeError(f"parsing shape {parsing.shape} != expected {(n, cfg.n_classes, H, W)}")

        mh, mw = upsample_matrices(h, w, cfg.scale, self.dtype)
        up = ops.resample(lr, mh, mw)
        x = self.head(up)
        kept, taps = [], []
        for stage in self.encoder:
            x = self._apply_fusion(stage.blocks, x, parsing)
            kept.append(x)
            x = stage.down(x)
            taps.append(x)
        x = self._apply_fusion(self.bottleneck, x, parsing)
        for stage in self.decoder:
            x = stage.up(x)
            taps.append(x)
            prev = kept.pop()
            if stage.ffb is not None:
                x = stage.ffb(x, prev)
            x = self._apply_fusion(stage.blocks, x, parsing)
        return ForwardResult(ops.add(self.tail(x), up), taps)


TeacherNet = PKDNet
StudentNet = PKDNet


def build_teacher(cfg: NetConfig) -> PKDNet:
    return PKDNet(cfg, "teacher")


def build_student(cfg: NetConfig) -> PKDNet:
    return PKDNet(cfg, "student")


def teacher_forward(net: PKDNet, lr, parsing) -> ForwardResult:
    if net.role != "teacher":
        raise ValueError("teacher_forward needs a teacher network")
    return net(lr, parsing)


def student_forward(net: PKDNet, lr) -> ForwardResult:
    if net.role != "student":
        raise ValueError("student_forward needs a student network")
    return net(lr)


def build(cfg: NetConfig, role: str) -> PKDNet:
    return PKDNet(cfg, role)
