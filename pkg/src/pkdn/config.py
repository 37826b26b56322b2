"""Flat ``key = value`` run configuration with command-line overrides."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .networks import ConfigError, NetConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    # network
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
    # trainer
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    data_seed: int = 0
    checkpoint_every: int = 500
    # data: a paired directory, or a synthetic corpus when data_dir is empty
    data_dir: str = ""
    synth_count: int = 32
    synth_size: int = 32
    synth_seed: int = 1

    def net_config(self) -> NetConfig:
        names = {f.name for f in fields(NetConfig)}
        return NetConfig(**{k: v for k, v in vars(self).items() if k in names})

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps, seed=self.data_seed,
                           checkpoint_every=self.checkpoint_every)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_render(getattr(self, f.name))}\n" for f in fields(self))


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def coerce(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_text(text: str, origin: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values


def load(path=None, overrides: dict | None = None) -> RunConfig:
    """File values first, then overrides (raw strings or typed values) on top."""
    values = parse_text(Path(path).read_text(), str(path)) if path else {}
    for key, val in (overrides or {}).items():
        values[key] = coerce(key, val) if isinstance(val, str) else val
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
    rc = RunConfig(**values)
    rc.net_config()  # validates network fields
    if rc.steps < 0 or rc.batch_size < 1:
        raise ConfigError("steps must be >= 0 and batch_size >= 1")
    return rc
