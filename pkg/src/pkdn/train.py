"""Two-stage training: the teacher on L1, then the student under a frozen teacher."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from itertools import islice
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .data import Batch, Sample, dataset_iter
from .losses import LossBreakdown, student_loss, teacher_loss
from .networks import PKDNet
from .optim import Adam
from .tensor import Tape, Tensor, no_grad

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "l_sr", "l_ts", "l_fs", "total", "wall_ms")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class TeacherNotFrozenError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0


@dataclass
class TrainState:
    step: int = 0
    adam_t: int = 0
    seed: int = 0
    history: list = field(default_factory=list)  # LossBreakdown per step

    def to_dict(self) -> dict:
        return {"step": self.step, "adam_t": self.adam_t, "seed": self.seed,
                "history": [asdict(b) for b in self.history]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(d["step"], d["adam_t"], d["seed"], [LossBreakdown(**b) for b in d["history"]])


class LossLog:
    """Append-only tab-separated per-step log."""

    def __init__(self, path, resume: bool = False):
        self.path = Path(path) if path is not None else None
        if self.path is not None and (not resume or not self.path.exists()):
            self.path.write_text("\t".join(LOG_FIELDS) + "\n")

    def write(self, step: int, b: LossBreakdown, wall_ms: float) -> None:
        if self.path is None:
            return
        vals = [str(step), repr(b.l_sr), repr(b.l_ts), repr(b.l_fs), repr(b.total), f"{wall_ms:.3f}"]
        with open(self.path, "a") as fh:
            fh.write("\t".join(vals) + "\n")


def read_log(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


def _batches(samples, tcfg: TrainConfig, skip: int, dtype):
    stream = dataset_iter(samples, tcfg.batch_size, tcfg.seed, epochs=None, dtype=dtype)
    return islice(stream, skip, None)


def _check_batch(batch: Batch, ref: Batch | None, step: int) -> None:
    if ref is None:
        return
    for name, a, b in zip(Batch._fields, batch, ref):
        if a.shape[1:] != b.shape[1:]:
            raise ValueError(f"step {step}: {name} shape drifted from {b.shape[1:]} to {a.shape[1:]}")


def _restore(net: PKDNet, opt: Adam, state: TrainState | None, seed: int) -> TrainState:
    if state is None:
        return TrainState(seed=seed)
    opt.t = state.adam_t
    return state


def _save(net, opt, state, path):
    state.adam_t = opt.t
    checkpoint.save(net, path, train_state=state.to_dict(), with_moments=True)


def _run(net, samples, tcfg, steps, state, run_dir, log_path, step_fn):
    opt = Adam(net.parameters(), tcfg.lr, (tcfg.beta1, tcfg.beta2), tcfg.eps)
    state = _restore(net, opt, state, tcfg.seed)
    logger = LossLog(log_path, resume=state.step > 0)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    ref = None
    for batch in islice(_batches(samples, tcfg, state.step, net.dtype), steps - state.step):
        _check_batch(batch, ref, state.step)
        ref = ref or batch
        t0 = time.perf_counter()
        breakdown = step_fn(batch, state.step)
        opt.step()
        wall = (time.perf_counter() - t0) * 1e3
        state.history.append(breakdown)
        logger.write(state.step, breakdown, wall)
        state.step += 1
        state.adam_t = opt.t
        if run_dir is not None and tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
            _save(net, opt, state, run_dir / f"ckpt_{state.step:06d}.pkdn")
    if run_dir is not None:
        _save(net, opt, state, run_dir / "final.pkdn")
    return state


def train_teacher(net: PKDNet, samples: Sequence[Sample], tcfg: TrainConfig, steps: int | None = None,
                  state: TrainState | None = None, run_dir=None, log_path=None) -> TrainState:
    """Minimize the teacher L1 loss; ``state`` resumes a previous run."""
    if net.role != "teacher":
        raise ValueError("train_teacher needs a teacher network")
    steps = tcfg.steps if steps is None else steps

    def step_fn(batch, step):
        with Tape() as tape:
            loss = teacher_loss(net(batch.lr, batch.parsing).sr, Tensor(batch.hr, dtype=net.dtype))
        val = loss.item()
        if not np.isfinite(val):
            raise NonFiniteLossError(step)
        tape.backward(loss)
        return LossBreakdown(val, 0.0, 0.0, val)

    return _run(net, samples, tcfg, steps, state, run_dir, log_path, step_fn)


def train_student(student: PKDNet, teacher: PKDNet, samples: Sequence[Sample], tcfg: TrainConfig,
                  steps: int | None = None, state: TrainState | None = None, run_dir=None,
                  log_path=None) -> TrainState:
    """Distill a frozen teacher into the student (output and tap losses)."""
    if student.role != "student":
        raise ValueError("train_student needs a student network")
    if not teacher.frozen:
        raise TeacherNotFrozenError("refusing to distill from an unfrozen teacher; call teacher.freeze()")
    steps = tcfg.steps if steps is None else steps
    cfg = student.cfg

    def step_fn(batch, step):
        with no_grad():
            rt = teacher(batch.lr, batch.parsing)
        with Tape() as tape:
            rs = student(batch.lr)
            total, breakdown = student_loss(rs.sr, Tensor(batch.hr, dtype=student.dtype), rt.sr,
                                            rt.taps, rs.taps, cfg)
        if not np.isfinite(breakdown.total):
            raise NonFiniteLossError(step)
        tape.backward(total)
        return breakdown

    return _run(student, samples, tcfg, steps, state, run_dir, log_path, step_fn)


def resume(path) -> tuple[PKDNet, TrainState]:
    net, ts = checkpoint.load(path)
    if ts is None:
        raise checkpoint.CheckpointError(f"{path}: no training state recorded")
    return net, TrainState.from_dict(ts)


def corpus_teacher_loss(net: PKDNet, samples: Sequence[Sample], batch: int = 8) -> float:
    """Mean L1 over a whole corpus, without recording gradients."""
    from .data import stack
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(samples), batch):
            b = stack(samples[i:i + batch], net.dtype)
            sr = net(b.lr, b.parsing).sr
            total += float(np.abs(sr.data.astype(np.float64) - b.hr).sum())
            count += b.hr.size
    return total / count


def corpus_feature_loss(student: PKDNet, teacher: PKDNet, samples: Sequence[Sample], batch: int = 8) -> float:
    """Per-sample-weighted mean of the tap loss over a corpus."""
    from .data import stack
    from .losses import feature_loss
    acc, n = 0.0, 0
    with no_grad():
        for i in range(0, len(samples), batch):
            b = stack(samples[i:i + batch], student.dtype)
            lf = feature_loss(teacher(b.lr, b.parsing).taps, student(b.lr).taps).item()
            acc += lf * len(b.lr)
            n += len(b.lr)
    return acc / n
