"""pkdn command line: selftest | synth | train-teacher | train-student | eval | infer.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint, config, data, metrics
from .checkpoint import CheckpointError
from .data import DataError, SyntheticSpec
from .networks import ConfigError, build_student, build_teacher
from .tensor import ShapeError, no_grad
from .train import NonFiniteLossError, TrainState, train_student, train_teacher

log = logging.getLogger("pkdn")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


VALIDATION_ERRORS = (UsageError, ConfigError, DataError, ShapeError, CheckpointError, FileNotFoundError)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    grp = p.add_argument_group("config overrides (win over the file)")
    for f in fields(config.RunConfig):
        grp.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar=f.type.upper())


def _run_config(args) -> config.RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return config.load(args.config, overrides)


def _samples(rc: config.RunConfig, data_dir: str = ""):
    root = data_dir or rc.data_dir
    if root:
        return data.load_directory(root, rc.scale, rc.n_classes)
    return data.synthetic_samples(SyntheticSpec(rc.synth_count, rc.synth_size, rc.synth_seed, rc.n_classes), rc.scale)


def _prepare_run_dir(path, rc: config.RunConfig) -> Path:
    run_dir = Path(path)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(rc.to_text())
    return run_dir


def _resume_state(run_dir: Path, role: str, rc):
    ckpts = list(run_dir.glob("ckpt_*.pkdn")) + list(run_dir.glob("final.pkdn"))
    if not ckpts:
        return None, None
    latest = max(ckpts, key=lambda p: p.stat().st_mtime_ns)
    net, ts = checkpoint.load(latest, rc.net_config(), role)
    if ts is None:
        raise UsageError(f"{latest} carries no training state to resume from")
    log.info("resuming from %s at step %d", latest, ts["step"])
    return net, TrainState.from_dict(ts)


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    ok, _ = run_selftest(seed=args.seed)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_synth(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    spec = SyntheticSpec(args.count, args.size, args.seed, 4)
    try:
        stems = data.write_synthetic(spec, args.out)
    except PermissionError as exc:
        raise UsageError(f"cannot write to {args.out}: {exc}") from exc
    print(f"wrote {len(stems)} pairs to {args.out}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    rc = _run_config(args)
    run_dir = _prepare_run_dir(args.run_dir, rc)
    samples = _samples(rc)
    net, state = _resume_state(run_dir, "teacher", rc) if args.resume else (None, None)
    net = net or build_teacher(rc.net_config())
    state = train_teacher(net, samples, rc.train_config(), state=state, run_dir=run_dir,
                          log_path=run_dir / "train_log.tsv")
    last = state.history[-1].total if state.history else float("nan")
    print(f"teacher: {state.step} steps, last L_T={last:.6f}, checkpoint {run_dir / 'final.pkdn'}")
    return EXIT_OK


def cmd_train_student(args) -> int:
    rc = _run_config(args)
    teacher_path = Path(args.teacher)
    if not teacher_path.is_file():
        raise UsageError(f"teacher checkpoint not found: {teacher_path}")
    teacher, _ = checkpoint.load(teacher_path, role="teacher")
    cfg = rc.net_config()
    tc = teacher.cfg
    if (tc.base_channels, tc.stages, tc.scale) != (cfg.base_channels, cfg.stages, cfg.scale):
        raise UsageError("teacher and student must share base_channels, stages and scale so their taps align")
    if tc.n_classes != cfg.n_classes:
        raise UsageError(f"teacher expects n_classes={tc.n_classes}, config has {cfg.n_classes}")
    teacher.freeze()
    run_dir = _prepare_run_dir(args.run_dir, rc)
    samples = _samples(rc)
    net, state = _resume_state(run_dir, "student", rc) if args.resume else (None, None)
    net = net or build_student(cfg)
    state = train_student(net, teacher, samples, rc.train_config(), state=state, run_dir=run_dir,
                          log_path=run_dir / "train_log.tsv")
    last = state.history[-1] if state.history else None
    if last is not None:
        print(f"student: {state.step} steps, last total={last.total:.6f} "
              f"(l_sr={last.l_sr:.6f}, l_ts={last.l_ts:.6f}, l_fs={last.l_fs:.6f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    if bool(args.ckpt) == bool(args.baseline):
        raise UsageError("give exactly one of --ckpt or --baseline")
    if args.ckpt:
        net, _ = checkpoint.load(args.ckpt)
        scale, n_classes = net.cfg.scale, net.cfg.n_classes
        model = metrics.predictor(net)
    else:
        scale, n_classes = args.scale, args.n_classes
        model = metrics.bicubic_baseline(scale) if args.baseline == "bicubic" else metrics.identity_model
    samples = data.load_directory(args.data, scale, n_classes)
    report = metrics.evaluate(model, samples)
    tsv, js = report.write(args.out)
    m = report.mean
    print(f"{len(samples)} images: PSNR_Y={m['psnr_y']:.4f} SSIM_Y={m['ssim_y']:.4f} "
          f"PSNR_RGB={m['psnr_rgb']:.4f} SSIM_RGB={m['ssim_rgb']:.4f} -> {tsv}, {js}")
    return EXIT_OK


def cmd_infer(args) -> int:
    net, _ = checkpoint.load(args.ckpt)
    lr = data.load_image(args.lr)
    if net.role == "teacher":
        if not args.parsing:
            raise UsageError("this is a teacher checkpoint: the teacher also consumes the HR parsing map, "
                             "pass --parsing LABELS.png at the output resolution (or use a student checkpoint)")
        parsing = data.load_parsing(args.parsing, net.cfg.n_classes)
        with no_grad():
            sr = net(lr[None], parsing[None]).sr.data[0]
    else:
        with no_grad():
            sr = net(lr[None]).sr.data[0]
    data.save_image(np.asarray(sr, dtype=np.float64), args.out)
    print(f"wrote {sr.shape[2]}x{sr.shape[1]} image to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkdn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", help="gradient checks and invariants in 64-bit mode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth", help="write a synthetic paired corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-teacher", help="train the teacher network")
    _add_config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint in --run-dir")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="distill a frozen teacher into the student")
    _add_config_flags(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("eval", help="PSNR/SSIM report over a paired directory")
    p.add_argument("--ckpt")
    p.add_argument("--baseline", choices=("bicubic", "identity"))
    p.add_argument("--scale", type=int, default=4, help="upscale factor for --baseline")
    p.add_argument("--n-classes", type=int, default=4, help="parsing classes for --baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for report.tsv / report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one LR image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parsing", help="label map, required for teacher checkpoints")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonFiniteLossError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
