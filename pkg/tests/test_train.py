import numpy as np
import pytest

from pkdn import checkpoint, ops
from pkdn.data import SyntheticSpec, synthetic_samples
from pkdn.networks import NetConfig, build_student, build_teacher
from pkdn.train import (LOG_FIELDS, NonFiniteLossError, TeacherNotFrozenError, TrainConfig, TrainState,
                        corpus_teacher_loss, read_log, resume, train_student, train_teacher)

CFG = NetConfig(base_channels=8, rcab_per_group=1, spatial_kernel=3)
SAMPLES = synthetic_samples(SyntheticSpec(5, 32, 0), 4)
TC = TrainConfig(steps=6, batch_size=2, lr=1e-3, checkpoint_every=3)


def params(net):
    return [p.data.copy() for p in net.parameters()]


def test_step0_loss_is_untrained_loss():
    net = build_teacher(CFG)
    one = SAMPLES[:1]
    expect = corpus_teacher_loss(net, one)
    st = train_teacher(net, one, TrainConfig(steps=1, batch_size=1))
    assert st.history[0].total == pytest.approx(expect, rel=1e-5)


def test_resume_is_bit_identical(tmp_path):
    straight = build_teacher(CFG)
    full = train_teacher(straight, SAMPLES, TC, run_dir=tmp_path / "a", log_path=tmp_path / "a.tsv")
    net, state = resume(tmp_path / "a" / "ckpt_000003.pkdn")
    assert state.step == 3
    resumed = train_teacher(net, SAMPLES, TC, state=state)
    assert [b.total for b in resumed.history] == [b.total for b in full.history]
    assert all(np.array_equal(a, b) for a, b in zip(params(straight), params(net)))
    rows = read_log(tmp_path / "a.tsv")
    assert list(rows[0]) == list(LOG_FIELDS) and [int(r["step"]) for r in rows] == list(range(6))


def test_final_checkpoint_written(tmp_path):
    net = build_student(CFG)
    teacher = build_teacher(CFG).freeze()
    train_student(net, teacher, SAMPLES, TrainConfig(steps=2, batch_size=2), run_dir=tmp_path)
    back, ts = checkpoint.load(tmp_path / "final.pkdn")
    assert ts["step"] == 2 and back.role == "student"
    assert all(np.array_equal(a.data, b.data) for a, b in zip(net.parameters(), back.parameters()))


def test_teacher_unchanged_by_distillation():
    teacher = build_teacher(CFG).freeze()
    before = params(teacher)
    student = build_student(CFG)
    s0 = params(student)
    st = train_student(student, teacher, SAMPLES, TrainConfig(steps=3, batch_size=2, lr=1e-3))
    assert all(np.array_equal(a, b) for a, b in zip(before, params(teacher)))
    assert not all(np.array_equal(a, b) for a, b in zip(s0, params(student)))
    b = st.history[0]
    assert b.total == pytest.approx(b.l_sr + CFG.lambda_ts * b.l_ts + CFG.lambda_fs * b.l_fs, rel=1e-6)


def test_unfrozen_teacher_refused():
    with pytest.raises(TeacherNotFrozenError):
        train_student(build_student(CFG), build_teacher(CFG), SAMPLES, TC)


def test_roles_checked():
    with pytest.raises(ValueError):
        train_teacher(build_student(CFG), SAMPLES, TC)


def test_lambda_zero_control():
    """With both lambdas zero the student trains exactly as on L_SR alone."""
    cfg = CFG.replace(lambda_ts=0.0, lambda_fs=0.0)
    teacher = build_teacher(cfg).freeze()
    a = build_student(cfg)
    train_student(a, teacher, SAMPLES, TrainConfig(steps=2, batch_size=2, lr=1e-3))
    other_teacher = build_teacher(cfg.replace(seed=9)).freeze()
    b = build_student(cfg)
    train_student(b, other_teacher, SAMPLES, TrainConfig(steps=2, batch_size=2, lr=1e-3))
    assert all(np.array_equal(x, y) for x, y in zip(params(a), params(b)))


def test_nan_loss_aborts_with_step(monkeypatch):
    net = build_teacher(CFG)
    real = ops.mean_abs
    calls = {"n": 0}

    def poisoned(x):
        calls["n"] += 1
        out = real(x)
        if calls["n"] == 3:
            out.data[...] = np.nan
        return out

    monkeypatch.setattr(ops, "mean_abs", poisoned)
    with pytest.raises(NonFiniteLossError) as info:
        train_teacher(net, SAMPLES, TC)
    assert info.value.step == 2


def test_train_state_dict_roundtrip():
    st = train_teacher(build_teacher(CFG), SAMPLES, TrainConfig(steps=1, batch_size=2))
    assert TrainState.from_dict(st.to_dict()) == st
