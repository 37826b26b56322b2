import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pkdn import metrics
from pkdn.data import SyntheticSpec, synthetic_samples


def brute_psnr(a, b):
    a, b = a.ravel() * 255.0, b.ravel() * 255.0
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return 10 * math.log10(255.0 ** 2 / (total / a.size))


def brute_ssim(a, b):
    a, b = a * 255.0, b * 255.0
    k = 11
    g = np.array([math.exp(-((i - 5) ** 2) / (2 * 1.5 ** 2)) for i in range(k)])
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            pa, pb = a[i:i + k, j:j + k], b[i:i + k, j:j + k]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cv = (win * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


@pytest.mark.parametrize("seed", range(3))
def test_against_brute_force(seed):
    r = np.random.default_rng(seed)
    a = r.random((32, 32))
    b = np.clip(a + r.normal(0, 0.1, a.shape), 0, 1)
    assert abs(metrics.psnr(a, b) - brute_psnr(a, b)) <= 1e-9
    assert abs(metrics.ssim(a, b) - brute_ssim(a, b)) <= 1e-9


def test_offset_one_level():
    a = np.full((3, 16, 16), 100 / 255)
    assert round(metrics.psnr(a, a + 1 / 255), 4) == 48.1308


def test_identical():
    a = np.random.default_rng(0).random((3, 16, 16))
    assert metrics.psnr(a, a) == math.inf
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_symmetry(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((16, 16)), r.random((16, 16))
    assert metrics.psnr(a, b) == metrics.psnr(b, a)
    assert abs(metrics.ssim(a, b) - metrics.ssim(b, a)) < 1e-12


def test_noise_ladder_monotone():
    r = np.random.default_rng(0)
    a = r.random((32, 32))
    noise = r.standard_normal(a.shape)
    ps = [metrics.psnr(a, a + s * noise) for s in (0.01, 0.02, 0.05, 0.1)]
    ss = [metrics.ssim(a, a + s * noise) for s in (0.01, 0.02, 0.05, 0.1)]
    assert ps == sorted(ps, reverse=True) and ss == sorted(ss, reverse=True)


def test_luma_range():
    assert metrics.rgb_to_y(np.zeros((3, 1, 1)))[0, 0] == pytest.approx(16 / 255)
    assert metrics.rgb_to_y(np.ones((3, 1, 1)))[0, 0] == pytest.approx(235 / 255)


def test_ssim_small_image():
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_report_excludes_infinite(tmp_path):
    samples = synthetic_samples(SyntheticSpec(3, 32, 0), 4)
    rep = metrics.evaluate(metrics.identity_model, samples)
    assert rep.infinite["psnr_y"] == 3 and rep.mean["psnr_y"] == math.inf
    tsv, js = rep.write(tmp_path)
    d = json.loads(js.read_text())
    assert d["mean"]["psnr_rgb"] == "inf" and d["infinite_excluded"]["psnr_rgb"] == 3
    assert tsv.read_text().splitlines()[0].split("\t") == ["stem", *metrics.METRICS]


def test_mixed_report_mean_skips_inf():
    rows = [{"stem": "a", "psnr_y": math.inf, "ssim_y": 1.0, "psnr_rgb": math.inf, "ssim_rgb": 1.0},
            {"stem": "b", "psnr_y": 30.0, "ssim_y": 0.5, "psnr_rgb": 20.0, "ssim_rgb": 0.5}]
    rep = metrics.MetricReport.from_images(rows)
    assert rep.mean["psnr_y"] == 30.0 and rep.infinite["psnr_y"] == 1
    assert rep.mean["ssim_y"] == 0.75


def test_bicubic_baseline_finite():
    samples = synthetic_samples(SyntheticSpec(2, 32, 0), 4)
    rep = metrics.evaluate(metrics.bicubic_baseline(4), samples)
    assert 15 < rep.mean["psnr_y"] < 60 and 0 < rep.mean["ssim_y"] < 1
