import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from elmformer.bayer import RawImage, simple_isp
from elmformer.evaluation import (
    PSNR_CAP,
    complexity_ratio,
    empirical_count_check,
    eval_pair,
    flops_attention,
    flops_markdown,
    flops_model,
    metrics_csv,
    metrics_markdown,
    psnr,
    ssim,
)
from elmformer.network import ElmformerConfig, build, forward_tensor
from elmformer.numerics import ConfigError, ShapeError, Tensor, count_macs, no_grad


@pytest.fixture
def rng():
    return np.random.default_rng(17)


# --- PSNR -------------------------------------------------------------------------------

def test_psnr_identical_is_cap(rng):
    a = rng.random((8, 8))
    assert psnr(a, a) == PSNR_CAP == 100.0


def test_psnr_constant_offset():
    a = np.full((16, 16), 0.3)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-6


def test_psnr_matches_direct_oracle(rng):
    for _ in range(10):
        a, b = rng.random((9, 7)), rng.random((9, 7))
        assert abs(psnr(a, b) - oracles.psnr(a, b)) < 1e-10


def test_psnr_symmetric_and_monotone(rng):
    img = rng.random((32, 32))
    noise = rng.standard_normal(img.shape)
    vals = [psnr(img, img + s * noise) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert psnr(img, img + 0.1 * noise) == psnr(img + 0.1 * noise, img)


def test_psnr_extent_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


# --- SSIM -------------------------------------------------------------------------------

def test_ssim_identical_is_one(rng):
    a = rng.random((20, 24))
    assert abs(ssim(a, a) - 1.0) < 1e-12


@pytest.mark.parametrize("c,d", [(0.2, 0.1), (0.5, -0.3), (0.0, 0.9)])
def test_ssim_constant_images_closed_form(c, d):
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expected = (2 * c * (c + d) + c1) * c2 / ((c * c + (c + d) ** 2 + c1) * c2)
    got = ssim(np.full((12, 12), c), np.full((12, 12), c + d))
    assert abs(got - expected) < 1e-10


def test_ssim_matches_sliding_window_oracle(rng):
    for shape in [(13, 15), (3, 12, 11)]:
        a, b = rng.random(shape), rng.random(shape)
        assert abs(ssim(a, b) - oracles.ssim(a, b)) < 1e-8


def test_ssim_symmetric_and_bounded(rng):
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)
    assert -1 <= ssim(a, -b) <= 1


def test_ssim_too_small():
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


# --- eval_pair ------------------------------------------------------------------------------

def test_eval_pair_identical(rng):
    gt = RawImage(rng.random((24, 24)))
    r = eval_pair(gt, gt)
    assert r.psnr_rr == 100 and r.psnr_rs == 100
    assert abs(r.ssim_rr - 1) < 1e-12 and abs(r.ssim_rs - 1) < 1e-12


def test_eval_pair_composition(rng):
    gt = RawImage(rng.random((24, 24)))
    pred = RawImage(np.clip(gt.data + 0.05 * rng.standard_normal((24, 24)), -0.1, 1.1))
    r = eval_pair(pred, gt, wb=(1.5, 1.2), gamma=2.0)
    sp, st_ = simple_isp(pred, (1.5, 1.2), 2.0).data, simple_isp(gt, (1.5, 1.2), 2.0).data
    assert abs(r.psnr_rs - oracles.psnr(sp, st_)) < 1e-10
    assert abs(r.ssim_rs - oracles.ssim(sp, st_)) < 1e-8
    assert abs(r.psnr_rr - oracles.psnr(np.clip(pred.data, 0, 1), gt.data)) < 1e-10
    assert r.ssim_rr == pytest.approx(eval_pair(gt, pred).ssim_rr, abs=1e-15)


def test_report_emitters(rng):
    gt = RawImage(rng.random((16, 16)))
    rows = {"identity": eval_pair(gt, gt)}
    md = metrics_markdown(rows)
    assert "PSNR r/r" in md and "| identity | 100.00 |" in md
    lines = metrics_csv(rows).splitlines()
    assert lines[0] == "method,psnr_rr,ssim_rr,psnr_rs,ssim_rs" and lines[1].startswith("identity,100.0")


# --- attention complexity ---------------------------------------------------------------------

def test_per_window_terms():
    d = 16
    assert flops_attention(8, d, 1, 128, 128, "wmsa").per_window == 8 ** 4 * d
    assert flops_attention(8, d, 1, 128, 128, "lmsa").per_window == 4 * 64 * d


def test_m2_degenerate_equal_costs():
    w = flops_attention(2, 16, 2, 32, 32, "wmsa")
    l = flops_attention(2, 16, 2, 32, 32, "lmsa")
    assert w.per_window == l.per_window and w.counted == l.counted


def test_closed_form_ratio_at_m8():
    closed, counted = complexity_ratio(8)
    assert abs(closed - 4 / (1 + 4 / 8 ** 4)) < 1e-9
    assert abs(counted - 4 / (1 + 4 / 8 ** 2)) < 1e-9


@pytest.mark.parametrize("M", [4, 8, 16])
def test_lmwin_cheaper_than_lewin(M):
    lew = flops_attention(M, 16, 2, 256, 256, "lewin")
    lmw = flops_attention(M, 16, 2, 256, 256, "lmwin")
    assert lmw.counted < lew.counted and lmw.closed_form < lew.closed_form


def test_ratio_approaches_four():
    ratios = [complexity_ratio(M, H=512, W=512) for M in (4, 8, 16, 32)]
    for a, b in zip(ratios, ratios[1:]):
        assert a[0] < b[0] < 4 and a[1] < b[1] < 4
    assert 4 - ratios[-1][1] < 0.02


def test_flops_attention_errors():
    with pytest.raises(ConfigError):
        flops_attention(8, 16, 1, 120, 128, "lmwin")
    with pytest.raises(ConfigError):
        flops_attention(8, 16, 1, 128, 128, "swin")


@pytest.mark.parametrize("variant", ["wmsa", "lmsa", "lmwin"])
def test_empirical_counts_match_dominant_terms(variant):
    for row in empirical_count_check(variant, (2, 4, 8)):
        assert 0.9 <= row.ratio <= 1.1


def test_empirical_ratio_grows_as_m_squared_over_four():
    w = empirical_count_check("wmsa", (2, 4, 8))
    l = empirical_count_check("lmsa", (2, 4, 8))
    for a, b in zip(w, l):
        assert a.instrumented / b.instrumented == pytest.approx(a.M ** 2 / 4)


# --- model cost ------------------------------------------------------------------------------

@pytest.mark.parametrize("cfg,size", [(ElmformerConfig(base_channels=8, depth=1), 16),
                                      (ElmformerConfig(base_channels=8, depth=2), 32)])
def test_flops_model_matches_instrumented_forward(cfg, size):
    report = flops_model(cfg, size, size)
    with no_grad(), count_macs() as counter:
        forward_tensor(Tensor(np.zeros((1, 1, size, size))), build(cfg))
    assert report.total_macs == sum(counter.values())
    assert report.by_kind == {k: v for k, v in counter.items() if v}


def test_flops_model_total_is_sum_of_parts():
    r = flops_model(ElmformerConfig(), 128, 128)
    assert r.total_macs == sum(r.modules.values()) == sum(r.by_kind.values())
    assert r.gflops == 2 * r.total_macs / 1e9


def test_flops_model_linear_in_area():
    cfg = ElmformerConfig(base_channels=16, depth=2)
    a = flops_model(cfg, 64, 64).total_macs
    b = flops_model(cfg, 64, 128).total_macs
    assert b == 2 * a


def test_flops_toy_hand_summation():
    # C=8, K=1, 16x16: stage 0 runs at 8x8 (C=8, one head, M=8), bottleneck 4x4 (16 ch, M=4)
    def block(C, M, n):
        hid = 4 * C
        return (4 * n * C + 7 * n * C * C + 2 * n * M * M * C + 8 * n * C
                + n * M * M + 4 * n + n * C + 2 * n * C * hid + 9 * n * hid + 2 * n * hid)

    bfp = 64 * 4 * 36 + 64 * 4 * 9 + 2 * 64 * 16 + 4 * 64 * 4
    enc = 2 * block(8, 8, 64) + 16 * 16 * 8 * 16
    bott = 2 * block(16, 4, 16)
    dec = 16 * 16 * 8 * 4 + 8 * 64 * 16 + 2 * block(8, 8, 64)
    out = 8 * 64 * 4 * 4 + 256 * 4 * 9
    assert flops_model(ElmformerConfig(base_channels=8, depth=1), 16, 16).total_macs == bfp + enc + bott + dec + out


def test_flops_model_full_config_band():
    r = flops_model(ElmformerConfig(base_channels=32, depth=4), 128, 128)
    assert 2.1 <= r.gflops <= 5.0
    assert "GFLOPs" in flops_markdown(r)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(1, 4))
def test_flops_model_scales_with_tiles(depth, tiles):
    cfg = ElmformerConfig(base_channels=8, depth=depth, window_size=2, bottleneck_window=2)
    base = 2 ** (depth + 3)
    one = flops_model(cfg, base, base).total_macs
    assert flops_model(cfg, base * tiles, base).total_macs == tiles * one
