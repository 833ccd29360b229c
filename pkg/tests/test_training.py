import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elmformer.bayer import color_mask
from elmformer.data import (
    PairDataset,
    SyntheticSource,
    augment_raw,
    generate_dataset,
    load_manifest,
    mosaic_rgb,
    parse_noise_params,
    sample_batch,
    synthetic_scene,
)
from elmformer.network import ElmformerConfig, build, load_checkpoint
from elmformer.numerics import ShapeError, Tensor, grad_check
from elmformer.params import flatten
from elmformer.training import (
    LossKind,
    TrainConfig,
    TrainState,
    adamw_step,
    cosine_lr,
    loss,
    loss_tensor,
    read_metrics,
    train,
    write_checkpoint,
)

TINY_MODEL = ElmformerConfig(base_channels=8, depth=1)
TINY = TrainConfig(batch_size=2, patch_size=16, val_every=3, val_count=2, val_size=16)


@pytest.fixture
def rng():
    return np.random.default_rng(8)


# --- losses ---------------------------------------------------------------------------------

def test_losses_at_equality(rng):
    a = rng.random((6, 6))
    assert loss(a, a, LossKind("l1"))[0] == 0
    assert loss(a, a, LossKind("l2"))[0] == 0
    assert loss(a, a, LossKind("charbonnier", 1e-3))[0] == pytest.approx(1e-3, abs=1e-15)


def test_l2_constant_difference():
    a = np.zeros((4, 4))
    assert loss(a + 0.5, a, LossKind("l2"))[0] == 0.25


def test_charbonnier_gradient_finite_difference(rng):
    a, b = rng.random((5, 5)), rng.random((5, 5))
    kind = LossKind("charbonnier", 1e-3)
    _, g = loss(a, b, kind)
    h = 1e-6
    num = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        num[idx] = (loss(ap, b, kind)[0] - loss(am, b, kind)[0]) / (2 * h)
    assert np.abs(g - num).max() < 1e-8


@pytest.mark.parametrize("tag", ["l1", "l2", "charbonnier"])
def test_loss_gradcheck(rng, tag):
    target = rng.random((3, 4))
    pred = Tensor(target + rng.uniform(0.1, 0.5, (3, 4)) * rng.choice([-1, 1], (3, 4)))
    assert grad_check(lambda p: loss_tensor(p, target, LossKind(tag)), [pred]).passed


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["l1", "l2", "charbonnier"]), st.integers(0, 10 ** 6))
def test_loss_nonnegative_and_zero_iff_equal(tag, seed):
    r = np.random.default_rng(seed)
    a, b = r.random((4, 4)), r.random((4, 4))
    kind = LossKind(tag)
    v = loss(a, b, kind)[0]
    floor = kind.eps if tag == "charbonnier" else 0.0
    assert v > floor
    assert loss(a, a, kind)[0] == pytest.approx(floor, abs=1e-15)


def test_loss_errors():
    with pytest.raises(ShapeError):
        loss(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        LossKind("charbonnier", 0.0)
    with pytest.raises(ValueError):
        LossKind("huber")


# --- schedule -----------------------------------------------------------------------------------

def test_cosine_endpoints():
    assert cosine_lr(0, 100, 4e-4, 1e-6) == pytest.approx(4e-4, abs=1e-18)
    assert cosine_lr(100, 100, 4e-4, 1e-6) == pytest.approx(1e-6, abs=1e-18)
    assert cosine_lr(50, 100, 4e-4, 1e-6) == pytest.approx((4e-4 + 1e-6) / 2, abs=1e-18)


def test_cosine_monotone():
    lrs = [cosine_lr(s, 37) for s in range(38)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_cosine_out_of_range():
    for bad in (-1, 11):
        with pytest.raises(ValueError):
            cosine_lr(bad, 10)


# --- AdamW ------------------------------------------------------------------------------------

def test_adamw_zero_gradient_no_decay():
    p = np.array([1.0, -2.0])
    state = TrainState.for_params([p])
    adamw_step([p], [np.zeros(2)], state, 0.1, wd=0.0)
    assert np.array_equal(p, [1.0, -2.0])


def test_adamw_zero_gradient_decay_only():
    p = np.array([1.0, -2.0, 3.0])
    state = TrainState.for_params([p])
    adamw_step([p], [np.zeros(3)], state, 1e-3, wd=0.02)
    assert np.allclose(p, np.array([1.0, -2.0, 3.0]) * (1 - 1e-3 * 0.02), rtol=0, atol=1e-15)


def test_adamw_single_step_closed_form():
    p = np.array([1.0])
    state = TrainState.for_params([p])
    adamw_step([p], [np.array([1.0])], state, 0.1, wd=0.02)
    m_hat = (0.1 * 1.0) / (1 - 0.9)
    v_hat = (0.001 * 1.0) / (1 - 0.999)
    expected = 1.0 - 0.1 * 0.02 * 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert abs(p[0] - expected) < 1e-15


def test_adamw_without_decay_is_adam(rng):
    p = rng.standard_normal(5)
    ref = p.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    state = TrainState.for_params([p])
    for t in range(1, 21):
        g = rng.standard_normal(5)
        lr = 0.01 * (1 + t % 3)
        adamw_step([p], [g], state, lr, wd=0.0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.abs(p - ref).max() < 1e-12


def test_adamw_shape_mismatch():
    p = np.zeros(3)
    with pytest.raises(ShapeError):
        adamw_step([p], [np.zeros(4)], TrainState.for_params([p]), 0.1)


# --- data -------------------------------------------------------------------------------------

def test_mosaic_samples_filter_colours(rng):
    rgb = rng.random((3, 6, 8))
    m = mosaic_rgb(rgb)
    rgb_of = np.array([0, 1, 1, 2])[color_mask(6, 8)]
    assert np.array_equal(m, np.take_along_axis(rgb, rgb_of[None], 0)[0])


def test_synthetic_scene_deterministic_and_bounded():
    a = synthetic_scene(32, np.random.default_rng(4)).data
    b = synthetic_scene(32, np.random.default_rng(4)).data
    assert np.array_equal(a, b)
    assert a.min() >= 0.05 and a.max() <= 0.95 and a.std() > 0


def test_parse_noise_params():
    assert parse_noise_params("awgn", "sigma=0.1") == {"sigma": 0.1}
    assert parse_noise_params("shotread", "shot=0.01, read=0.02") == {"shot": 0.01, "read": 0.02}
    for kind, text in [("awgn", "amplitude=1"), ("awgn", "sigma=-1"), ("uniform", "amplitude"), ("blur", "")]:
        with pytest.raises(ValueError):
            parse_noise_params(kind, text)


def test_generate_dataset_and_rescan(tmp_path):
    m = generate_dataset(tmp_path / "d", 3, 16, "awgn", {"sigma": 0.05}, 11)
    again = load_manifest(tmp_path / "d")
    assert again == m and len(again["pairs"]) == 3
    ds = PairDataset.from_dir(tmp_path / "d")
    assert len(ds) == 3 and ds.clean[0].data.shape == (16, 16)
    other = generate_dataset(tmp_path / "e", 3, 16, "awgn", {"sigma": 0.05}, 11)
    for p in m["pairs"]:
        for key in ("clean", "noisy"):
            assert (tmp_path / "d" / p[key]).read_bytes() == (tmp_path / "e" / p[key]).read_bytes()
    assert other == m


def test_sigma_zero_pairs_identical(tmp_path):
    generate_dataset(tmp_path, 1, 8, "awgn", {"sigma": 0.0}, 0)
    ds = PairDataset.from_dir(tmp_path)
    assert np.array_equal(ds.clean[0].data, ds.noisy[0].data)


def test_sample_batch_aligned_augmentation(tmp_path):
    generate_dataset(tmp_path, 2, 24, "awgn", {"sigma": 0.0}, 1)
    ds = PairDataset.from_dir(tmp_path)
    noisy, clean = sample_batch(ds, 5, 8, np.random.default_rng(0))
    assert noisy.shape == clean.shape == (5, 1, 8, 8)
    assert np.array_equal(noisy, clean)
    again = sample_batch(ds, 5, 8, np.random.default_rng(0))
    assert np.array_equal(again[0], noisy)


def test_augment_raw_keeps_colour_classes():
    rgb_class = np.array([0, 1, 1, 2])[color_mask(8, 8)]
    for t in range(8):
        assert np.array_equal(np.array([0, 1, 1, 2])[augment_raw(color_mask(8, 8).astype(float), t).astype(int)],
                              rgb_class)


def test_synthetic_batch_noise_level():
    src = SyntheticSource("awgn", {"sigma": 0.05})
    noisy, clean = sample_batch(src, 4, 32, np.random.default_rng(2))
    assert 0.04 < np.std(noisy - clean) < 0.06


# --- training loop --------------------------------------------------------------------------------

def test_zero_steps_is_initialisation():
    r = train(TINY_MODEL, None, 0, 5, TINY)
    assert r.checkpoint.step == 0 and r.rows == []
    init = build(ElmformerConfig(base_channels=8, depth=1, seed=5))
    assert np.array_equal(r.checkpoint.params, flatten(init))


def test_training_is_deterministic(tmp_path):
    a = train(TINY_MODEL, None, 4, 2, TINY, metrics_path=tmp_path / "a.csv")
    b = train(TINY_MODEL, None, 4, 2, TINY, metrics_path=tmp_path / "b.csv")
    write_checkpoint(tmp_path / "a.ckpt", a)
    write_checkpoint(tmp_path / "b.ckpt", b)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = train(TINY_MODEL, None, 4, 3, TINY)
    assert not np.array_equal(c.checkpoint.params, a.checkpoint.params)


def test_metrics_csv_layout(tmp_path):
    r = train(TINY_MODEL, None, 4, 0, TINY, metrics_path=tmp_path / "m.csv")
    rows = read_metrics(tmp_path / "m.csv")
    assert list(rows[0]) == ["step", "lr", "loss", "val_psnr_rr", "val_psnr_rs"]
    assert [int(x["step"]) for x in rows] == [1, 2, 3, 4]
    assert [bool(x["val_psnr_rr"]) for x in rows] == [False, False, True, True]
    assert float(rows[0]["lr"]) == pytest.approx(TINY.lr0)
    ck = r.checkpoint
    assert ck.optimizer.step == 4 and ck.optimizer.m.size == ck.params.size


def test_train_from_directory(tmp_path):
    generate_dataset(tmp_path / "d", 2, 32, "awgn", {"sigma": 0.1}, 0)
    r = train(TINY_MODEL, tmp_path / "d", 2, 0, TINY)
    write_checkpoint(tmp_path / "m.ckpt", r)
    assert load_checkpoint(tmp_path / "m.ckpt").step == 2


def test_train_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        train(TINY_MODEL, tmp_path / "nope", 1, 0, TINY)
