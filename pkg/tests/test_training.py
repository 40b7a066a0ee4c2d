"""Loss, schedule, optimizer, augmentation, evaluation, training loop."""

import numpy as np
import pytest

from mgt import autodiff as ad
from mgt.attention import AttentionConfig
from mgt.autodiff import Tensor
from mgt.errors import ConfigError
from mgt.geometry import PointCloud, ScaleConfig, normalize
from mgt.model import MgtModel, ModelConfig
from mgt.training import (AugmentConfig, Metrics, SGD, TrainConfig, augment,
                          cosine_lr, evaluate, label_smooth_ce, load_state,
                          no_weight_decay, train)


# ---------------------------------------------------------------------------
# loss

def test_smoothing_zero_reduces_to_cross_entropy():
    logits = Tensor(np.array([2.0, 0.5, -1.0]))
    loss = label_smooth_ce(logits, 0, 0.0, 3).item()
    z = logits.data
    want = -(z[0] - np.log(np.exp(z).sum()))
    assert loss == pytest.approx(want, abs=1e-12)


def test_uniform_logits_loss_is_log_c():
    logits = Tensor(np.zeros(4))
    for s in (0.0, 0.1, 0.2):
        assert label_smooth_ce(logits, 2, s, 4).item() == \
            pytest.approx(np.log(4.0), abs=1e-12)


def test_smoothed_loss_hand_case():
    # logits (2,0,0), target 0, smoothing 0.2, C=3:
    # weights (0.8, 0.1, 0.1); log p = z - logsumexp(z)
    z = np.array([2.0, 0.0, 0.0])
    lse = np.log(np.exp(z).sum())
    want = -(0.8 * (2.0 - lse) + 0.1 * (0.0 - lse) + 0.1 * (0.0 - lse))
    got = label_smooth_ce(Tensor(z), 0, 0.2, 3).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_loss_bounded_below_by_smoothed_entropy():
    # the minimum of the smoothed CE equals the entropy of the target
    w = np.array([0.8, 0.1, 0.1])
    floor = -(w * np.log(w)).sum()
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = Tensor(rng.standard_normal(3) * 5)
        assert label_smooth_ce(z, 0, 0.2, 3).item() >= floor - 1e-12


def test_loss_gradient():
    from mgt.gradcheck import grad_check
    z = Tensor(np.array([1.0, -0.5, 0.3, 2.0]), requires_grad=True)
    rep = grad_check(lambda: label_smooth_ce(z, 1, 0.2, 4), [z], step=1e-5)
    assert rep.passed, rep.summary()


def test_loss_target_validation():
    with pytest.raises(ConfigError):
        label_smooth_ce(Tensor(np.zeros(3)), 3, 0.1, 3)


# ---------------------------------------------------------------------------
# schedule

def test_cosine_lr_endpoints():
    assert cosine_lr(0, 250, 0.02) == pytest.approx(0.02)
    assert cosine_lr(125, 250, 0.02) == pytest.approx(0.01)
    assert cosine_lr(250, 250, 0.02) == pytest.approx(0.0, abs=1e-17)


def test_cosine_lr_monotone_decreasing():
    values = [cosine_lr(t, 100, 0.02) for t in range(101)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(ConfigError):
        cosine_lr(-1, 100, 0.02)
    with pytest.raises(ConfigError):
        cosine_lr(101, 100, 0.02)


# ---------------------------------------------------------------------------
# optimizer

def test_sgd_two_step_displacement():
    # constant gradient g: after two steps displacement = lr*g*(1 + 1 + m)
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = SGD({"w": p}, lr=0.1, momentum=0.9, weight_decay=0.0)
    for _ in range(2):
        p.grad = np.ones(1)
        opt.step()
    assert p.data[0] == pytest.approx(-0.1 * 2.9)


def test_sgd_weight_decay_applied_to_weights_only():
    w = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = SGD({"layer.w1": w, "layer.b1": b}, lr=1.0, momentum=0.0,
              weight_decay=0.1)
    w.grad = np.zeros(1)
    b.grad = np.zeros(1)
    opt.step()
    assert w.data[0] == pytest.approx(0.9)   # decayed
    assert b.data[0] == pytest.approx(1.0)   # exempt


def test_no_weight_decay_rules():
    assert no_weight_decay("class_token")
    assert no_weight_decay("cls_center")
    assert no_weight_decay("enc0.ln1_gain")
    assert no_weight_decay("enc0.ln1_bias")
    assert no_weight_decay("slfe0.lift_b1")
    assert no_weight_decay("enc0.attn.b_v")
    assert no_weight_decay("pos.b2")
    assert no_weight_decay("slfe0.sphere.bias")
    assert not no_weight_decay("head.w")
    assert not no_weight_decay("enc0.attn.w_v")
    assert not no_weight_decay("slfe0.lift_w1")
    assert not no_weight_decay("slfe0.sphere.beta")


def test_sgd_converges_on_quadratic_bowl():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = SGD({"p": p}, lr=0.1, momentum=0.9)
    for _ in range(400):
        opt.zero_grad()
        loss = ad.rsum(ad.mul(p, p))
        loss.backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-6


# ---------------------------------------------------------------------------
# augmentation

def test_augment_scale_bounds():
    aug = AugmentConfig(jitter_std=0.0, max_drop_ratio=0.0)
    rng = np.random.default_rng(1)
    pts = np.ones((100, 3))
    ratios = []
    for _ in range(500):
        out = augment(pts, aug, rng)
        ratios.append(out[0, 0])
    assert 0.8 <= min(ratios) and max(ratios) <= 1.25
    # both halves of the range are exercised
    assert min(ratios) < 0.85 and max(ratios) > 1.2


def test_augment_jitter_clipped():
    aug = AugmentConfig(scale_lo=1.0, scale_hi=1.0, jitter_std=0.02,
                        jitter_clip=0.05, max_drop_ratio=0.0)
    rng = np.random.default_rng(2)
    pts = np.zeros((1024, 3))
    out = augment(pts, aug, rng)
    assert np.abs(out).max() <= 0.05 + 1e-12


def test_augment_drop_bounded_and_count_preserved():
    aug = AugmentConfig(scale_lo=1.0, scale_hi=1.0, jitter_std=0.0,
                        max_drop_ratio=0.125)
    rng = np.random.default_rng(3)
    pts = np.arange(1024 * 3, dtype=np.float64).reshape(1024, 3)
    for _ in range(20):
        out = augment(pts, aug, rng)
        assert out.shape == (1024, 3)
        # dropped points are replaced by a surviving point, so at least
        # 87.5% of the original rows survive
        survivors = len(np.unique(out, axis=0))
        assert survivors >= 1024 - 128


def test_augment_preserves_normals_channels():
    aug = AugmentConfig(scale_lo=0.5, scale_hi=0.5, jitter_std=0.0,
                        max_drop_ratio=0.0)
    rng = np.random.default_rng(4)
    pts = np.ones((10, 6))
    out = augment(pts, aug, rng)
    np.testing.assert_allclose(out[:, :3], 0.5)
    np.testing.assert_allclose(out[:, 3:], 1.0)  # normals not zoomed


def test_augment_resolution_subsampling():
    aug = AugmentConfig(scale_lo=1.0, scale_hi=1.0, jitter_std=0.0,
                        max_drop_ratio=0.0, min_keep_ratio=0.5)
    rng = np.random.default_rng(5)
    pts = np.arange(256 * 3, dtype=np.float64).reshape(256, 3)
    sizes = set()
    rows = {tuple(p) for p in pts}
    for _ in range(50):
        out = augment(pts, aug, rng)
        sizes.add(len(out))
        assert 128 <= len(out) <= 256
        assert all(tuple(p) in rows for p in out)  # subset, no duplicates
        assert len({tuple(p) for p in out}) == len(out)
    assert len(sizes) > 10  # the kept count actually varies


def test_augment_resolution_off_by_default():
    aug = AugmentConfig(scale_lo=1.0, scale_hi=1.0, jitter_std=0.0,
                        max_drop_ratio=0.0)
    rng = np.random.default_rng(6)
    pts = np.ones((64, 3))
    assert augment(pts, aug, rng).shape == (64, 3)


def test_augment_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(scale_lo=1.5, scale_hi=1.0)
    with pytest.raises(ConfigError):
        AugmentConfig(max_drop_ratio=1.0)
    with pytest.raises(ConfigError):
        AugmentConfig(min_keep_ratio=0.0)


# ---------------------------------------------------------------------------
# metrics / evaluation

def test_metrics_hand_confusion():
    confusion = np.array([[2, 0], [1, 1]])
    m = Metrics(confusion)
    assert m.oa == pytest.approx(0.75)
    assert m.macc == pytest.approx(0.75)  # (1.0 + 0.5)/2


def test_metrics_skips_absent_classes():
    m = Metrics(np.array([[3, 0], [0, 0]]))
    assert m.macc == pytest.approx(1.0)


def _tiny_setup(num_classes=2, n=24, per=4):
    rng = np.random.default_rng(5)
    clouds = []
    for label in range(num_classes):
        for _ in range(per):
            pts = rng.standard_normal((n, 3))
            if label == 1:
                pts /= np.linalg.norm(pts, axis=1, keepdims=True)
            clouds.append(normalize(PointCloud(pts, label)))
    config = ModelConfig(scales=ScaleConfig(((6, 4),)), num_classes=num_classes,
                         d_out=16, depth=1, mlp_ratio=2, pos_hidden=8)
    return MgtModel(config, seed=0), clouds


def test_evaluate_confusion_totals():
    model, clouds = _tiny_setup()
    m = evaluate(model, clouds)
    assert m.confusion.sum() == len(clouds)
    np.testing.assert_array_equal(m.confusion.sum(axis=1), [4, 4])
    with pytest.raises(ConfigError):
        evaluate(model, [])


def test_evaluate_deterministic():
    model, clouds = _tiny_setup()
    a = evaluate(model, clouds).confusion
    b = evaluate(model, clouds).confusion
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# training loop

def test_train_loss_decreases_and_history_complete():
    model, clouds = _tiny_setup()
    config = TrainConfig(batch_size=4, epochs=4, lr0=0.005, seed=0)
    result = train(model, clouds, clouds, config)
    history = result["history"]
    assert len(history) == 4
    for row in history:
        assert set(row) == {"epoch", "lr", "train_loss", "test_oa", "test_macc"}
        assert np.isfinite(row["train_loss"])
    assert history[-1]["train_loss"] < history[0]["train_loss"]
    assert result["best_oa"] == max(r["test_oa"] for r in history)


def test_train_deterministic_under_seed():
    results = []
    for _ in range(2):
        model, clouds = _tiny_setup()
        config = TrainConfig(batch_size=4, epochs=2, lr0=0.005, seed=7)
        results.append(train(model, clouds, clouds, config))
    h1, h2 = results[0]["history"], results[1]["history"]
    for r1, r2 in zip(h1, h2):
        assert r1 == r2  # bitwise-equal floats
    for k in results[0]["best_state"]:
        np.testing.assert_array_equal(results[0]["best_state"][k],
                                      results[1]["best_state"][k])


def test_train_early_stop_via_callback():
    model, clouds = _tiny_setup()
    config = TrainConfig(batch_size=4, epochs=10, lr0=0.005, seed=0)
    result = train(model, clouds, clouds, config,
                   epoch_callback=lambda row: row["epoch"] >= 1)
    assert len(result["history"]) == 2


def test_best_state_round_trip_through_load_state():
    model, clouds = _tiny_setup()
    config = TrainConfig(batch_size=4, epochs=2, lr0=0.005, seed=0)
    result = train(model, clouds, clouds, config)
    fresh, _ = _tiny_setup()
    load_state(fresh, result["best_state"])
    a = evaluate(fresh, clouds)
    assert a.oa == result["best_oa"]


def test_load_state_rejects_mismatch():
    model, _ = _tiny_setup()
    state = {n: p.data.copy() for n, p in model.params().items()}
    del state["head.w"]
    with pytest.raises(ConfigError):
        load_state(model, state)
    state = {n: p.data.copy() for n, p in model.params().items()}
    state["head.w"] = np.zeros((2, 2))
    with pytest.raises(ConfigError):
        load_state(model, state)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(smoothing=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
