import math

import numpy as np
import pytest

from specmae.optim import AdamState, NonFiniteGradientError, adamw_step, lr_at
from specmae.trainer import TrainConfig, full_scale_profile


def test_lr_schedule_published_settings():
    cfg, _ = full_scale_profile()
    spe = 7
    assert lr_at(0, cfg, spe) == 1e-6
    assert lr_at(cfg.warmup_epochs * spe, cfg, spe) == 1e-4
    assert abs(lr_at(cfg.total_epochs * spe, cfg, spe)) < 1e-12
    with pytest.raises(ValueError):
        lr_at(cfg.total_epochs * spe + 1, cfg, spe)


def test_lr_schedule_shape():
    cfg = TrainConfig(total_epochs=10, warmup_epochs=2, base_lr=1e-3, warmup_lr=0.0)
    lrs = [lr_at(s, cfg, 4) for s in range(41)]
    assert lrs[4] == pytest.approx(0.5e-3)
    assert all(a < b for a, b in zip(lrs[:8], lrs[1:9]))
    assert all(a >= b for a, b in zip(lrs[8:], lrs[9:]))
    mid = 8 + (40 - 8) // 2
    assert lrs[mid] == pytest.approx(0.5e-3)


def test_decay_only_step_is_exact():
    p = {"w": np.array([1.0, -2.0, 3.5])}
    new, state = adamw_step(p, {"w": np.zeros(3)}, AdamState(), lr=0.1, weight_decay=0.05)
    assert np.array_equal(new["w"], p["w"] * (1 - 0.1 * 0.05))
    assert state.step == 1


def test_first_step_hand_value():
    new, _ = adamw_step({"p": np.array(1.0)}, {"p": np.array(1.0)}, AdamState(), lr=0.1,
                        betas=(0.9, 0.95), weight_decay=0.0)
    assert float(new["p"]) == pytest.approx(0.9, abs=1e-6)


def scalar_adam(g, steps, lr, b1=0.9, b2=0.95, eps=1e-8):
    p, m, v, deltas = 0.0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        deltas.append(step)
        p -= step
    return p, deltas


def test_constant_gradient_step_approaches_lr():
    lr, g = 0.01, 0.3
    params, state = {"p": np.array([0.0])}, AdamState()
    prev = 0.0
    for t in range(200):
        params, state = adamw_step(params, {"p": np.array([g])}, state, lr, weight_decay=0.0)
        delta = prev - float(params["p"][0])
        prev = float(params["p"][0])
    assert abs(delta - lr) < 1e-6
    want, deltas = scalar_adam(g, 200, lr)
    assert float(params["p"][0]) == pytest.approx(want, rel=1e-12)
    assert abs(deltas[-1] - lr) < 1e-6


def test_non_finite_gradient_names_parameter():
    with pytest.raises(NonFiniteGradientError, match="enc.0.attn.q.w"):
        adamw_step({"enc.0.attn.q.w": np.zeros(2)}, {"enc.0.attn.q.w": np.array([1.0, np.nan])},
                   AdamState(), 0.1)


def test_float32_params_stay_float32():
    new, state = adamw_step({"w": np.ones(3, np.float32)}, {"w": np.ones(3, np.float32)}, AdamState(), 0.1)
    assert new["w"].dtype == np.float32 and state.m["w"].dtype == np.float32
