import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from curvprobe.attacks import (AttackConfig, attack, ball_bounds, attack_dataset, fgsm, ifgsm, jump_dominance, psnr,
                               rand_jump_attack, fgsm_travel_attack, robustness_by_curvedness)
from curvprobe.errors import MisclassifiedInputError
from curvprobe.zoo import outputs
from conftest import tiny
from oracles import identity_linear

RNG = np.random.default_rng(11)


def correct_inputs(m, n=6, seed=0):
    xs = np.random.default_rng(seed).uniform(0, 1, (n, 3, 8, 8)).astype(np.float32)
    return xs, np.argmax(outputs(m, xs)[0], axis=1)


def test_single_iteration_is_fgsm():
    m = tiny("cnn")
    xs, ys = correct_inputs(m)
    for x, y in zip(xs, ys):
        res = ifgsm(m, x, int(y), AttackConfig(eps=0.03, iters=1))
        assert np.array_equal(res.x_adv, fgsm(m, x, int(y), 0.03))


def test_zero_budget_leaves_input():
    m = tiny("vit")
    xs, ys = correct_inputs(m)
    res = ifgsm(m, xs[0], int(ys[0]), AttackConfig(eps=0.0, iters=5))
    assert np.array_equal(res.x_adv, xs[0]) and not res.success
    assert res.psnr_db == 99.0 and res.eps_used == 0.0


def test_budget_respected():
    m = tiny("cnn")
    xs, ys = correct_inputs(m, 4)
    for x, y in zip(xs, ys):
        res = ifgsm(m, x, int(y), AttackConfig(eps=0.05, iters=7))
        assert np.abs(res.x_adv.astype(np.float64) - x).max() <= 0.05
        assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1


@pytest.mark.parametrize("seed", range(10))
def test_linear_margin_analytic(seed):
    rng = np.random.default_rng(seed)
    dw = rng.normal(size=16)
    x = rng.uniform(0.3, 0.7, 16)
    margin = rng.uniform(0.05, 0.5)
    db = -(dw @ x) - margin  # score difference at x is -margin
    m = identity_linear((1, 4, 4), np.stack([np.zeros(16), dw]), np.array([0.0, db]))
    x32 = x.reshape(1, 4, 4).astype(np.float32)
    s0 = dw @ x32.ravel().astype(np.float64) + db
    threshold = -s0 / np.abs(dw).sum()  # eps at which the sign step cancels the margin
    for eps, flips in ((0.8 * threshold, False), (1.2 * threshold, True)):
        if eps >= 0.3:
            continue
        res = ifgsm(m, x32, 0, AttackConfig(eps=eps, iters=4))
        assert res.success == flips


def test_psnr_values():
    x = np.zeros((1, 4, 4))
    assert psnr(x, x) == 99.0
    assert psnr(x, x + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)


def test_zero_jump_equals_fgsm_travel():
    m = tiny("cnn")
    xs, ys = correct_inputs(m)
    a = rand_jump_attack(m, xs[1], int(ys[1]), AttackConfig("rand_jump_fgsm", eps_r=0.0))
    b = fgsm_travel_attack(m, xs[1], int(ys[1]), AttackConfig("fgsm_travel"))
    assert np.array_equal(a.x_adv, b.x_adv) and a.eps_used == b.eps_used


def test_jump_measured_from_original():
    m = tiny("vit")
    xs, ys = correct_inputs(m)
    res = rand_jump_attack(m, xs[2], int(ys[2]), AttackConfig("rand_jump_fgsm", eps_r=0.05), sample_id=2)
    assert res.eps_used > 0
    assert res.psnr_db == pytest.approx(psnr(xs[2], res.x_adv))


def test_misclassified_raises():
    m = tiny("cnn")
    xs, ys = correct_inputs(m)
    with pytest.raises(MisclassifiedInputError):
        attack(m, xs[0], int((ys[0] + 1) % 10), AttackConfig("fgsm"))


def test_attack_dataset_rows_and_jobs():
    m = tiny("cnn")
    xs, ys = correct_inputs(m, 8, seed=3)
    ys[0] = (ys[0] + 1) % 10  # skipped as misclassified
    cfg = AttackConfig("rand_jump_fgsm", eps_r=0.02)
    a = attack_dataset(m, xs, ys, cfg, jobs=1)
    b = attack_dataset(m, xs, ys, cfg, jobs=4)
    assert [r["sample_id"] for r in a] == list(range(1, 8))
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.keys() == rb.keys()
        assert all(ra[k] == rb[k] or (ra[k] != ra[k] and rb[k] != rb[k]) for k in ra)


def test_zero_budget_full_accuracy_per_bin():
    m = tiny("cnn")
    xs, ys = correct_inputs(m, 10)
    theta = {i: float(t) for i, t in enumerate(np.linspace(0.1, 3.0, 10))}
    rows = attack_dataset(m, xs, ys, AttackConfig("ifgsm", eps=0.0, iters=2), theta)
    rob = robustness_by_curvedness(rows, 5)
    assert rob["overall_accuracy"] == 1.0
    assert all(b["accuracy"] == 1.0 for b in rob["bins"] if b["count"])


def test_single_bin_equals_overall():
    rows = [{"success": s, "theta1": 0.2} for s in (True, False, False, True, False)]
    rob = robustness_by_curvedness(rows, 10)
    populated = [b for b in rob["bins"] if b["count"]]
    assert len(populated) == 1 and populated[0]["accuracy"] == rob["overall_accuracy"] == 0.6


def test_jump_dominance_summary():
    jump = [{"sample_id": i, "theta1": 1.0, "success": True, "eps_used": 0.01} for i in range(3)]
    travel = [{"sample_id": i, "theta1": 1.0, "success": True, "eps_used": 0.02} for i in range(3)]
    out = jump_dominance(jump, travel)
    assert out["n"] == 3 and out["holds"]


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(kind="pgd")
    with pytest.raises(ValueError):
        AttackConfig(iters=0)
    assert AttackConfig(eps=0.01, iters=4).step == 0.0025


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, 20, elements=st.floats(0, 1, width=32)), st.floats(0, 0.5))
def test_ball_bounds_exact(x, eps):
    lo, hi = ball_bounds(x, eps)
    x64 = x.astype(np.float64)
    assert np.all(hi.astype(np.float64) - x64 <= eps) and np.all(x64 - lo.astype(np.float64) <= eps)
    assert np.all(lo <= x) and np.all(x <= hi)
