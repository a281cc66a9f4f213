import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from curvprobe.directions import DirectionMode, fgsm_direction
from curvprobe.trainer import theta1_batch
from curvprobe.trajectory import (TrajectoryRecord, boundary_distance_report, curvedness_stats, pearson,
                                  run_trajectory, step_geometry, theta1, trajectories, travel_points)
from curvprobe.zoo import outputs
from conftest import tiny
from oracles import identity_linear, linear_boundary_case, random_affine


def record(th1, turn, sid=0):
    theta = np.array([th1, turn - th1])
    return TrajectoryRecord(sid, "fgsm", 3, 0.1, np.ones(3), theta, np.zeros(2), np.ones(2))


def test_identity_model_is_straight():
    rng = np.random.default_rng(0)
    m = identity_linear((1, 4, 4), rng.normal(size=(2, 16)), np.zeros(2))
    x = rng.uniform(0.3, 0.7, (1, 4, 4)).astype(np.float32)
    d = fgsm_direction(m, x, 0)
    rec = run_trajectory(m, x, d, 10, 0.25)
    assert np.nanmax(rec.theta) < 1e-5
    np.testing.assert_allclose(rec.omega, 0.25 / 10 * 4, rtol=1e-5)


def test_orthogonal_steps():
    omega, theta = step_geometry(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]))
    np.testing.assert_allclose(omega, [1, 1])
    assert theta[0] == pytest.approx(math.pi / 2)


def test_zero_step_gives_missing_theta():
    omega, theta = step_geometry(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
    assert np.isnan(theta).all()
    rec = TrajectoryRecord(0, "fgsm", 3, 1.0, omega, theta, np.zeros(2), np.ones(2))
    assert rec.missing_theta == 2 and rec.total_turn == 0.0


def test_reversal_is_pi():
    _, theta = step_geometry(np.array([[0.0], [1.0], [0.0]]))
    assert theta[0] == pytest.approx(math.pi)


def test_two_point_pearson():
    stats = curvedness_stats([record(0.1, 1.0, 0), record(0.9, 9.0, 1)])
    assert stats["correlation"][0]["pearson"] == pytest.approx(1.0)


def test_linear_records_have_undefined_correlation():
    rng = np.random.default_rng(1)
    m = random_affine(rng)
    xs = rng.uniform(0.3, 0.7, (6, 1, 4, 4)).astype(np.float32)
    ys = np.argmax(outputs(m, xs)[0], axis=1)
    recs, fails = trajectories(m, xs, ys, [DirectionMode("fgsm")], n_steps=10, step=0.01)
    assert not fails and len(recs) == 6
    assert all(r.total_turn < 1e-4 for r in recs)
    assert math.isnan(curvedness_stats(recs)["correlation"][0]["pearson"])


def test_pearson_constant_side_is_nan():
    assert math.isnan(pearson([1, 1, 1], [1, 2, 3]))
    assert pearson([1, 2, 3], [2, 4, 7]) > 0.9


def test_travel_points_clipped_and_anchored():
    x = np.full((1, 2, 2), 0.9, np.float32)
    pts = travel_points(x, np.ones_like(x), 4, 0.4)
    assert pts.max() == 1.0
    assert np.array_equal(pts[0], x)


def test_too_few_steps():
    m = random_affine(np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_trajectory(m, np.zeros((1, 4, 4), np.float32), np.ones((1, 4, 4), np.float32), 1, 0.1)


def test_linear_distance_proportional_to_length():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(2, 16))
    m = identity_linear((1, 4, 4), w, np.array([0.0, 0.0]))
    xs = rng.uniform(0.35, 0.65, (8, 1, 4, 4)).astype(np.float32)
    ys = np.argmax(outputs(m, xs)[0], axis=1)
    rep = boundary_distance_report(m, xs, ys, [DirectionMode("fgsm")], n_steps=10)
    ratios = [r["repr_distance"] / r["eps_star"] for r in rep["rows"] if r["crossed"]]
    assert len(ratios) >= 4
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-3)


def test_uncrossed_row_flagged():
    w = np.array([[0.0, 0.0, 0.0, 0.0], [1.0, -1.0, 1.0, -1.0]])
    m = identity_linear((1, 2, 2), w, np.array([0.0, -2.5]))
    # the score difference starts at -2.5 and saturates at -0.5 once every pixel is clipped
    x = np.full((1, 1, 2, 2), 0.5, np.float32)
    rep = boundary_distance_report(m, x, np.array([0]), [DirectionMode("fgsm")])
    row = rep["rows"][0]
    assert row["crossed"] is False and math.isnan(row["repr_distance"])


def test_theta1_batch_matches_single():
    m = tiny("cnn")
    xs = np.random.default_rng(3).uniform(0, 1, (3, 3, 8, 8)).astype(np.float32)
    ys = np.array([0, 1, 2])
    batch = theta1_batch(m, xs, ys, 0.002)
    single = [theta1(m, xs[i], int(ys[i]), 0.002) for i in range(3)]
    np.testing.assert_allclose(batch, single, rtol=1e-4, atol=1e-6)


def test_trajectories_parallel_identical():
    m = tiny("vit")
    xs = np.random.default_rng(4).uniform(0, 1, (4, 3, 8, 8)).astype(np.float32)
    ys = np.argmax(outputs(m, xs)[0], axis=1)
    modes = [DirectionMode("fgsm"), DirectionMode("rand_jump_fgsm", seed=1)]
    a, _ = trajectories(m, xs, ys, modes, n_steps=5, jobs=1)
    b, _ = trajectories(m, xs, ys, modes, n_steps=5, jobs=3)
    assert [(r.sample_id, r.mode) for r in a] == [(r.sample_id, r.mode) for r in b]
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.omega, rb.omega) and np.array_equal(ra.theta, rb.theta, equal_nan=True)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-10, 10)))
def test_angles_in_range(z):
    omega, theta = step_geometry(z)
    assert np.all(omega >= 0)
    finite = theta[np.isfinite(theta)]
    assert np.all((finite >= 0) & (finite <= math.pi))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.2))
def test_affine_trajectory_property(seed, eps):
    rng = np.random.default_rng(seed)
    m = random_affine(rng)
    x = rng.uniform(0.3, 0.7, (1, 4, 4)).astype(np.float32)
    d = np.where(rng.random((1, 4, 4)) < 0.5, -1.0, 1.0).astype(np.float32)
    rec = run_trajectory(m, x, d, 8, eps)
    assert np.nanmax(rec.theta) < 1e-3
