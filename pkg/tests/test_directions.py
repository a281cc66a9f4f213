import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvprobe.directions import (DirectionMode, fgsm_direction, input_gradient, make_direction,
                                  orthogonal_direction, random_direction, sample_rng, sign_direction)
from curvprobe.errors import DegenerateGradientError
from conftest import tiny
from oracles import identity_linear

X = np.random.default_rng(5).uniform(0.2, 0.8, (3, 8, 8)).astype(np.float32)


def test_sign_definition():
    np.testing.assert_array_equal(sign_direction(np.array([0.3, -0.2])), [1, -1])


def test_zero_component_maps_to_plus_one():
    np.testing.assert_array_equal(sign_direction(np.array([0.0, -0.0, -1e-30])), [1, 1, -1])


@pytest.mark.parametrize("tag", ["fgsm", "rand", "fgsm_perp", "rand_jump_fgsm", "fgsm_jump_fgsm"])
def test_direction_norm(tag):
    m = tiny("cnn")
    x0, d = make_direction(m, X, 2, DirectionMode(tag), sample_rng(0, 0))
    assert np.linalg.norm(d.astype(np.float64)) == pytest.approx(np.sqrt(X.size), rel=1e-5)
    assert x0.min() >= 0 and x0.max() <= 1


def test_linear_logistic_direction_is_analytic():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(2, 16))
    m = identity_linear((1, 4, 4), w, np.zeros(2))
    x = rng.uniform(0, 1, (1, 4, 4)).astype(np.float32)
    # d loss / dx for label 0 is (p1) (w1 - w0): its sign is sign(w1 - w0)
    np.testing.assert_array_equal(fgsm_direction(m, x, 0).ravel(), np.where(w[1] - w[0] < 0, -1, 1))


def test_fgsm_perp_orthogonal():
    m = tiny("vit")
    d_f = fgsm_direction(m, X, 1)
    _, d = make_direction(m, X, 1, DirectionMode("fgsm_perp"), sample_rng(3, 9))
    assert abs(float(d.astype(np.float64).ravel() @ d_f.ravel())) / X.size <= 1e-4


def test_rand_deterministic():
    a = random_direction((3, 8, 8), sample_rng(1, 2))
    b = random_direction((3, 8, 8), sample_rng(1, 2))
    c = random_direction((3, 8, 8), sample_rng(1, 3))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_zero_jump_equals_fgsm():
    m = tiny("cnn")
    x0, d = make_direction(m, X, 4, DirectionMode("rand_jump_fgsm", eps_r=0.0), sample_rng(0, 0))
    xf, df = make_direction(m, X, 4, DirectionMode("fgsm"), sample_rng(0, 0))
    assert np.array_equal(x0, xf) and np.array_equal(d, df)


def test_zero_gradient_raises():
    m = identity_linear((1, 2, 2), np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(DegenerateGradientError):
        fgsm_direction(m, np.full((1, 2, 2), 0.5, np.float32), 0)


def test_batched_gradient_matches_single():
    m = tiny("cnn")
    xb = np.stack([X, 1 - X])
    g = input_gradient(m, xb, np.array([1, 2]))
    np.testing.assert_allclose(g[1], input_gradient(m, xb[1], 2), rtol=1e-5, atol=1e-7)


def test_bad_mode():
    with pytest.raises(ValueError):
        DirectionMode("sideways")


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**31))
def test_orthogonal_direction_property(dim, seed):
    rng = np.random.default_rng(seed)
    d = np.where(rng.random(dim) < 0.5, -1.0, 1.0).astype(np.float32)
    p = orthogonal_direction(d, rng)
    assert abs(float(p.astype(np.float64) @ d)) <= 1e-4 * dim
    assert np.linalg.norm(p.astype(np.float64)) == pytest.approx(np.sqrt(dim), rel=1e-5)
