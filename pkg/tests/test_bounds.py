"""Tests for interval propagation and sector/slope bounding."""

import numpy as np
import pytest

from helpers import random_network
from roacert.bounds import (InvalidIntervalError, ScalarNonlinearity,
                            bound_scalar_nonlinearity, interval_affine,
                            local_sector, local_slope, propagate_bounds,
                            saturation_sector)
from roacert.nn import Activation, eval_nn_full, propagate_equilibrium


def test_interval_affine_matches_vertex_enumeration():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 4))
        W = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        c = rng.standard_normal(n)
        r = rng.uniform(0.1, 2.0, n)
        lo, hi = c - r, c + r
        got_lo, got_hi = interval_affine(W, b, lo, hi)
        # Exhaustive vertices: the extreme of a linear map over a box.
        vals = []
        for mask in range(2**n):
            v = np.where([(mask >> k) & 1 for k in range(n)], hi, lo)
            vals.append(W @ v + b)
        vals = np.array(vals)
        np.testing.assert_allclose(got_lo, vals.min(axis=0), atol=1e-12)
        np.testing.assert_allclose(got_hi, vals.max(axis=0), atol=1e-12)


def test_propagate_bounds_soundness_monte_carlo():
    rng = np.random.default_rng(23)
    for _ in range(10):
        widths = list(rng.integers(1, 6, size=rng.integers(1, 4)))
        nn = random_network(rng, 2, widths, bias_scale=0.2)
        eq = propagate_equilibrium(nn, np.zeros(2))
        dv = float(rng.uniform(0.2, 1.0))
        bounds = propagate_bounds(nn, eq, dv)
        # Sample first-layer inputs in the box by sampling x and clipping v1.
        W1, b1 = nn.layers[0]
        X = rng.uniform(-5, 5, size=(500, 2))
        V1 = X @ W1.T + b1
        inside = np.all(np.abs(V1 - eq.v_star[: len(b1)]) <= dv, axis=1)
        X = X[inside]
        if X.shape[0] == 0:
            continue
        u, v, w = eval_nn_full(nn, X)
        assert np.all(v >= bounds.v_lo - 1e-12)
        assert np.all(v <= bounds.v_hi + 1e-12)
        assert np.all(w >= bounds.w_lo - 1e-12)
        assert np.all(w <= bounds.w_hi + 1e-12)
        assert np.all(np.abs(u) <= bounds.u_bar + 1e-12)


def test_tanh_symmetric_local_sector():
    alpha, beta = local_sector(Activation("tanh"), -0.1, 0.1, 0.0)
    assert abs(alpha - np.tanh(0.1) / 0.1) < 1e-9
    assert beta == 1.0


def test_tanh_offset_local_sector_frozen_oracle():
    # Extremal difference quotients of tanh on [0.5, 1.5] about 1.0:
    # both extremes are attained at the interval endpoints.
    lo_chord = (np.tanh(1.5) - np.tanh(1.0)) / 0.5
    hi_chord = (np.tanh(1.0) - np.tanh(0.5)) / 0.5
    alpha, beta = local_sector(Activation("tanh"), 0.5, 1.5, 1.0)
    assert abs(alpha - lo_chord) < 1e-9
    assert abs(beta - hi_chord) < 1e-9
    assert abs(alpha - 0.2871082) < 1e-6
    assert abs(beta - 0.5989540) < 1e-6


def test_relu_sector_with_kink_inside():
    alpha, beta = local_sector(Activation("relu"), -1.0, 2.0, 0.0)
    assert alpha == 0.0 and beta == 1.0
    alpha, beta = local_sector(Activation("relu"), 0.5, 2.0, 1.0)
    assert abs(alpha - 1.0) < 1e-12 and abs(beta - 1.0) < 1e-12


def test_sector_sound_against_sampled_chords():
    rng = np.random.default_rng(31)
    for kind in ("tanh", "sigmoid", "relu", "leaky_relu"):
        act = Activation(kind)
        for _ in range(20):
            lo = float(rng.uniform(-2.0, 0.5))
            hi = lo + float(rng.uniform(0.1, 2.5))
            c = float(rng.uniform(lo, hi))
            alpha, beta = local_sector(act, lo, hi, c)
            v = rng.uniform(lo, hi, 300)
            v = v[np.abs(v - c) > 1e-8]
            chords = (act(v) - act(np.array([c]))[0]) / (v - c)
            assert np.all(chords >= alpha - 1e-9)
            assert np.all(chords <= beta + 1e-9)


def test_local_slope_tanh_endpoint_rule():
    m, L = local_slope(Activation("tanh"), 0.3, 0.8)
    assert abs(m - (1.0 - np.tanh(0.8) ** 2)) < 1e-12
    assert L == 1.0
    m, L = local_slope(Activation("tanh"), -0.5, 0.9)
    assert abs(m - (1.0 - np.tanh(0.9) ** 2)) < 1e-12


def test_local_slope_relu_cases():
    assert local_slope(Activation("relu"), 0.1, 2.0) == (1.0, 1.0)
    assert local_slope(Activation("relu"), -2.0, -0.1) == (0.0, 0.0)
    assert local_slope(Activation("relu"), -1.0, 1.0) == (0.0, 1.0)


def test_invalid_intervals_raise():
    with pytest.raises(InvalidIntervalError):
        local_sector(Activation("tanh"), 1.0, 0.0, 0.5)
    with pytest.raises(InvalidIntervalError):
        local_sector(Activation("tanh"), 0.0, 1.0, 2.0)
    nl = ScalarNonlinearity(np.sin)
    with pytest.raises(InvalidIntervalError):
        bound_scalar_nonlinearity(nl, 0.0, 1.0, center=2.0)


def test_gravity_residual_bounds_match_closed_form():
    nl = ScalarNonlinearity(lambda p: p - np.sin(p),
                            df=lambda p: 1.0 - np.cos(p))
    (alpha, beta), (m, L) = bound_scalar_nonlinearity(nl, -0.73, 0.73)
    t = 0.73
    assert abs(alpha) < 1e-6
    assert abs(beta - (1.0 - np.sin(t) / t)) < 1e-4
    assert abs(m) < 1e-6
    assert abs(L - (1.0 - np.cos(t))) < 1e-6


def test_bound_scalar_nonlinearity_without_derivative():
    nl = ScalarNonlinearity(lambda p: np.clip(p, -0.7, 0.7))
    (alpha, beta), (m, L) = bound_scalar_nonlinearity(nl, -1.4, 1.4)
    assert abs(alpha - 0.5) < 1e-3
    assert abs(beta - 1.0) < 1e-6
    assert m <= 1e-3 and abs(L - 1.0) < 1e-3


def test_saturation_sector_exact():
    assert saturation_sector(0.7, 1.4) == (0.5, 1.0)
    assert saturation_sector(0.7, 0.3) == (1.0, 1.0)
    with pytest.raises(ValueError):
        saturation_sector(0.0, 1.0)


def test_bounds_shrink_with_delta_v():
    rng = np.random.default_rng(41)
    nn = random_network(rng, 2, [4, 3])
    eq = propagate_equilibrium(nn, np.zeros(2))
    small = propagate_bounds(nn, eq, 0.1)
    big = propagate_bounds(nn, eq, 1.0)
    assert np.all(small.v_hi <= big.v_hi + 1e-12)
    assert np.all(small.v_lo >= big.v_lo - 1e-12)
    # Tighter boxes give tighter (larger alpha) tanh sectors.
    assert np.all(small.alpha >= big.alpha - 1e-12)
