"""Interval bound propagation and local sector / slope bounds.

Given a box around the equilibrium value of the first-layer activation
input, interval bounds are pushed through the network layer by layer:
monotone activations map input intervals to output intervals, and the
next pre-activation interval follows from the closed-form solution of
maximizing a linear functional over a box (center/radius form).  The
resulting per-neuron intervals yield offset local sector bounds
[alpha, beta] about the equilibrium and local slope bounds [m, L],
which feed the stability LMIs.  Generic scalar nonlinearities (e.g.
saturation, theta - sin(theta)) are bounded by grid scans.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from roacert.nn import Activation, Equilibrium, NeuralNetwork

__all__ = [
    "ActivationBounds",
    "ScalarNonlinearity",
    "propagate_bounds",
    "interval_affine",
    "local_sector",
    "local_slope",
    "bound_scalar_nonlinearity",
    "saturation_sector",
]


class InvalidIntervalError(ValueError):
    """Raised when an interval has lo > hi or the center falls outside it."""


@dataclass
class ActivationBounds:
    """Per-neuron activation bounds derived from interval propagation.

    ``v_lo``/``v_hi`` bound the activation inputs, ``w_lo``/``w_hi`` the
    outputs, ``alpha``/``beta`` are the offset local sector bounds around
    the equilibrium, ``slope_lo``/``slope_hi`` the local slope bounds,
    ``delta_v`` the first-layer interval radius, and ``u_bar`` the largest
    control magnitude deviation consistent with the box.
    """

    v_lo: np.ndarray
    v_hi: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    slope_lo: np.ndarray
    slope_hi: np.ndarray
    delta_v: float
    u_bar: np.ndarray
    u_lo: np.ndarray | None = None
    u_hi: np.ndarray | None = None


@dataclass
class ScalarNonlinearity:
    """A scalar map with optional derivative, for sector/slope bounding."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray] | None = None
    description: str = ""


def interval_affine(W: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Elementwise bounds of W y + b over the box lo <= y <= hi.

    Uses the center/radius form: with c = (hi+lo)/2 and r = (hi-lo)/2 the
    extreme of row y^T w + b_i over the box is y^T c + b_i +/- sum_j |y_j r_j|.
    """
    c = 0.5 * (hi + lo)
    r = 0.5 * (hi - lo)
    mid = W @ c + b
    rad = np.abs(W) @ r
    return mid - rad, mid + rad


def propagate_bounds(nn: NeuralNetwork, eq: Equilibrium, delta_v: float) -> ActivationBounds:
    """Propagate the first-layer box [v*^1 - delta_v, v*^1 + delta_v].

    Returns intervals for every activation input/output, the offset local
    sector and slope bounds per neuron, and the control bounds induced by
    the box (u_bar is the elementwise largest |u| over the box).
    """
    if delta_v <= 0.0:
        raise ValueError("delta_v must be positive")
    widths = nn.layer_widths
    offs = np.concatenate([[0], np.cumsum(widths)])

    v_lo = np.empty(nn.n_phi)
    v_hi = np.empty(nn.n_phi)
    w_lo = np.empty(nn.n_phi)
    w_hi = np.empty(nn.n_phi)

    lo = eq.v_star[offs[0] : offs[1]] - delta_v
    hi = eq.v_star[offs[0] : offs[1]] + delta_v
    for i, ((W, b), act) in enumerate(zip(nn.layers, nn.activations)):
        if i > 0:
            lo, hi = interval_affine(W, b, w_prev_lo, w_prev_hi)
        sl = slice(offs[i], offs[i + 1])
        # Guard against rounding pushing the equilibrium an ulp outside
        # its own reachable interval; widening is always sound.
        lo = np.minimum(lo, eq.v_star[sl])
        hi = np.maximum(hi, eq.v_star[sl])
        v_lo[sl], v_hi[sl] = lo, hi
        # Monotone activation: image of an interval is the endpoint image.
        w_prev_lo, w_prev_hi = act(lo), act(hi)
        w_lo[sl], w_hi[sl] = w_prev_lo, w_prev_hi

    Wout, bout = nn.output
    u_lo, u_hi = interval_affine(Wout, bout, w_prev_lo, w_prev_hi)
    u_bar = np.maximum(np.abs(u_lo), np.abs(u_hi))

    acts = nn.activation_for_neuron()
    alpha = np.empty(nn.n_phi)
    beta = np.empty(nn.n_phi)
    m = np.empty(nn.n_phi)
    L = np.empty(nn.n_phi)
    for i, act in enumerate(acts):
        alpha[i], beta[i] = local_sector(act, v_lo[i], v_hi[i], eq.v_star[i])
        m[i], L[i] = local_slope(act, v_lo[i], v_hi[i])
    return ActivationBounds(
        v_lo=v_lo, v_hi=v_hi, w_lo=w_lo, w_hi=w_hi,
        alpha=alpha, beta=beta, slope_lo=m, slope_hi=L,
        delta_v=float(delta_v), u_bar=u_bar, u_lo=u_lo, u_hi=u_hi,
    )


def _chord_scan(act: Activation, lo: float, hi: float, center: float, grid_n: int = 2001):
    """Extremal secant slopes (phi(v) - phi(c)) / (v - c) over [lo, hi].

    Endpoints, the center limit (the derivative at the center) and kink
    points are evaluated exactly; smooth activations additionally get a
    local refinement around the grid extrema.
    """
    fc = float(act(center))

    def chord(v):
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        close = np.abs(v - center) < 1e-14
        out[close] = act.deriv(center)
        vv = v[~close]
        out[~close] = (np.asarray(act(vv)) - fc) / (vv - center)
        return out

    pts = [lo, hi, center]
    if act.kind in ("relu", "leaky_relu") and lo < 0.0 < hi:
        pts.append(0.0)
    pts = np.array(pts)
    grid = np.linspace(lo, hi, grid_n)
    cand = np.concatenate([pts, grid])
    vals = chord(cand)
    # The derivative at the center is the limit of chords shrinking onto it.
    d_center = float(act.deriv(center))
    c_min = min(vals.min(), d_center)
    c_max = max(vals.max(), d_center)

    if act.smooth and hi > lo:
        # Interior chord extrema are stationary points; polish them.
        def neg(v):
            return -float(chord(np.array([v]))[0])

        def pos(v):
            return float(chord(np.array([v]))[0])

        i_min = int(np.argmin(vals[len(pts):]))
        i_max = int(np.argmax(vals[len(pts):]))
        h = (hi - lo) / (grid_n - 1)
        for idx, fun, is_min in ((i_min, pos, True), (i_max, neg, False)):
            a = max(lo, grid[idx] - h)
            b = min(hi, grid[idx] + h)
            if b > a:
                res = minimize_scalar(fun, bounds=(a, b), method="bounded",
                                      options={"xatol": 1e-12})
                val = float(chord(np.array([res.x]))[0])
                if is_min:
                    c_min = min(c_min, val)
                else:
                    c_max = max(c_max, val)
    return c_min, c_max


def local_sector(act: Activation, v_lo: float, v_hi: float, v_star: float):
    """Offset local sector [alpha, beta] of ``act`` about v_star on [v_lo, v_hi].

    alpha is the infimum and beta the supremum of the secant slopes from
    (v_star, phi(v_star)); both are capped by the global sector so the
    returned bounds are always sound.  For tanh about the origin this
    recovers alpha = tanh(v_hi)/v_hi, beta = 1.
    """
    if v_lo > v_hi:
        raise InvalidIntervalError(f"invalid interval [{v_lo}, {v_hi}]")
    if not v_lo <= v_star <= v_hi:
        raise InvalidIntervalError(
            f"center {v_star} outside interval [{v_lo}, {v_hi}]"
        )
    g_lo, g_hi = act.global_slope()
    if v_hi == v_lo:
        d = float(act.deriv(v_star))
        return d, d
    c_min, c_max = _chord_scan(act, v_lo, v_hi, v_star)
    return max(c_min, g_lo), min(c_max, g_hi)


def local_slope(act: Activation, v_lo: float, v_hi: float):
    """Local slope bounds [m, L] of ``act`` on [v_lo, v_hi].

    tanh/sigmoid: m is the derivative at the endpoint farther from the
    derivative peak (the derivative is unimodal, so the interval minimum
    is attained at an endpoint); L is the global bound.  relu and
    leaky_relu keep their global slopes whenever the kink is inside the
    interval.
    """
    if v_lo > v_hi:
        raise InvalidIntervalError(f"invalid interval [{v_lo}, {v_hi}]")
    if act.kind in ("tanh", "sigmoid"):
        m = float(min(act.deriv(v_lo), act.deriv(v_hi)))
        return m, act.global_slope()[1]
    a = 0.0 if act.kind == "relu" else act.leaky_slope
    if v_lo >= 0.0:
        return 1.0, 1.0
    if v_hi <= 0.0:
        return a, a
    return a, 1.0


def bound_scalar_nonlinearity(
    nl: ScalarNonlinearity,
    lo: float,
    hi: float,
    center: float = 0.0,
    grid_n: int = 10001,
    safety: float = 1e-9,
):
    """Sector and slope bounds of a scalar map on [lo, hi] about ``center``.

    The sector comes from extremal difference quotients against the center
    over a uniform grid (endpoints and center included); the slope from
    extremal derivatives, or adjacent-point difference quotients when no
    derivative is supplied.  Bounds are rounded outward by the relative
    ``safety`` factor.  Returns ((alpha, beta), (m, L)).
    """
    if not lo <= center <= hi:
        raise InvalidIntervalError(f"center {center} outside [{lo}, {hi}]")
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    grid = np.unique(np.concatenate([np.linspace(lo, hi, grid_n), [center]]))
    fv = np.asarray(nl.f(grid), dtype=float)
    if not np.all(np.isfinite(fv)):
        raise ValueError("nonlinearity is not finite on the interval")
    fc = float(np.asarray(nl.f(np.array([center])))[0])

    mask = grid != center
    quot = (fv[mask] - fc) / (grid[mask] - center)
    sec = [quot.min(initial=np.inf), quot.max(initial=-np.inf)]
    if nl.df is not None:
        dc = float(np.asarray(nl.df(np.array([center])))[0])
        sec[0] = min(sec[0], dc)
        sec[1] = max(sec[1], dc)
        dv = np.asarray(nl.df(grid), dtype=float)
        slope = [float(dv.min()), float(dv.max())]
    else:
        dq = np.diff(fv) / np.diff(grid)
        slope = [float(dq.min()), float(dq.max())]

    def outward(pair):
        a, b = pair
        width = max(abs(a), abs(b), 1.0)
        return float(a - safety * width), float(b + safety * width)

    return outward(sec), outward(slope)


def saturation_sector(u_max: float, u_bar: float):
    """Local sector of sat(u) = sgn(u) min(|u|, u_max) for |u| <= u_bar.

    Exact closed form: [u_max / u_bar, 1] when the box exceeds the
    saturation level, else the identity sector [1, 1].
    """
    if u_max <= 0.0 or u_bar <= 0.0:
        raise ValueError("u_max and u_bar must be positive")
    return min(1.0, u_max / u_bar), 1.0
