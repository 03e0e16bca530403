"""Shared fixtures/builders for the test suite."""

from __future__ import annotations

import numpy as np

from roacert.nn import Activation, NeuralNetwork


def random_network(rng: np.random.Generator, n_in: int, widths, n_u: int = 1,
                   kind: str = "tanh", weight_scale: float = 1.0,
                   bias_scale: float = 0.0) -> NeuralNetwork:
    """A random feed-forward net with controlled weight magnitudes."""
    layers = []
    prev = n_in
    for w in widths:
        W = weight_scale * rng.standard_normal((w, prev)) / np.sqrt(prev)
        b = bias_scale * rng.standard_normal(w)
        layers.append((W, b))
        prev = w
    Wout = weight_scale * rng.standard_normal((n_u, prev)) / np.sqrt(prev)
    bout = bias_scale * rng.standard_normal(n_u)
    return NeuralNetwork(tuple(layers), (Wout, bout),
                         (Activation(kind),) * len(layers))


def scalar_instance(rng: np.random.Generator):
    """Random 1-state/1-neuron closed loop for oracle comparisons.

    Returns (a, b, w1, w2, delta_v): plant x+ = a x + b u, controller
    u = w2 tanh(w1 x).
    """
    a = rng.uniform(0.6, 1.35)
    b = rng.uniform(0.3, 1.5)
    w1 = rng.uniform(0.4, 2.0)
    # Place the closed-loop slope at the origin around the stability
    # boundary so both feasible and infeasible instances occur.
    s = rng.uniform(-1.3, 1.3)
    w2 = (s - a) / (b * w1)
    delta_v = rng.uniform(0.2, 1.5)
    return a, b, w1, w2, delta_v
