"""Feed-forward neural-network controllers and their linear-fractional form.

A controller is an ell-layer fully-connected network u = W^{l+1} phi(...) +
b^{l+1} with a scalar activation applied elementwise.  For analysis the
nonlinearities are isolated from the linear operations: stacking all
activation inputs v_phi and outputs w_phi, the network becomes

    [u; v_phi] = N [x; w_phi; 1],    w_phi = phi(v_phi),

where N is assembled from the weights and biases.  This module provides
evaluation, the N-matrix decomposition, and equilibrium propagation and
verification for the closed loop with an LTI plant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Activation",
    "NeuralNetwork",
    "NnLft",
    "Equilibrium",
    "EquilibriumReport",
    "build_lft",
    "eval_nn",
    "eval_nn_full",
    "eval_via_lft",
    "propagate_equilibrium",
    "verify_equilibrium",
    "find_equilibrium",
    "load_weights",
    "save_weights",
]

ACTIVATION_KINDS = ("tanh", "sigmoid", "relu", "leaky_relu")


class DimensionError(ValueError):
    """Raised when a vector or matrix does not match the expected layer size."""


@dataclass(frozen=True)
class Activation:
    """Scalar activation function, applied elementwise.

    Supported kinds: tanh, sigmoid, relu, leaky_relu.  All are monotone
    nondecreasing with slope globally bounded in [0, 1] (leaky_relu in
    [a, 1] with a in (0, 1)).
    """

    kind: str
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "tanh":
            return np.tanh(v)
        if self.kind == "sigmoid":
            return 1.0 / (1.0 + np.exp(-v))
        if self.kind == "relu":
            return np.maximum(v, 0.0)
        return np.maximum(self.leaky_slope * v, v)

    def deriv(self, v):
        """Derivative of the scalar map (subgradient value at kinks)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "tanh":
            return 1.0 - np.tanh(v) ** 2
        if self.kind == "sigmoid":
            s = self(v)
            return s * (1.0 - s)
        lo = 0.0 if self.kind == "relu" else self.leaky_slope
        return np.where(v > 0.0, 1.0, lo)

    @property
    def smooth(self) -> bool:
        return self.kind in ("tanh", "sigmoid")

    def global_slope(self) -> tuple[float, float]:
        """Global slope bounds [m, L] of the scalar map."""
        if self.kind == "tanh":
            return 0.0, 1.0
        if self.kind == "sigmoid":
            return 0.0, 0.25
        if self.kind == "relu":
            return 0.0, 1.0
        return self.leaky_slope, 1.0


@dataclass(frozen=True)
class NeuralNetwork:
    """Feed-forward NN controller.

    ``layers`` holds the hidden layers (W^i, b^i) in input-to-output order and
    ``output`` the affine output layer (W^{l+1}, b^{l+1}).  ``activations``
    carries one Activation per hidden layer (a shared activation is the
    common case).  ``output_map`` C, when present, means the layer input is
    C x (output feedback).
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    output: tuple[np.ndarray, np.ndarray]
    activations: tuple[Activation, ...]
    output_map: np.ndarray | None = None

    def __post_init__(self):
        if len(self.activations) != len(self.layers):
            raise ValueError("need one activation per hidden layer")
        prev = None
        for i, (W, b) in enumerate(self.layers, start=1):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionError(f"layer {i}: W must be 2-d with matching bias")
            if prev is not None and W.shape[1] != prev:
                raise DimensionError(
                    f"layer {i}: expects input of size {W.shape[1]}, "
                    f"previous layer produces {prev}"
                )
            prev = W.shape[0]
        Wout, bout = self.output
        if Wout.shape[1] != prev or bout.shape != (Wout.shape[0],):
            raise DimensionError("output layer dimensions do not chain")

    @staticmethod
    def from_arrays(weights, biases, activation: Activation, output_map=None):
        """Build from lists of weights/biases; the last pair is the output layer."""
        layers = tuple(
            (np.asarray(W, dtype=float), np.asarray(b, dtype=float))
            for W, b in zip(weights[:-1], biases[:-1])
        )
        out = (np.asarray(weights[-1], dtype=float), np.asarray(biases[-1], dtype=float))
        C = None if output_map is None else np.asarray(output_map, dtype=float)
        return NeuralNetwork(layers, out, (activation,) * len(layers), C)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_phi(self) -> int:
        """Total neuron count n_1 + ... + n_ell."""
        return sum(W.shape[0] for W, _ in self.layers)

    @property
    def n_in(self) -> int:
        """State dimension seen by the controller (n_G, or n_G for C-mapped nets)."""
        if self.output_map is not None:
            return self.output_map.shape[1]
        return self.layers[0][0].shape[1]

    @property
    def n_u(self) -> int:
        return self.output[0].shape[0]

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W, _ in self.layers)

    def activation_for_neuron(self) -> list[Activation]:
        """Activation of each neuron in stacked v_phi order."""
        acts = []
        for act, (W, _) in zip(self.activations, self.layers):
            acts.extend([act] * W.shape[0])
        return acts

    def phi(self, v_phi: np.ndarray) -> np.ndarray:
        """Apply the stacked combined nonlinearity elementwise."""
        out = np.empty_like(np.asarray(v_phi, dtype=float))
        k = 0
        for act, w in zip(self.activations, self.layer_widths):
            out[..., k : k + w] = act(v_phi[..., k : k + w])
            k += w
        return out


@dataclass(frozen=True)
class NnLft:
    """Block partition of the N matrix isolating the nonlinearities."""

    N_ux: np.ndarray
    N_uw: np.ndarray
    N_ub: np.ndarray
    N_vx: np.ndarray
    N_vw: np.ndarray
    N_vb: np.ndarray

    @property
    def n_u(self) -> int:
        return self.N_ux.shape[0]

    @property
    def n_phi(self) -> int:
        return self.N_vx.shape[0]

    @property
    def n_x(self) -> int:
        return self.N_ux.shape[1]

    def full(self) -> np.ndarray:
        """The (n_u + n_phi) x (n_x + n_phi + 1) matrix N."""
        top = np.hstack([self.N_ux, self.N_uw, self.N_ub.reshape(-1, 1)])
        bot = np.hstack([self.N_vx, self.N_vw, self.N_vb.reshape(-1, 1)])
        return np.vstack([top, bot])


@dataclass(frozen=True)
class Equilibrium:
    """Equilibrium tuple (x*, u*, v*, w*) of the interconnection."""

    x_star: np.ndarray
    u_star: np.ndarray
    v_star: np.ndarray
    w_star: np.ndarray


@dataclass
class EquilibriumReport:
    """Max-norm residuals of the equilibrium conditions."""

    residual_state: float      # ||x* - A x* - B u*||_inf
    residual_lft: float        # ||[u*; v*] - N [x*; w*; 1]||_inf
    residual_activation: float  # ||w* - phi(v*)||_inf
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        worst = max(self.residual_state, self.residual_lft, self.residual_activation)
        self.passed = bool(worst <= self.tol)


def _layer_input(nn: NeuralNetwork, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if nn.output_map is not None:
        if x.shape[-1] != nn.output_map.shape[1]:
            raise DimensionError(
                f"input: expected length {nn.output_map.shape[1]} for output map C, "
                f"got {x.shape[-1]}"
            )
        return x @ nn.output_map.T
    if x.shape[-1] != nn.layers[0][0].shape[1]:
        raise DimensionError(
            f"layer 1: expects input of length {nn.layers[0][0].shape[1]}, "
            f"got {x.shape[-1]}"
        )
    return x


def eval_nn_full(nn: NeuralNetwork, x: np.ndarray):
    """Evaluate the NN, returning (u, v_phi, w_phi).

    ``x`` may be a vector or a batch of shape (..., n_in); the auxiliary
    signals are stacked in layer order along the last axis.
    """
    w = _layer_input(nn, x)
    vs, ws = [], []
    for i, ((W, b), act) in enumerate(zip(nn.layers, nn.activations), start=1):
        if w.shape[-1] != W.shape[1]:
            raise DimensionError(f"layer {i}: expects input of length {W.shape[1]}")
        v = w @ W.T + b
        w = act(v)
        vs.append(v)
        ws.append(w)
    Wout, bout = nn.output
    u = w @ Wout.T + bout
    return u, np.concatenate(vs, axis=-1), np.concatenate(ws, axis=-1)


def eval_nn(nn: NeuralNetwork, x: np.ndarray) -> np.ndarray:
    """Control command u = pi(x) by direct layer recursion."""
    return eval_nn_full(nn, x)[0]


def build_lft(nn: NeuralNetwork) -> NnLft:
    """Assemble the N-matrix block decomposition of the controller.

    N_vw is strictly block lower triangular with W^2..W^ell on the first
    block subdiagonal; N_ux = 0 for state feedback, and N_uw places
    W^{l+1} in the last block column.  With an output map C, the first
    block row of N_vx is W^1 C.
    """
    widths = nn.layer_widths
    n_phi = sum(widths)
    n_x = nn.n_in
    n_u = nn.n_u

    W1, b1 = nn.layers[0]
    N_vx = np.zeros((n_phi, n_x))
    first = W1 if nn.output_map is None else W1 @ nn.output_map
    N_vx[: widths[0], :] = first

    N_vw = np.zeros((n_phi, n_phi))
    N_vb = np.zeros(n_phi)
    N_vb[: widths[0]] = b1
    row = widths[0]
    col = 0
    for i in range(1, nn.n_layers):
        W, b = nn.layers[i]
        N_vw[row : row + widths[i], col : col + widths[i - 1]] = W
        N_vb[row : row + widths[i]] = b
        row += widths[i]
        col += widths[i - 1]

    Wout, bout = nn.output
    N_uw = np.zeros((n_u, n_phi))
    N_uw[:, n_phi - widths[-1] :] = Wout
    return NnLft(
        N_ux=np.zeros((n_u, n_x)),
        N_uw=N_uw,
        N_ub=np.asarray(bout, dtype=float),
        N_vx=N_vx,
        N_vw=N_vw,
        N_vb=N_vb,
    )


def eval_via_lft(nn: NeuralNetwork, x: np.ndarray, lft: NnLft | None = None) -> np.ndarray:
    """Evaluate u through the N-matrix fixed-point recursion.

    Because N_vw is strictly block lower triangular the fixed point
    w = phi(N_vx x + N_vw w + N_vb) resolves in n_layers sweeps.
    """
    if lft is None:
        lft = build_lft(nn)
    x = np.asarray(x, dtype=float)
    w = np.zeros(lft.n_phi)
    for _ in range(nn.n_layers):
        w = nn.phi(lft.N_vx @ x + lft.N_vw @ w + lft.N_vb)
    return lft.N_ux @ x + lft.N_uw @ w + lft.N_ub


def propagate_equilibrium(nn: NeuralNetwork, x_star: np.ndarray) -> Equilibrium:
    """Propagate x* through the layers to obtain (u*, v*, w*)."""
    x_star = np.asarray(x_star, dtype=float)
    u, v, w = eval_nn_full(nn, x_star)
    return Equilibrium(x_star=x_star, u_star=u, v_star=v, w_star=w)


def verify_equilibrium(plant, nn: NeuralNetwork, eq: Equilibrium, tol: float = 1e-9):
    """Check the equilibrium conditions of the closed loop.

    ``plant`` must expose A and the input matrix that multiplies u
    (attribute ``B`` for a nominal plant, ``B2`` for the uncertain form).
    """
    A = plant.A
    B = getattr(plant, "B", None)
    if B is None:
        B = plant.B2
    r_state = float(
        np.max(np.abs(eq.x_star - A @ eq.x_star - B @ eq.u_star), initial=0.0)
    )
    lft = build_lft(nn)
    zvec = np.concatenate([eq.x_star, eq.w_star, [1.0]])
    uv = lft.full() @ zvec
    r_lft = float(np.max(np.abs(np.concatenate([eq.u_star, eq.v_star]) - uv), initial=0.0))
    r_act = float(np.max(np.abs(eq.w_star - nn.phi(eq.v_star)), initial=0.0))
    return EquilibriumReport(r_state, r_lft, r_act, tol)


def find_equilibrium(
    plant,
    nn: NeuralNetwork,
    x0: np.ndarray | None = None,
    damping: float = 0.5,
    max_iter: int = 5000,
    tol: float = 1e-12,
) -> Equilibrium:
    """Best-effort damped fixed-point iteration on x = A x + B pi(x).

    Convergence is not guaranteed; the returned equilibrium should be
    checked with :func:`verify_equilibrium` before use.
    """
    A = plant.A
    B = getattr(plant, "B", None)
    if B is None:
        B = plant.B2
    x = np.zeros(A.shape[0]) if x0 is None else np.asarray(x0, dtype=float)
    for _ in range(max_iter):
        x_next = A @ x + B @ eval_nn(nn, x)
        x = (1.0 - damping) * x + damping * x_next
        if np.max(np.abs(x_next - x)) <= tol:
            break
    return propagate_equilibrium(nn, x)


# --- weights file I/O -------------------------------------------------------

def load_weights(path) -> NeuralNetwork:
    """Load a NN from the JSON weights format.

    Schema: {"activation": str, "leaky_slope": optional number,
    "layers": [{"W": [[...]], "b": [...]}, ...],
    "output": {"W": [[...]], "b": [...]}, "C": optional [[...]]}.
    """
    with open(path) as fh:
        data = json.load(fh)
    kind = data["activation"]
    act = Activation(kind, leaky_slope=data.get("leaky_slope", 0.01))
    layers = tuple(
        (np.asarray(layer["W"], dtype=float), np.asarray(layer["b"], dtype=float))
        for layer in data["layers"]
    )
    out = (
        np.asarray(data["output"]["W"], dtype=float),
        np.asarray(data["output"]["b"], dtype=float),
    )
    C = np.asarray(data["C"], dtype=float) if "C" in data and data["C"] is not None else None
    return NeuralNetwork(layers, out, (act,) * len(layers), C)


def save_weights(nn: NeuralNetwork, path) -> None:
    """Write a NN to the JSON weights format (row-major matrices)."""
    kinds = {act.kind for act in nn.activations}
    if len(kinds) != 1:
        raise ValueError("weights file supports a single shared activation")
    data = {
        "activation": nn.activations[0].kind,
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in nn.layers],
        "output": {"W": nn.output[0].tolist(), "b": nn.output[1].tolist()},
    }
    if nn.activations[0].kind == "leaky_relu":
        data["leaky_slope"] = nn.activations[0].leaky_slope
    if nn.output_map is not None:
        data["C"] = nn.output_map.tolist()
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
