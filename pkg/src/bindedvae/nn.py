"""Dense feed-forward networks with hand-written reverse mode and Adam.

Everything runs in float64.  A network is described by an immutable
:class:`NetworkSpec`; its trainable values live in :class:`NetworkParams`.
Weights are stored ``(out_dim, in_dim)`` so a layer computes
``x @ W.T + b`` on a row-major batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "linear")

# sigmoid outputs are kept inside this band wherever a log follows
PROB_EPS = 1e-7


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Dense:
    out_dim: int
    activation: str = "linear"
    slope: float = 0.2  # only read for leaky_relu

    def __post_init__(self):
        if self.out_dim < 1:
            raise ValueError(f"layer width must be >= 1, got {self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        d = {"out_dim": self.out_dim, "activation": self.activation}
        if self.activation == "leaky_relu":
            d["slope"] = self.slope
        return d


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layers: tuple[Dense, ...]

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [layer.out_dim for layer in self.layers]
        return [(dims[i + 1], dims[i]) for i in range(len(self.layers))]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(d["input_dim"], tuple(Dense(**l) for l in d["layers"]))


def mlp(input_dim: int, widths, activation: str, out_dim: int, out_activation: str,
        slope: float = 0.2) -> NetworkSpec:
    """Shorthand for a stack of equally-activated hidden layers plus an output layer."""
    layers = [Dense(w, activation, slope) for w in widths]
    layers.append(Dense(out_dim, out_activation, slope))
    return NetworkSpec(input_dim, tuple(layers))


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases])

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        d = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"{prefix}W{i}"] = w
            d[f"{prefix}b{i}"] = b
        return d

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray], n_layers: int,
                   prefix: str = "") -> "NetworkParams":
        return cls([np.array(arrays[f"{prefix}W{i}"], dtype=np.float64) for i in range(n_layers)],
                   [np.array(arrays[f"{prefix}b{i}"], dtype=np.float64) for i in range(n_layers)])

    def check(self, spec: NetworkSpec) -> None:
        if len(self.weights) != len(spec.layers) or len(self.biases) != len(spec.layers):
            raise ShapeError(f"expected {len(spec.layers)} layers, params have {len(self.weights)}")
        for i, ((out_d, in_d), w, b) in enumerate(zip(spec.shapes, self.weights, self.biases)):
            if w.shape != (out_d, in_d) or b.shape != (out_d,):
                raise ShapeError(f"layer {i}: expected W{(out_d, in_d)} b({out_d},), "
                                 f"got W{w.shape} b{b.shape}")

    def equal(self, other: "NetworkParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for out_d, in_d in spec.shapes:
        a = np.sqrt(6.0 / (in_d + out_d))
        weights.append(rng.uniform(-a, a, size=(out_d, in_d)))
        biases.append(np.zeros(out_d))
    return NetworkParams(weights, biases)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(layer: Dense, pre: np.ndarray) -> np.ndarray:
    if layer.activation == "relu":
        return np.maximum(pre, 0.0)
    if layer.activation == "leaky_relu":
        return np.where(pre > 0, pre, layer.slope * pre)
    if layer.activation == "sigmoid":
        return sigmoid(pre)
    return pre


def _activation_grad(layer: Dense, pre: np.ndarray, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    if layer.activation == "relu":
        return g * (pre > 0)
    if layer.activation == "leaky_relu":
        return g * np.where(pre > 0, 1.0, layer.slope)
    if layer.activation == "sigmoid":
        return g * out * (1.0 - out)
    return g


@dataclass
class Tape:
    spec: NetworkSpec
    params: NetworkParams
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def mlp_forward(spec: NetworkSpec, params: NetworkParams,
                batch: np.ndarray) -> tuple[np.ndarray, Tape]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ShapeError(f"layer 0: expected input with {spec.input_dim} columns, "
                         f"got shape {batch.shape}")
    params.check(spec)
    tape = Tape(spec, params)
    h = batch
    for layer, w, b in zip(spec.layers, params.weights, params.biases):
        tape.inputs.append(h)
        pre = h @ w.T + b
        h = _activate(layer, pre)
        tape.pre.append(pre)
        tape.outputs.append(h)
    return h, tape


def mlp_apply(spec: NetworkSpec, params: NetworkParams, batch: np.ndarray) -> np.ndarray:
    return mlp_forward(spec, params, batch)[0]


def mlp_backward(tape: Tape, output_gradient: np.ndarray) -> tuple[NetworkParams, np.ndarray]:
    """Gradients of a scalar loss given dLoss/dOutput.

    Returns the parameter gradients (same layout as the params) and the
    gradient with respect to the network input.
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} does not match forward output "
                         f"{tape.outputs[-1].shape}")
    n = len(tape.spec.layers)
    dw: list[np.ndarray] = [None] * n
    db: list[np.ndarray] = [None] * n
    for i in reversed(range(n)):
        g = _activation_grad(tape.spec.layers[i], tape.pre[i], tape.outputs[i], g)
        dw[i] = g.T @ tape.inputs[i]
        db[i] = g.sum(axis=0)
        g = g @ tape.params.weights[i]
    return NetworkParams(dw, db), g


@dataclass
class AdamState:
    m: NetworkParams
    v: NetworkParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, **kw) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps)


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, b1, b2, step_size, sqrt_c2, eps):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step_size * mi / (math.sqrt(vi) / sqrt_c2 + eps)


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState,
              lr: float) -> NetworkParams:
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to Adam")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    step_size = lr / (1.0 - b1 ** state.step)
    sqrt_c2 = math.sqrt(1.0 - b2 ** state.step)
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        _adam_kernel(p.reshape(-1), np.ascontiguousarray(g).reshape(-1), m.reshape(-1),
                     v.reshape(-1), b1, b2, step_size, sqrt_c2, state.eps)
    return params


def reparameterize(mu: np.ndarray, log_var: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_var / 2) * noise."""
    mu, log_var, noise = (np.asarray(a, dtype=np.float64) for a in (mu, log_var, noise))
    if mu.shape != log_var.shape or noise.shape != mu.shape:
        raise ShapeError(f"mu {mu.shape}, log_var {log_var.shape}, noise {noise.shape} "
                         "must share a shape")
    return mu + np.exp(0.5 * log_var) * noise


def split_moments(enc_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an encoder output ``mu || log_var`` into its halves."""
    d = enc_out.shape[1] // 2
    return enc_out[:, :d], enc_out[:, d:]
