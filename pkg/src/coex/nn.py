"""Minimal dense network core with manual backpropagation.

Float64 throughout: the models here are desk scale, so speed is irrelevant
and tight finite-difference tolerances are possible.  Model parameters are
exclusively owned by one training driver at a time; forward passes on
frozen models may run concurrently.

Checkpoint format (``save_mlp``/``load_mlp``), little-endian binary:

    magic   4 bytes  b"MLP1"
    seed    int64    seed the parameters were initialized from
    layers  int32    layer count
    per layer:
        activation  int8   0 = none, 1 = relu
        out_dim     int64
        in_dim      int64
        weights     out_dim*in_dim float64, row-major
        bias        out_dim float64

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coex.util import atomic_write_bytes

ACTIVATIONS = ("none", "relu")
PROB_EPS = 1e-12

_MAGIC = b"MLP1"


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("inconsistent layer shapes")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("layer parameters must be finite")


@dataclass
class Mlp:
    layers: list[DenseLayer]
    seed: int = 0

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...]; views, not copies."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


@dataclass
class ForwardCache:
    mlp: Mlp
    inputs: list[np.ndarray]  # input to each layer
    pre_activations: list[np.ndarray]


def init_mlp(dims, hidden_activation: str = "relu", output_activation: str = "none",
             seed: int = 0) -> Mlp:
    """He-scaled random initialization: W ~ N(0, 2/in_dim), zero bias."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        layers.append(DenseLayer(weights=w, bias=np.zeros(d_out), activation=act))
    return Mlp(layers=layers, seed=seed)


def forward(mlp: Mlp, batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns outputs plus the cache backward() needs."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match input dim {mlp.input_dim}")
    inputs, pre_acts = [], []
    for layer in mlp.layers:
        inputs.append(x)
        z = x @ layer.weights.T + layer.bias
        pre_acts.append(z)
        x = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return x, ForwardCache(mlp=mlp, inputs=inputs, pre_activations=pre_acts)


def backward(mlp: Mlp, cache: ForwardCache, grad_output):
    """Gradients for every parameter (ordered like ``mlp.parameters()``)
    plus the gradient w.r.t. the network input, for chaining."""
    if cache.mlp is not mlp:
        raise ValueError("cache does not belong to this model")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != (cache.inputs[0].shape[0], mlp.output_dim):
        raise ValueError(f"upstream gradient shape {g.shape} mismatch")
    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre_activations[i] > 0.0)
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weights
    return grads, g


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row max."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    dot = (grad_probs * probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - dot)


def weighted_cross_entropy(probs, targets, sample_weights) -> tuple[float, np.ndarray]:
    """Weighted CE over row-stochastic probs; also returns the gradient with
    respect to the *logits* that produced them (fused softmax-CE form,
    scaled per row by the sample weight)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    w = np.asarray(sample_weights, dtype=np.float64)
    m, c = p.shape
    if y.shape != (m,) or w.shape != (m,):
        raise ValueError("targets and weights must match the batch size")
    if (y < 0).any() or (y >= c).any():
        raise ValueError("target class index out of range")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0.0:
        raise ValueError("weights must not all be zero")
    picked = np.clip(p[np.arange(m), y], PROB_EPS, None)
    loss = float(-(w * np.log(picked)).sum())
    grad = p.copy()
    grad[np.arange(m), y] -= 1.0
    grad *= w[:, None]
    return loss, grad


@dataclass
class SgdState:
    """SGD with classical momentum: v <- mu*v + g, p <- p - lr*v."""
    learning_rate: float
    momentum: float = 0.9
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: SgdState) -> None:
    """In-place momentum update of every parameter array."""
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ValueError("parameter/gradient/velocity lists must align")
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v *= state.momentum
        v += g
        p -= state.learning_rate * v


def finite_difference_grads(loss_fn, params: list[np.ndarray], epsilon: float = 1e-5):
    """Central-difference gradient of ``loss_fn()`` w.r.t. each parameter
    array (mutated in place around each evaluation)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = loss_fn()
            flat[i] = orig - epsilon
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * epsilon)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric) -> float:
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        worst = max(worst, float((np.abs(ga - gn) / denom).max()))
    return worst


def gradient_check(mlp: Mlp, loss_fn, batch, epsilon: float = 1e-5) -> float:
    """Compare ``loss_fn(mlp, batch) -> (loss, grads)`` against central
    finite differences; returns the worst relative error over parameters.

    Run in double precision; keep relu pre-activations away from zero or
    the kink invalidates the numeric side.
    """
    _, analytic = loss_fn(mlp, batch)
    numeric = finite_difference_grads(lambda: loss_fn(mlp, batch)[0], mlp.parameters(), epsilon)
    return max_relative_error(analytic, numeric)


def save_mlp(path, mlp: Mlp) -> None:
    chunks = [_MAGIC, struct.pack("<qi", mlp.seed, len(mlp.layers))]
    for layer in mlp.layers:
        out_dim, in_dim = layer.weights.shape
        chunks.append(struct.pack("<bqq", ACTIVATIONS.index(layer.activation), out_dim, in_dim))
        chunks.append(np.ascontiguousarray(layer.weights).tobytes())
        chunks.append(np.ascontiguousarray(layer.bias).tobytes())
    atomic_write_bytes(Path(path), b"".join(chunks))


def load_mlp(path) -> Mlp:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    seed, n_layers = struct.unpack_from("<qi", data, 4)
    offset = 4 + 12
    layers = []
    for _ in range(n_layers):
        act_code, out_dim, in_dim = struct.unpack_from("<bqq", data, offset)
        offset += 17
        w = np.frombuffer(data, dtype="<f8", count=out_dim * in_dim, offset=offset)
        offset += out_dim * in_dim * 8
        b = np.frombuffer(data, dtype="<f8", count=out_dim, offset=offset)
        offset += out_dim * 8
        layers.append(DenseLayer(weights=w.reshape(out_dim, in_dim).copy(),
                                 bias=b.copy(), activation=ACTIVATIONS[act_code]))
    return Mlp(layers=layers, seed=seed)
