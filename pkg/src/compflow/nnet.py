"""Dense feed-forward networks with explicit backpropagation and Adam.

Everything downstream (vector fields, actors, critics) is built from
``DenseNet``: a plain stack of affine layers with ReLU hidden units and an
identity or tanh output. Gradients are computed by hand so the whole
artifact stays numpy-only and bit-deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("identity", "tanh")


class ShapeError(ValueError):
    """Input/parameter dimension mismatch."""


class NumericsError(ArithmeticError):
    """Non-finite value where a finite one is required."""


@dataclass
class DenseNet:
    """Fully-connected network. ``weights[i]`` has shape (widths[i+1], widths[i])."""

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ShapeError("need at least an input and an output width")
        if any(w <= 0 for w in self.widths):
            raise ShapeError(f"layer widths must be positive, got {self.widths}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.widths[i + 1], self.widths[i])
            if w.shape != want:
                raise ShapeError(f"layer {i} weights have shape {w.shape}, expected {want}")
            if b.shape != (self.widths[i + 1],):
                raise ShapeError(f"layer {i} biases have shape {b.shape}, expected ({self.widths[i + 1]},)")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...]; arrays are live references."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out.append(f"layer {i} weights")
            out.append(f"layer {i} biases")
        return out

    def clone(self) -> "DenseNet":
        return DenseNet(
            widths=list(self.widths),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
        )

    def num_params(self) -> int:
        return sum(p.size for p in self.params())


def init_dense(widths, rng, hidden_activation="relu", output_activation="identity",
               zero_final_layer=False) -> DenseNet:
    """Glorot-uniform init: U(+-sqrt(6/(fan_in+fan_out))) per layer.

    ``zero_final_layer`` zeroes the last layer's weights and biases so the
    network starts as the constant-zero map (used to make a fresh online
    flow field the identity transport).
    """
    widths = [int(w) for w in widths]
    weights, biases = [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        if zero_final_layer and i == len(widths) - 2:
            w = np.zeros_like(w)
        weights.append(w)
        biases.append(b)
    return DenseNet(widths, weights, biases, hidden_activation, output_activation)


def _as_batch(x, width, what):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} has shape {np.asarray(x).shape}, expected (*, {width})")
    return x, squeeze


def forward(net: DenseNet, x):
    """Evaluate the network. Accepts a vector (d,) or a batch (n, d).

    Inference-only path: no activation cache, temporaries reused in place.
    """
    xb, squeeze = _as_batch(x, net.in_dim, "input")
    n_layers = len(net.weights)
    h = xb
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T
        z += b
        if i < n_layers - 1:
            np.maximum(z, 0.0, out=z)
        elif net.output_activation == "tanh":
            np.tanh(z, out=z)
        h = z
    return h[0] if squeeze else h


def forward_cache(net: DenseNet, x):
    """Forward pass keeping the per-layer inputs needed by :func:`backward`.

    Returns (output, cache); the cache holds each layer's input and
    pre-activation for the exact batch that produced the output.
    """
    xb, squeeze = _as_batch(x, net.in_dim, "input")
    inputs = [xb]      # input to each affine layer
    preacts = []       # affine output before activation
    h = xb
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        preacts.append(z)
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        if i < n_layers - 1:
            inputs.append(h)
    cache = {"inputs": inputs, "preacts": preacts, "squeeze": squeeze, "out": h}
    return (h[0] if squeeze else h), cache


def backward(net: DenseNet, cache, output_gradient):
    """Backpropagate ``output_gradient`` (dL/dy) through the cached forward pass.

    Gradients are summed over the batch; fold any 1/batch factor into
    ``output_gradient``. Returns (param_grads, input_grad) with param_grads
    ordered as :meth:`DenseNet.params`.
    """
    if cache is None or "preacts" not in cache:
        raise ValueError("missing forward cache; run forward_cache on this input first")
    if len(cache["preacts"]) != len(net.weights):
        raise ShapeError("cache does not match this network's depth")
    g = np.asarray(output_gradient, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    out = cache["out"]
    if g.shape != out.shape:
        raise ShapeError(f"output gradient shape {g.shape} does not match cached output {out.shape}")

    n_layers = len(net.weights)
    if net.output_activation == "tanh":
        g = g * (1.0 - out ** 2)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        h_in = cache["inputs"][i]
        w_grads[i] = g.T @ h_in
        b_grads[i] = g.sum(axis=0)
        g = g @ net.weights[i]
        if i > 0:
            g = g * (cache["preacts"][i - 1] > 0.0)
    grads = []
    for wg, bg in zip(w_grads, b_grads):
        grads.append(wg)
        grads.append(bg)
    input_grad = g[0] if cache["squeeze"] else g
    return grads, input_grad


@dataclass
class AdamState:
    """First/second-moment accumulators for one parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def clone(self) -> "AdamState":
        s = AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step)
        s.m = [x.copy() for x in self.m]
        s.v = [x.copy() for x in self.v]
        return s


def adam_init(params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ValueError("moment decay rates must lie in (0, 1)")
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def optimizer_step(state: AdamState, params, grads, names=None):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params/grads do not match optimizer state")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, param has {p.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"tensor {i}"
            raise NumericsError(f"non-finite gradient for {label}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# --- checkpoint format: one JSON header line, then little-endian float64 ---

def save_net(net: DenseNet, path, extra_header=None):
    """Write ``net`` to ``path``: JSON header line + flat '<f8' parameter blob."""
    header = {
        "widths": [int(w) for w in net.widths],
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
    }
    if extra_header:
        overlap = set(extra_header) & set(header)
        if overlap:
            raise ValueError(f"extra header keys collide with net header: {sorted(overlap)}")
        header.update(extra_header)
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params())
    payload = json.dumps(header, sort_keys=True).encode() + b"\n" + blob
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_net(path):
    """Read a checkpoint written by :func:`save_net`. Returns (net, extra_header)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line.decode())
    widths = header.pop("widths")
    hidden_activation = header.pop("hidden_activation")
    output_activation = header.pop("output_activation")
    flat = np.frombuffer(blob, dtype="<f8")
    weights, biases = [], []
    ofs = 0
    for i in range(len(widths) - 1):
        n_w = widths[i + 1] * widths[i]
        weights.append(flat[ofs:ofs + n_w].reshape(widths[i + 1], widths[i]).copy())
        ofs += n_w
        biases.append(flat[ofs:ofs + widths[i + 1]].copy())
        ofs += widths[i + 1]
    if ofs != flat.size:
        raise ValueError(f"checkpoint {path} holds {flat.size} floats, expected {ofs}")
    net = DenseNet(widths, weights, biases, hidden_activation, output_activation)
    return net, header
