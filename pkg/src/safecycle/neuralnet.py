"""Minimal dense-network substrate: forward, exact backprop, MSE, Adam.

Everything is plain numpy float64 and deterministic under a seed; the same
code backs the comfort autoencoder and the Q-network.  Checkpoints use the
"NN1" byte format: one canonical JSON header line, then all parameters as
little-endian float64, layer by layer, each weight matrix row-major
followed by its bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "Mlp",
    "AdamState",
    "Gradients",
    "init_mlp",
    "forward",
    "backprop",
    "mse_loss",
    "adam_step",
    "save_nn1",
    "load_nn1",
]

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class Mlp:
    """Fully-connected net.  weights[i] has shape (sizes[i], sizes[i+1])."""

    sizes: list[int]
    activations: list[str]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        return Mlp(
            sizes=list(self.sizes),
            activations=list(self.activations),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )


class Gradients(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_mlp(sizes: list[int], activations: list[str], seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases; bit-identical for equal seeds."""
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if len(activations) != len(sizes) - 1:
        raise ValueError(
            f"expected {len(sizes) - 1} activations for {len(sizes)} sizes, "
            f"got {len(activations)}"
        )
    for a in activations:
        if a not in ACTIVATIONS:
            raise ValueError(f"unknown activation {a!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(sizes), list(activations), weights, biases, seed=seed)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Affine + activation composition.  x is (in,) or a batch (n, in)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.sizes[0]:
        raise ValueError(f"input width {a.shape[1]} != net input size {net.sizes[0]}")
    for w, b, kind in zip(net.weights, net.biases, net.activations):
        a = _act(a @ w + b, kind)
    return a[0] if single else a


def _forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list, list]:
    """Returns (output, pre-activations per layer, inputs per layer)."""
    a = np.asarray(x, dtype=float)
    zs, ins = [], []
    for w, b, kind in zip(net.weights, net.biases, net.activations):
        ins.append(a)
        z = a @ w + b
        zs.append(z)
        a = _act(z, kind)
    return a, zs, ins


def backprop(net: Mlp, x: np.ndarray, grad_output: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients of sum(grad_output * output) w.r.t. params.

    For batched x (n, in) the upstream gradient must be (n, out) and the
    returned gradients are summed over the batch, so a loss that averages
    over the batch should fold the 1/n into grad_output.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad_output, dtype=float)
    single = x.ndim == 1
    if single:
        x, g = x[None, :], g[None, :]
    _, zs, ins = _forward_cached(net, x)
    dws = [np.empty(0)] * net.n_layers
    dbs = [np.empty(0)] * net.n_layers
    delta = g
    for i in range(net.n_layers - 1, -1, -1):
        delta = delta * _act_grad(zs[i], net.activations[i])
        dws[i] = ins[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i].T
    return Gradients(dws, dbs)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            step=0,
            m_w=[np.zeros_like(w) for w in net.weights],
            v_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_b=[np.zeros_like(b) for b in net.biases],
        )


def adam_step(net: Mlp, grads: Gradients, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on net and state."""
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for params, gs, ms, vs in (
        (net.weights, grads.weights, state.m_w, state.v_w),
        (net.biases, grads.biases, state.m_b, state.v_b),
    ):
        for p, g, m, v in zip(params, gs, ms, vs):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# --- NN1 checkpoint format -------------------------------------------------


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_nn1(net: Mlp, path, hyperparameters: dict | None = None) -> None:
    header = {
        "format": "NN1",
        "sizes": list(net.sizes),
        "activations": list(net.activations),
        "hyperparameters": hyperparameters or {},
        "seed": net.seed,
    }
    with open(path, "wb") as fh:
        fh.write(_canonical_json(header) + b"\n")
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_nn1(path) -> tuple[Mlp, dict]:
    """Returns (net, hyperparameters).  Raises ValueError on corrupt files."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt NN1 header: {exc}") from exc
    if header.get("format") != "NN1":
        raise ValueError("not an NN1 file")
    sizes = [int(s) for s in header["sizes"]]
    activations = [str(a) for a in header["activations"]]
    n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(payload) != 8 * n_params:
        raise ValueError(
            f"NN1 payload holds {len(payload) // 8} values, header implies {n_params}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    weights, biases, off = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off : off + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        off += fan_in * fan_out
        biases.append(flat[off : off + fan_out].copy())
        off += fan_out
    net = Mlp(sizes, activations, weights, biases, seed=int(header.get("seed", 0)))
    return net, dict(header.get("hyperparameters", {}))
