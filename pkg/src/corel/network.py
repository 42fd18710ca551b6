"""Feed-forward representation network with hand-written backpropagation.

Every layer is ``affine -> LeakyReLU``; the final hidden activation is the
latent vector ``h``. Weights are stored ``(fan_out, fan_in)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

CHECKPOINT_FORMAT = "corel-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class NetworkState:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float = 0.1
    dropout: float = 0.0

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ContractViolation("need matching, non-empty weight/bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ContractViolation(f"layer {i}: weight {w.shape} bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ContractViolation(f"layer {i} fan-in does not chain")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must lie in [0, 1)")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def latent_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: list[np.ndarray]) -> "NetworkState":
        return NetworkState(list(params[0::2]), list(params[1::2]),
                            self.slope, self.dropout)

    def copy(self) -> "NetworkState":
        return self.with_params([p.copy() for p in self.params()])


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]  # per layer, after the dropout mask
    pre: list[np.ndarray]
    masks: list[np.ndarray | None]
    h: np.ndarray
    training: bool = False


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def glorot_uniform(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init(layer_sizes, slope: float = 0.1, dropout: float = 0.0,
         rng: np.random.Generator | None = None) -> NetworkState:
    """``layer_sizes = [input, hidden..., latent]``."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ContractViolation(f"invalid layer sizes {layer_sizes}")
    if rng is None:
        raise ContractViolation("init requires an explicit rng")
    weights = [glorot_uniform(o, i, rng) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return NetworkState(weights, biases, float(slope), float(dropout))


def leaky_relu(a: np.ndarray, slope: float) -> np.ndarray:
    return np.where(a > 0, a, slope * a)


def forward(state: NetworkState, x: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.sizes[0]:
        raise ContractViolation(
            f"input shape {x.shape} incompatible with fan-in {state.sizes[0]}")
    drop = training and state.dropout > 0
    if drop and rng is None:
        raise ContractViolation("training with dropout needs an rng")
    keep = 1.0 - state.dropout
    inputs, pres, masks = [], [], []
    a = x
    for w, b in zip(state.weights, state.biases):
        if drop:
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        else:
            mask = None
        inputs.append(a)
        masks.append(mask)
        z = a @ w.T + b
        pres.append(z)
        a = leaky_relu(z, state.slope)
    return ForwardTrace(inputs=inputs, pre=pres, masks=masks, h=a, training=training)


def latents(state: NetworkState, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Eval-mode latent batch; deterministic in ``(state, x)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros((0, state.latent_dim))
    return np.concatenate([forward(state, x[i:i + batch_size]).h
                           for i in range(0, x.shape[0], batch_size)])


def backward(state: NetworkState, trace: ForwardTrace, dl_dh: np.ndarray) -> Gradients:
    """Chain rule from ``dL/dh`` back through every layer, replaying the
    dropout masks recorded in ``trace``."""
    if trace is None or not trace.pre:
        raise ContractViolation("backward needs a forward trace")
    dl_dh = np.asarray(dl_dh, dtype=np.float64)
    if dl_dh.shape != trace.pre[-1].shape:
        raise ContractViolation(
            f"dL/dh shape {dl_dh.shape} != latent shape {trace.pre[-1].shape}")
    n_layers = len(state.weights)
    gw: list[np.ndarray] = [None] * n_layers
    gb: list[np.ndarray] = [None] * n_layers
    g = dl_dh
    for i in reversed(range(n_layers)):
        g = g * np.where(trace.pre[i] > 0, 1.0, state.slope)
        gw[i] = g.T @ trace.inputs[i]
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ state.weights[i]
            if trace.masks[i] is not None:
                g = g * trace.masks[i]
    return Gradients(gw, gb)


def checkpoint_text(net: NetworkState, W: np.ndarray, centers: np.ndarray | None = None,
                    meta: dict | None = None) -> str:
    """JSON container; Python float repr makes the round trip bit-exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sizes": net.sizes,
        "slope": net.slope,
        "dropout": net.dropout,
        "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(net.weights, net.biases)],
        "W": np.asarray(W).tolist(),
        "centers": None if centers is None else np.asarray(centers).tolist(),
        "meta": meta or {},
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def save_checkpoint(path: str, net: NetworkState, W: np.ndarray,
                    centers: np.ndarray | None = None, meta: dict | None = None) -> None:
    with open(path, "w") as f:
        f.write(checkpoint_text(net, W, centers, meta))


def load_checkpoint(path: str):
    """Returns ``(net, W, centers, meta)``."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    weights = [np.asarray(layer["weight"], dtype=np.float64) for layer in doc["layers"]]
    biases = [np.asarray(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
    net = NetworkState(weights, biases, doc["slope"], doc["dropout"])
    if net.sizes != doc["sizes"]:
        raise ValueError(f"{path}: layer shapes disagree with recorded sizes")
    W = np.asarray(doc["W"], dtype=np.float64)
    centers = None if doc["centers"] is None else np.asarray(doc["centers"], dtype=np.float64)
    return net, W, centers, doc["meta"]
