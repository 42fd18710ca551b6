"""Adam and the mini-batch training loop with best-validation selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import network
from .data import Dataset
from .errors import ContractViolation
from .losses import CENTER, LossConfig, compute_loss, apply_center_update, predict
from .network import NetworkState, glorot_uniform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamState:
    m: tuple
    v: tuple
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        return cls(m=tuple(np.zeros_like(p) for p in params),
                   v=tuple(np.zeros_like(p) for p in params), **hyper)

    def hyperparams(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Pure: returns ``(new_params, new_state)``
    and leaves its arguments untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractViolation("params, grads and moment buffers differ in length")
    if state.lr <= 0:
        raise ContractViolation("learning rate must be positive")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ContractViolation(f"parameter {i}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {i}; step aborted")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(tuple(new_m), tuple(new_v), t, state.lr, b1, b2, state.eps)


@dataclass
class Model:
    """Representation network plus class matrix ``W`` and running centers."""
    net: NetworkState
    W: np.ndarray
    centers: np.ndarray

    def copy(self) -> "Model":
        return Model(self.net.copy(), self.W.copy(), self.centers.copy())

    def trainable(self) -> list[np.ndarray]:
        return self.net.params() + [self.W]

    def with_trainable(self, params) -> "Model":
        return Model(self.net.with_params(params[:-1]), params[-1], self.centers)


def init_model(layer_sizes, k: int, rng: np.random.Generator, slope: float = 0.1,
               dropout: float = 0.0) -> Model:
    """Glorot-uniform network and ``W``; centers start at zero."""
    net = network.init(layer_sizes, slope, dropout, rng)
    h = net.latent_dim
    return Model(net, glorot_uniform(k, h, rng), np.zeros((k, h)))


def accuracy(model: Model, x: np.ndarray, y: np.ndarray, cfg: LossConfig) -> float:
    if x.shape[0] == 0:
        return float("nan")
    h = network.latents(model.net, x)
    return float(np.mean(predict(h, model.W, cfg.variant, cfg.gamma) == y))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainReport:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    test_accuracy: float | None = None
    diverged: bool = False
    failure: str | None = None
    steps: int = 0
    n_floored: int = 0
    best_model: Model | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "history": [vars(r) for r in self.history],
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "test_accuracy": self.test_accuracy,
            "diverged": self.diverged,
            "failure": self.failure,
            "steps": self.steps,
            "n_floored": self.n_floored,
            "meta": self.meta,
        }


def _finite_model(model: Model) -> bool:
    return all(np.all(np.isfinite(p)) for p in model.trainable() + [model.centers])


def train(dataset: Dataset, model: Model, loss_cfg: LossConfig, epochs: int,
          batch_size: int, lr: float, rng: np.random.Generator,
          meta: dict | None = None) -> TrainReport:
    """Adam on the network and ``W``; centers (center loss only) follow their
    own ``alpha`` update. The parameters of the epoch with the best
    validation accuracy (earliest on ties) are kept in ``best_model`` and
    scored on the test split if there is one."""
    if batch_size < 1 or epochs < 0:
        raise ContractViolation("batch_size must be >= 1 and epochs >= 0")
    if dataset.train.size == 0:
        raise ContractViolation("empty training split")
    x_tr, y_tr = dataset.part("train")
    x_val, y_val = dataset.part("val") if dataset.val.size else dataset.part("train")

    adam = AdamState.zeros_like(model.trainable(), lr=lr)
    report = TrainReport(meta=dict(meta or {}))
    report.meta.setdefault("adam", adam.hyperparams())
    report.meta.setdefault("init", "glorot_uniform; zero biases; zero centers")
    report.meta.setdefault("loss", loss_cfg.to_dict())
    best = model.copy()
    best_val = -math.inf

    for epoch in range(epochs):
        order = rng.permutation(x_tr.shape[0])
        loss_sum, correct, seen = 0.0, 0, 0
        try:
            for start in range(0, order.size, batch_size):
                idx = order[start:start + batch_size]
                xb, yb = x_tr[idx], y_tr[idx]
                trace = network.forward(model.net, xb, training=True, rng=rng)
                with np.errstate(invalid="ignore", over="ignore"):
                    out = compute_loss(loss_cfg, trace.h, yb, model.W, model.centers)
                if not math.isfinite(out.loss):
                    raise FloatingPointError(f"loss became {out.loss}")
                grads = network.backward(model.net, trace, out.grad_h)
                params, adam = adam_step(model.trainable(), grads.flat() + [out.grad_W], adam)
                model = model.with_trainable(params)
                if loss_cfg.variant == CENTER:
                    model.centers = apply_center_update(model.centers, out.center_deltas,
                                                        loss_cfg.alpha)
                if not _finite_model(model):
                    raise FloatingPointError("parameters became non-finite")
                report.steps += 1
                report.n_floored += out.n_floored
                loss_sum += out.loss * idx.size
                correct += int(np.sum(out.predictions == yb))
                seen += idx.size
        except FloatingPointError as exc:
            report.diverged = True
            report.failure = f"epoch {epoch}: {exc}"
            log.warning("training halted: %s", report.failure)
            break

        val_acc = accuracy(model, x_val, y_val, loss_cfg)
        report.history.append(EpochRecord(epoch, loss_sum / seen, correct / seen, val_acc))
        log.debug("epoch %d loss %.5f train %.4f val %.4f",
                  epoch, loss_sum / seen, correct / seen, val_acc)
        if val_acc > best_val:
            best_val = val_acc
            best = model.copy()
            report.best_epoch = epoch
            report.best_val_accuracy = val_acc

    report.best_model = best
    if dataset.test.size:
        report.test_accuracy = accuracy(best, *dataset.part("test"), loss_cfg)
    return report
