"""Similarity functions and the four attractive-repulsive losses.

All fused losses take a latent batch ``h`` (N x H), integer labels and the
class matrix ``W`` (K x H) and return the reduced loss together with exact
gradients for ``h`` and ``W``. The generic weighting is

    loss_i = -lam * attract(h_i, w_{y_i}) + (1 - lam) * repulse(h_i, W)

with CCE kept in its unweighted form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .linalg import logsumexp_rows, softmax_rows

CCE = "cce"
CENTER = "center"
COSINE = "cosine"
GAUSSIAN = "gaussian"
VARIANTS = (CCE, CENTER, COSINE, GAUSSIAN)

_ALIASES = {
    "cce": CCE, "crossentropy": CCE, "center": CENTER, "centerloss": CENTER,
    "cosine": COSINE, "cosinecorel": COSINE, "cos": COSINE,
    "gaussian": GAUSSIAN, "gaussiancorel": GAUSSIAN, "gauss": GAUSSIAN,
}

# Tuned FFNN values for MNIST; used as defaults when no lambda is given.
MNIST_FFNN_LAMBDA = {CENTER: 0.45, COSINE: 0.20, GAUSSIAN: 0.50}


def canonical_variant(name: str) -> str:
    key = str(name).lower().replace("-", "").replace("_", "")
    if key not in _ALIASES:
        raise ConfigurationError(f"unknown loss variant {name!r}; choose from {VARIANTS}")
    return _ALIASES[key]


@dataclass(frozen=True)
class LossConfig:
    variant: str = GAUSSIAN
    lam: float = 0.5
    gamma: float = 0.5
    alpha: float = 0.25
    reduction: str = "mean"
    eps_norm: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.reduction not in ("mean", "sum"):
            raise ConfigurationError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.variant in (COSINE, GAUSSIAN) and not 0.0 < self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.variant == CENTER and self.lam < 0:
            raise ConfigurationError(f"center-loss lambda must be >= 0, got {self.lam}")
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.eps_norm <= 0:
            raise ConfigurationError("eps_norm must be positive")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "lam": self.lam, "gamma": self.gamma,
                "alpha": self.alpha, "reduction": self.reduction,
                "eps_norm": self.eps_norm}


@dataclass
class LossOutput:
    loss: float
    grad_h: np.ndarray
    grad_W: np.ndarray
    predictions: np.ndarray
    center_deltas: np.ndarray | None = None
    n_floored: int = 0  # cosine norms lifted to eps_norm


# -- scalar similarities ----------------------------------------------------

def sim_dot(h, w) -> float:
    h, w = np.asarray(h, dtype=np.float64), np.asarray(w, dtype=np.float64)
    if h.shape != w.shape:
        raise ContractViolation(f"dimension mismatch {h.shape} vs {w.shape}")
    return float(h @ w)


def sim_cos(h, w, eps_norm: float = 1e-12) -> float:
    h, w = np.asarray(h, dtype=np.float64), np.asarray(w, dtype=np.float64)
    if h.shape != w.shape:
        raise ContractViolation(f"dimension mismatch {h.shape} vs {w.shape}")
    denom = max(np.linalg.norm(h), eps_norm) * max(np.linalg.norm(w), eps_norm)
    s = min(1.0, max(-1.0, float(h @ w) / denom))
    assert -1.0 <= s <= 1.0
    return s


def sim_gauss(h, w, gamma: float = 0.5) -> float:
    if gamma <= 0:
        raise ContractViolation("gamma must be positive")
    h, w = np.asarray(h, dtype=np.float64), np.asarray(w, dtype=np.float64)
    if h.shape != w.shape:
        raise ContractViolation(f"dimension mismatch {h.shape} vs {w.shape}")
    d = h - w
    s = -gamma * float(d @ d)
    assert s <= 0.0
    return s


# -- batched similarity matrices ---------------------------------------------

def _check(h, labels, W):
    h = np.asarray(h, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if h.ndim != 2 or W.ndim != 2 or h.shape[1] != W.shape[1]:
        raise ContractViolation(f"latent {h.shape} vs class matrix {W.shape}")
    if labels.shape != (h.shape[0],):
        raise ContractViolation(f"labels shape {labels.shape} != ({h.shape[0]},)")
    if labels.size and (labels.min() < 0 or labels.max() >= W.shape[0]):
        raise ContractViolation("label outside [0, K)")
    return h, labels, W


def _scale(reduction: str, n: int) -> float:
    return 1.0 / n if reduction == "mean" and n else 1.0


def cosine_matrix(h: np.ndarray, W: np.ndarray, eps_norm: float = 1e-12):
    """Cosine similarities plus the floored norms used to compute them."""
    hn_raw = np.linalg.norm(h, axis=1)
    wn_raw = np.linalg.norm(W, axis=1)
    hn = np.maximum(hn_raw, eps_norm)
    wn = np.maximum(wn_raw, eps_norm)
    raw = (h @ W.T) / np.outer(hn, wn)
    S = np.clip(raw, -1.0, 1.0)
    n_floored = int(np.count_nonzero(hn_raw < eps_norm) + np.count_nonzero(wn_raw < eps_norm))
    return S, raw, hn, wn, hn_raw >= eps_norm, wn_raw >= eps_norm, n_floored


def gauss_matrix(h: np.ndarray, W: np.ndarray, gamma: float) -> np.ndarray:
    d2 = (np.einsum("ij,ij->i", h, h)[:, None] - 2.0 * (h @ W.T)
          + np.einsum("ij,ij->i", W, W)[None, :])
    S = -gamma * np.maximum(d2, 0.0)
    assert np.all(S <= 0.0)
    return S


def similarity_matrix(h, W, variant: str, gamma: float = 0.5,
                      eps_norm: float = 1e-12) -> np.ndarray:
    variant = canonical_variant(variant)
    h = np.asarray(h, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if variant in (CCE, CENTER):
        return h @ W.T
    if variant == COSINE:
        return cosine_matrix(h, W, eps_norm)[0]
    return gauss_matrix(h, W, gamma)


def predict(h, W, variant: str, gamma: float = 0.5) -> np.ndarray:
    """Most similar class per row; ties go to the lowest index."""
    return np.argmax(similarity_matrix(h, W, variant, gamma), axis=1)


# -- fused losses ------------------------------------------------------------

def loss_cce(h, labels, W, reduction: str = "mean") -> LossOutput:
    h, labels, W = _check(h, labels, W)
    n = h.shape[0]
    Z = h @ W.T
    per = logsumexp_rows(Z) - Z[np.arange(n), labels]
    c = _scale(reduction, n)
    G = softmax_rows(Z)
    G[np.arange(n), labels] -= 1.0
    G *= c
    return LossOutput(loss=float(per.sum() * c), grad_h=G @ W, grad_W=G.T @ h,
                      predictions=np.argmax(Z, axis=1))


def center_deltas(h, labels, centers) -> np.ndarray:
    """Per-class ``sum_i (mu_k - h_i) / (1 + n_k)`` over the batch members of
    class k; zero for absent classes."""
    h = np.asarray(h, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = centers.shape[0]
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    sums = np.zeros_like(centers)
    np.add.at(sums, labels, h)
    return (counts[:, None] * centers - sums) / (1.0 + counts[:, None])


def apply_center_update(centers, deltas, alpha: float) -> np.ndarray:
    return np.asarray(centers) - alpha * np.asarray(deltas)


def loss_center(h, labels, W, centers, lam: float, alpha: float = 0.25,
                reduction: str = "mean") -> LossOutput:
    """CCE plus ``lam/2 * ||h - mu_y||^2``. The centers are not trained by
    gradient; callers apply ``mu <- mu - alpha * center_deltas``."""
    if lam < 0:
        raise ConfigurationError("center-loss lambda must be >= 0")
    h, labels, W = _check(h, labels, W)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != W.shape:
        raise ContractViolation(f"centers {centers.shape} != W {W.shape}")
    out = loss_cce(h, labels, W, reduction)
    c = _scale(reduction, h.shape[0])
    diff = h - centers[labels]
    out.loss += 0.5 * lam * float(np.einsum("ij,ij->", diff, diff)) * c
    out.grad_h = out.grad_h + lam * c * diff
    out.center_deltas = center_deltas(h, labels, centers)
    return out


def _hardmax_wrong(S: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Wrong class with the largest squared cosine (lowest index on ties)."""
    sq = S * S
    sq[np.arange(S.shape[0]), labels] = -np.inf
    return np.argmax(sq, axis=1)


def loss_cosine_corel(h, labels, W, lam: float, reduction: str = "mean",
                      eps_norm: float = 1e-12) -> LossOutput:
    h, labels, W = _check(h, labels, W)
    if W.shape[0] < 2:
        raise ConfigurationError("cosine repulsion needs at least two classes")
    if not 0.0 < lam <= 1.0:
        raise ConfigurationError(f"lambda must lie in (0, 1], got {lam}")
    n = h.shape[0]
    rows = np.arange(n)
    S, raw, hn, wn, h_live, w_live, n_floored = cosine_matrix(h, W, eps_norm)
    assert np.all(np.abs(S) <= 1.0)
    j = _hardmax_wrong(S, labels)
    s_y, s_j = S[rows, labels], S[rows, j]
    per = -lam * s_y + (1.0 - lam) * s_j * s_j
    c = _scale(reduction, n)

    # dL/dS is non-zero only at the true class and the selected wrong class.
    D = np.zeros_like(S)
    D[rows, labels] = -lam * c
    D[rows, j] += 2.0 * (1.0 - lam) * s_j * c
    Dn = D / np.outer(hn, wn)
    DS = D * raw
    grad_h = Dn @ W - (DS.sum(axis=1) / hn ** 2 * h_live)[:, None] * h
    grad_W = Dn.T @ h - (DS.sum(axis=0) / wn ** 2 * w_live)[:, None] * W
    return LossOutput(loss=float(per.sum() * c), grad_h=grad_h, grad_W=grad_W,
                      predictions=np.argmax(S, axis=1), n_floored=n_floored)


def loss_gaussian_corel(h, labels, W, lam: float, gamma: float = 0.5,
                        reduction: str = "mean") -> LossOutput:
    h, labels, W = _check(h, labels, W)
    if not 0.0 < lam <= 1.0:
        raise ConfigurationError(f"lambda must lie in (0, 1], got {lam}")
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    n = h.shape[0]
    rows = np.arange(n)
    S = gauss_matrix(h, W, gamma)
    per = -lam * S[rows, labels] + (1.0 - lam) * logsumexp_rows(S)
    c = _scale(reduction, n)

    D = (1.0 - lam) * softmax_rows(S)
    D[rows, labels] -= lam
    D *= c
    # dS_ik/dh_i = -2 gamma (h_i - w_k);  dS_ik/dw_k = 2 gamma (h_i - w_k)
    grad_h = -2.0 * gamma * (D.sum(axis=1)[:, None] * h - D @ W)
    grad_W = 2.0 * gamma * (D.T @ h - D.sum(axis=0)[:, None] * W)
    return LossOutput(loss=float(per.sum() * c), grad_h=grad_h, grad_W=grad_W,
                      predictions=np.argmax(S, axis=1))


def compute_loss(cfg: LossConfig, h, labels, W, centers=None) -> LossOutput:
    if cfg.variant == CCE:
        return loss_cce(h, labels, W, cfg.reduction)
    if cfg.variant == CENTER:
        if centers is None:
            raise ContractViolation("center loss needs the running centers")
        return loss_center(h, labels, W, centers, cfg.lam, cfg.alpha, cfg.reduction)
    if cfg.variant == COSINE:
        return loss_cosine_corel(h, labels, W, cfg.lam, cfg.reduction, cfg.eps_norm)
    return loss_gaussian_corel(h, labels, W, cfg.lam, cfg.gamma, cfg.reduction)


# -- term-by-term form, one sample at a time ---------------------------------

def attract_term(variant: str, h, w_y, gamma: float = 0.5) -> float:
    variant = canonical_variant(variant)
    if variant == COSINE:
        return sim_cos(h, w_y)
    if variant == GAUSSIAN:
        return sim_gauss(h, w_y, gamma)
    return sim_dot(h, w_y)


def repulse_term(variant: str, h, W, y: int, gamma: float = 0.5) -> float:
    variant = canonical_variant(variant)
    W = np.asarray(W, dtype=np.float64)
    if variant == COSINE:
        return max(sim_cos(h, W[k]) ** 2 for k in range(W.shape[0]) if k != y)
    if variant == GAUSSIAN:
        sims = [sim_gauss(h, w, gamma) for w in W]
    else:
        sims = [sim_dot(h, w) for w in W]
    top = max(sims)
    return top + math.log(sum(math.exp(s - top) for s in sims))


def ar_loss(variant: str, h, labels, W, lam: float, gamma: float = 0.5,
            reduction: str = "mean") -> float:
    """Generic attractive-repulsive loss evaluated sample by sample."""
    h = np.asarray(h, dtype=np.float64)
    total = 0.0
    for hi, yi in zip(h, labels):
        total += (-lam * attract_term(variant, hi, W[yi], gamma)
                  + (1.0 - lam) * repulse_term(variant, hi, W, int(yi), gamma))
    return total * _scale(reduction, h.shape[0])


def cosine_softmax_ceiling(k: int) -> float:
    """Largest probability a softmax over cosine similarities can assign:
    one class at +1 and the other ``k - 1`` at -1."""
    if k < 2:
        raise ContractViolation("ceiling needs k >= 2")
    e2 = math.exp(2.0)
    return e2 / (e2 + k - 1)
