"""Dense float64 helpers, seeded generators and PCA.

Matrices are plain 2-D ``numpy.ndarray`` values of dtype float64. The
functions here add the shape contracts the rest of the package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; identical ``(seed, stream)`` gives
    an identical draw sequence on every platform."""
    if seed < 0:
        raise ContractViolation(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: {a.shape} x {b.shape} not conformable")
    return a @ b


def add(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    _same_shape(a, b, "add")
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    _same_shape(a, b, "sub")
    return a - b


def hadamard(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    _same_shape(a, b, "hadamard")
    return a * b


def scale(a, c: float) -> np.ndarray:
    return as_matrix(a) * float(c)


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def row_sum(a) -> np.ndarray:
    return as_matrix(a).sum(axis=1)


def row_max(a) -> np.ndarray:
    return as_matrix(a).max(axis=1)


def row_argmax(a) -> np.ndarray:
    """Index of the row maximum; ties resolve to the lowest column."""
    return np.argmax(as_matrix(a), axis=1)


def row_sq_norm(a) -> np.ndarray:
    a = as_matrix(a)
    return np.einsum("ij,ij->i", a, a)


def logsumexp_rows(a) -> np.ndarray:
    """Row-wise ``log(sum(exp(a)))`` in the max-shifted form."""
    a = as_matrix(a)
    shift = a.max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return np.log(np.exp(a - shift).sum(axis=1)) + shift[:, 0]


def softmax_rows(a) -> np.ndarray:
    a = as_matrix(a)
    z = np.exp(a - a.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PCAResult:
    projection: np.ndarray  # N x n_kept
    components: np.ndarray  # n_kept x D, rows are unit eigenvectors
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    degenerate: bool  # fewer than the requested components were available

    def reconstruct(self, projection: np.ndarray | None = None) -> np.ndarray:
        p = self.projection if projection is None else np.asarray(projection)
        return p @ self.components + self.mean


def pca_project(x, n_components: int, rank_tol: float = 1e-12) -> PCAResult:
    """Project mean-centred rows of ``x`` onto the leading covariance
    eigenvectors.

    Each component is sign-flipped so that its largest-magnitude loading is
    positive. Components whose eigenvalue is numerically zero are dropped and
    the result is flagged ``degenerate``.
    """
    x = as_matrix(x, "x")
    n, d = x.shape
    if n < 2:
        raise ContractViolation("pca_project needs at least 2 rows")
    if not 1 <= n_components <= min(n, d):
        raise ContractViolation(
            f"n_components={n_components} outside [1, {min(n, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    total = float(evals.sum())
    cutoff = rank_tol * max(total, np.finfo(float).tiny)
    kept = int(min(n_components, np.count_nonzero(evals > cutoff)))
    comps = evecs[:, :kept].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    var = evals[:kept]
    ratio = var / total if total > 0 else np.zeros_like(var)
    return PCAResult(
        projection=xc @ comps.T,
        components=comps,
        mean=mean,
        explained_variance=var,
        explained_variance_ratio=ratio,
        degenerate=kept < n_components,
    )
