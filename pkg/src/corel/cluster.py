"""Clusterability of latent spaces: K-means, diagonal GMM and the metrics
used to score them (Hungarian-aligned accuracy, ARI, V-measure,
silhouette)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
COLLAPSE_WEIGHT = 1e-8


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (np.einsum("ij,ij->i", x, x)[:, None] - 2.0 * (x @ c.T)
         + np.einsum("ij,ij->i", c, c)[None, :])
    return np.maximum(d, 0.0)


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    converged: bool
    inertia_history: list[float] = field(default_factory=list)
    n_effective: int = 0
    flags: list[str] = field(default_factory=list)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator):
    """D^2 seeding. Returns the seed centroids and whether fewer than ``k``
    distinct points were available."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = _sq_dists(x, centers[0][None, :])[:, 0]
    short = False
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            short = True
            idx = rng.integers(n)
        else:
            idx = min(int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right")),
                      n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers), short


def kmeans(x, k: int, rng: np.random.Generator, max_iter: int = 300,
           tol: float = 1e-8) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds; stops when no centroid moves by
    more than ``tol`` (Euclidean). An emptied cluster is re-seeded with the
    point farthest from its own centroid."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ContractViolation(f"k={k} must lie in [1, {n}]")
    if max_iter < 1:
        raise ContractViolation("max_iter must be >= 1")
    centroids, short = kmeans_plusplus(x, k, rng)
    flags = ["fewer distinct points than clusters"] if short else []
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        assign = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), assign]
        counts = np.bincount(assign, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_cost))
            if point_cost[far] <= 0.0:
                break
            assign[far] = j
            point_cost[far] = 0.0
            centroids[j] = x[far]
            counts = np.bincount(assign, minlength=k)
            if "empty cluster re-seeded" not in flags:
                flags.append("empty cluster re-seeded")
        history.append(float(point_cost.sum()))
        new = centroids.copy()
        nz = counts > 0
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        new[nz] = sums[nz] / counts[nz, None]
        shift = float(np.sqrt(np.max(np.sum((new - centroids) ** 2, axis=1))))
        centroids = new
        if shift < tol:
            converged = True
            break
    d = _sq_dists(x, centroids)
    assign = np.argmin(d, axis=1)
    inertia = float(d[np.arange(n), assign].sum())
    n_eff = int(np.unique(assign).size)
    if n_eff < k and "fewer effective clusters than k" not in flags:
        flags.append("fewer effective clusters than k")
    return KMeansResult(assign, centroids, inertia, it, converged, history, n_eff, flags)


def kmeans_best(x, k: int, rng: np.random.Generator, n_init: int = 10,
                max_iter: int = 300, tol: float = 1e-8) -> KMeansResult:
    """Best of ``n_init`` seeded restarts by inertia (lowest index on ties)."""
    seeds = rng.integers(0, 2**63 - 1, size=n_init)
    best = None
    for s in seeds:
        res = kmeans(x, k, np.random.Generator(np.random.Philox(int(s))), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


@dataclass
class GMMResult:
    assignments: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray  # diagonal, K x D
    log_likelihood: float  # mean per sample
    n_iter: int
    converged: bool
    ll_history: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def responsibilities(self, x) -> np.ndarray:
        logp = _component_logpdf(np.asarray(x, dtype=np.float64), self.weights,
                                 self.means, self.variances)
        return np.exp(logp - _lse(logp)[:, None])


def _lse(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _component_logpdf(x, weights, means, variances) -> np.ndarray:
    """log(pi_k) + log N(x | mu_k, diag(var_k)), shape N x K."""
    maha = np.empty((x.shape[0], means.shape[0]))
    for j in range(means.shape[0]):
        diff = x - means[j]
        maha[:, j] = (diff * diff) @ (1.0 / variances[j])
    log_det = np.sum(np.log(variances), axis=1)
    d = x.shape[1]
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return logw - 0.5 * (d * np.log(2.0 * np.pi) + log_det + maha)


def _m_step(x, resp):
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, np.finfo(float).tiny)
    means = (resp.T @ x) / safe[:, None]
    var = np.empty_like(means)
    for j in range(means.shape[0]):
        diff = x - means[j]
        var[j] = (resp[:, j] @ (diff * diff)) / safe[j]
    var = np.maximum(var, VAR_FLOOR)
    return nk / x.shape[0], means, var


def gmm_em(x, k: int, rng: np.random.Generator, max_iter: int = 200, tol: float = 1e-6,
           init: KMeansResult | None = None) -> GMMResult:
    """Diagonal-covariance mixture fitted by EM in log space, initialised
    from a K-means partition. Stops when the mean log-likelihood improves by
    less than ``tol``. Variances are floored at ``VAR_FLOOR``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n or (k > 1 and n <= k):
        raise ContractViolation(f"gmm needs N > k (N={n}, k={k})")
    if init is None:
        init = kmeans_best(x, k, rng)
    resp = np.zeros((n, k))
    resp[np.arange(n), init.assignments] = 1.0
    weights, means, var = _m_step(x, resp)
    flags: list[str] = []
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        logp = _component_logpdf(x, weights, means, var)
        norm = _lse(logp)
        history.append(float(norm.mean()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        resp = np.exp(logp - norm[:, None])
        weights, means, var = _m_step(x, resp)
        dead = np.flatnonzero(weights < COLLAPSE_WEIGHT)
        if dead.size:
            if "component collapse re-spread" not in flags:
                flags.append("component collapse re-spread")
            global_var = np.maximum(x.var(axis=0), VAR_FLOOR)
            for j in dead:
                means[j] = x[rng.integers(n)]
                var[j] = global_var
                weights[j] = 1.0 / n
            weights = weights / weights.sum()
    logp = _component_logpdf(x, weights, means, var)
    return GMMResult(np.argmax(logp, axis=1), weights, means, var,
                     float(_lse(logp).mean()), it, converged, history, flags)


# -- metrics -----------------------------------------------------------------

def contingency(pred, labels) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape:
        raise ContractViolation("pred and labels differ in length")
    _, p = np.unique(pred, return_inverse=True)
    _, c = np.unique(labels, return_inverse=True)
    table = np.zeros((p.max(initial=-1) + 1, c.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (p, c), 1)
    return table


def hungarian_align(pred, labels):
    """Maximum-agreement matching of clusters to classes.

    Returns ``(mapping, accuracy)`` where ``mapping`` sends each cluster id
    present in ``pred`` to a class id (or ``None`` if it was matched to a
    padding column)."""
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape:
        raise ContractViolation("pred and labels differ in length")
    if pred.size == 0:
        return {}, float("nan")
    clusters, p = np.unique(pred, return_inverse=True)
    classes, c = np.unique(labels, return_inverse=True)
    size = max(clusters.size, classes.size)
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (p, c), 1)
    rows, cols = linear_sum_assignment(-table)
    matched = int(table[rows, cols].sum())
    mapping = {int(clusters[r]): (int(classes[col]) if col < classes.size else None)
               for r, col in zip(rows, cols) if r < clusters.size}
    return mapping, matched / pred.size


def _comb2(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a * (a - 1.0) / 2.0


def ari_with_flag(pred, labels) -> tuple[float, bool]:
    table = contingency(pred, labels)
    n = table.sum()
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n) if n > 1 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:
        identical = bool(np.count_nonzero(table) == max(table.shape))
        return (1.0 if identical else 0.0), True
    return float((sum_ij - expected) / denom), False


def ari(pred, labels) -> float:
    """Adjusted Rand index from the pair-counting contingency formula."""
    return ari_with_flag(pred, labels)[0]


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def homogeneity_completeness_v(pred, labels) -> tuple[float, float, float]:
    table = contingency(pred, labels).astype(np.float64)  # clusters x classes
    n = table.sum()
    h_class = _entropy(table.sum(axis=0))
    h_clust = _entropy(table.sum(axis=1))
    nz = table > 0
    joint = table[nz] / n
    row = (table.sum(axis=1, keepdims=True) / n * np.ones_like(table))[nz]
    col = (table.sum(axis=0, keepdims=True) / n * np.ones_like(table))[nz]
    h_class_given_clust = float(-(joint * np.log(joint / row)).sum())
    h_clust_given_class = float(-(joint * np.log(joint / col)).sum())
    hom = 1.0 if h_class == 0.0 else 1.0 - h_class_given_clust / h_class
    com = 1.0 if h_clust == 0.0 else 1.0 - h_clust_given_class / h_clust
    v = 0.0 if hom + com == 0.0 else 2.0 * hom * com / (hom + com)
    return hom, com, v


def v_measure(pred, labels) -> float:
    return homogeneity_completeness_v(pred, labels)[2]


def silhouette(x, pred, chunk: int = 2048) -> float:
    """Mean silhouette under Euclidean distance; singleton clusters score 0."""
    x = np.asarray(x, dtype=np.float64)
    pred = np.asarray(pred)
    if x.shape[0] != pred.shape[0]:
        raise ContractViolation("x and pred differ in length")
    _, lab = np.unique(pred, return_inverse=True)
    k = lab.max(initial=-1) + 1
    if k < 2:
        raise ContractViolation("silhouette is undefined for fewer than two clusters")
    n = x.shape[0]
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    sizes = onehot.sum(axis=0)
    sq = np.einsum("ij,ij->i", x, x)
    scores = np.zeros(n)
    for s in range(0, n, chunk):
        xs = x[s:s + chunk]
        d = np.sqrt(np.maximum(sq[s:s + chunk, None] - 2.0 * xs @ x.T + sq[None, :], 0.0))
        rows = np.arange(xs.shape[0])
        d[rows, s + rows] = 0.0
        sums = d @ onehot
        own = lab[s:s + chunk]
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
        mean_other = sums / sizes[None, :]
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        val = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[s:s + chunk] = np.where(own_size > 1, val, 0.0)
    return float(scores.mean())


@dataclass
class ClusterReport:
    algorithm: str
    assignments: np.ndarray
    aligned_accuracy: float
    ari: float
    v_measure: float
    silhouette: float | None
    n_iter: int
    converged: bool
    flags: list[str] = field(default_factory=list)

    def to_dict(self, include_assignments: bool = True) -> dict:
        doc = {
            "algorithm": self.algorithm,
            "aligned_accuracy": self.aligned_accuracy,
            "ari": self.ari,
            "v_measure": self.v_measure,
            "silhouette": self.silhouette,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "flags": list(self.flags),
        }
        if include_assignments:
            doc["assignments"] = [int(a) for a in self.assignments]
        return doc


def score_partition(algorithm: str, x, assignments, labels, n_iter: int,
                    converged: bool, flags=()) -> ClusterReport:
    flags = list(flags)
    _, acc = hungarian_align(assignments, labels)
    ari_value, degenerate = ari_with_flag(assignments, labels)
    if degenerate:
        flags.append("ari denominator zero")
    try:
        sil = silhouette(x, assignments)
    except ContractViolation:
        sil = None
        flags.append("silhouette undefined (single cluster)")
    return ClusterReport(algorithm, np.asarray(assignments), acc, ari_value,
                         v_measure(assignments, labels), sil, n_iter, converged, flags)


def evaluate_latents(latents, labels, k: int, rng: np.random.Generator,
                     normalize: bool = False, n_init: int = 10):
    """K-means (best of ``n_init`` restarts) and a GMM initialised from the
    winning K-means run, both scored against ``labels``."""
    x = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ContractViolation("latents and labels differ in length")
    if normalize:
        x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    km = kmeans_best(x, k, rng, n_init=n_init)
    gm = gmm_em(x, k, rng, init=km)
    return (
        score_partition("kmeans", x, km.assignments, labels, km.n_iter, km.converged, km.flags),
        score_partition("gmm", x, gm.assignments, labels, gm.n_iter, gm.converged, gm.flags),
    )
