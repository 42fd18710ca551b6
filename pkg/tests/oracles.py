"""Brute-force reference implementations shared by the clustering tests."""

import itertools

import numpy as np


def brute_align(pred, labels):
    clusters = np.unique(pred)
    classes = np.unique(labels)
    size = max(clusters.size, classes.size)
    table = np.zeros((size, size), dtype=int)
    for p, c in zip(pred, labels):
        table[np.searchsorted(clusters, p), np.searchsorted(classes, c)] += 1
    best = max(sum(table[i, perm[i]] for i in range(size))
               for perm in itertools.permutations(range(size)))
    return best / len(pred)


def pair_ari(pred, labels):
    n = len(pred)
    a = b = c = d = 0
    for i, j in itertools.combinations(range(n), 2):
        sp, sl = pred[i] == pred[j], labels[i] == labels[j]
        a += sp and sl
        b += sp and not sl
        c += sl and not sp
        d += not sp and not sl
    pairs = a + b + c + d
    expected = (a + b) * (a + c) / pairs
    max_index = 0.5 * ((a + b) + (a + c))
    return (a - expected) / (max_index - expected)


def brute_silhouette(x, pred):
    n = len(pred)
    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if pred[j] == pred[i] and j != i]
        if not same:
            continue
        a = sum(np.linalg.norm(x[i] - x[j]) for j in same) / len(same)
        b = min(
            sum(np.linalg.norm(x[i] - x[j]) for j in range(n) if pred[j] == c)
            / sum(1 for j in range(n) if pred[j] == c)
            for c in set(pred) if c != pred[i])
        total += (b - a) / max(a, b)
    return total / n


def entropy(counts):
    counts = np.asarray([c for c in counts if c > 0], dtype=float)
    p = counts / counts.sum()
    return -sum(pi * np.log(pi) for pi in p)


def partitions(n, k):
    """All assignments of n points into exactly k non-empty labelled blocks."""
    for a in itertools.product(range(k), repeat=n):
        if len(set(a)) == k:
            yield np.array(a)


def wcss(x, assign):
    return sum(((x[assign == j] - x[assign == j].mean(0)) ** 2).sum()
               for j in np.unique(assign))
