"""Clustering metrics that are invariant to component relabelling.

Labels are integers in ``1..k``.  Minimisation over relabellings is done by
exhaustive search, which is cheap for the k <= 8 used here.
"""

from itertools import permutations

import numpy as np

MAX_K = 8


def _labels(a, k=None):
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ValueError("labels must be integers")
        a = a.astype(int)
    if k is not None and (a.min(initial=1) < 1 or a.max(initial=1) > k):
        raise ValueError(f"labels must lie in 1..{k}")
    return a


def hard_labels(w):
    """1-based argmax labels of a responsibility matrix."""
    return np.argmax(np.asarray(w), axis=1) + 1


def misclassification(true_labels, est_labels, k):
    """Fewest disagreements over all relabellings of ``est_labels``."""
    if k > MAX_K:
        raise ValueError(f"k={k} exceeds {MAX_K}")
    t = _labels(true_labels, k)
    e = _labels(est_labels, k)
    if t.shape != e.shape:
        raise ValueError("label vectors differ in length")
    counts = np.zeros((k, k), dtype=int)
    np.add.at(counts, (e - 1, t - 1), 1)
    agree = max(sum(counts[i, p[i]] for i in range(k)) for p in permutations(range(k)))
    return int(t.size - agree)


def rand_index(a, b):
    """Fraction of pairs on which the two partitions agree."""
    a, b = _labels(a), _labels(b)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two observations")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(v):
        return int(np.sum(v * (v - 1) // 2))

    total = n * (n - 1) // 2
    both = pairs(table)
    same_a = pairs(table.sum(axis=1))
    same_b = pairs(table.sum(axis=0))
    agree = total + 2 * both - same_a - same_b
    return agree / total


def _check_pair(w_hat, w_true, k=None):
    w_hat = np.asarray(w_hat, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if w_hat.ndim != 2 or w_hat.shape != w_true.shape:
        raise ValueError(f"shape mismatch: {w_hat.shape} vs {w_true.shape}")
    if k is not None and w_hat.shape[1] != k:
        raise ValueError(f"expected {k} columns, got {w_hat.shape[1]}")
    return w_hat, w_true


def posterior_error_k2(w_hat, w_true):
    """Mean absolute error of first-column posteriors, minimised over the swap."""
    w_hat, w_true = _check_pair(w_hat, w_true, 2)
    direct = np.mean(np.abs(w_hat[:, 0] - w_true[:, 0]))
    swapped = np.mean(np.abs(w_hat[:, 1] - w_true[:, 0]))
    return float(min(direct, swapped))


def posterior_error_frobenius(w_hat, w_true, k):
    """``min_P ||w_hat P - w_true||_F`` over k x k permutation matrices."""
    if k > MAX_K:
        raise ValueError(f"k={k} exceeds {MAX_K}")
    w_hat, w_true = _check_pair(w_hat, w_true, k)
    # ||w_hat P - w||^2 = const - 2 <w_hat[:, p_j], w[:, j]>, so only the cross term varies
    cross = w_hat.T @ w_true
    best = max(permutations(range(k)), key=lambda p: sum(cross[p[j], j] for j in range(k)))
    return float(np.linalg.norm(w_hat[:, list(best)] - w_true))
