"""Clustering rate under the best label permutation, and trial summaries."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

MAX_CLUSTERS = 8


@dataclass
class TrialResult:
    method: str
    dataset: str
    trial: int
    seed: int
    rate: float
    affinity_ms: float = 0.0
    spectral_ms: float = 0.0
    total_ms: float = 0.0
    sigma: float = None
    error: str = ""


@dataclass
class Summary:
    method: str
    dataset: str
    mean: float
    std: float
    count: int
    sigma: float = None
    mean_total_ms: float = field(default=0.0, repr=False)


def clustering_rate(pred, truth):
    """Fraction of points correctly labeled after the best relabeling of ``pred``.

    Brute force over all permutations of the predicted label set, so at most
    ``MAX_CLUSTERS`` distinct predicted labels are accepted.
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    if pred.size == 0:
        raise ValueError("empty labelings")
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    if max(len(p_vals), len(t_vals)) > MAX_CLUSTERS:
        raise ValueError(f"at most {MAX_CLUSTERS} clusters are supported")
    size = max(len(p_vals), len(t_vals))
    counts = np.zeros((size, size), dtype=int)
    np.add.at(counts, (p_idx, t_idx), 1)
    rows = np.arange(size)
    best = max(counts[rows, list(perm)].sum() for perm in permutations(range(size)))
    return float(best / pred.size)


def summarize(trials):
    """Mean and population std of the rate per (method, dataset, sigma), errors skipped."""
    groups = defaultdict(list)
    for t in trials:
        if t.error:
            continue
        groups[(t.method, t.dataset, t.sigma)].append(t)
    out = []
    for (method, dataset, sigma), rows in groups.items():
        rates = np.array([t.rate for t in rows])
        out.append(Summary(method, dataset, float(rates.mean()), float(rates.std()), len(rows),
                           sigma, float(np.mean([t.total_ms for t in rows]))))
    return out
