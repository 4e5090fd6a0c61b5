"""Plackett-Luce ranking likelihood and its Bradley-Terry special case.

Scores are ordered by rank position: ``scores[0]`` belongs to the most
preferred item. The log-likelihood of that ordering is

    sum_j  s_j - logsumexp(s_j, ..., s_m)

i.e. a softmax over every suffix of the list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_BRUTE_FORCE_LEN = 8


class DomainError(ValueError):
    """Raised for scores that are empty or not finite."""


@dataclass(frozen=True)
class PlResult:
    log_prob: float
    stage_terms: np.ndarray
    gradient: np.ndarray


def _as_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DomainError("scores must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(s)):
        raise DomainError("scores must be finite")
    return s


def suffix_logsumexp(s: np.ndarray) -> np.ndarray:
    """``out[j] = log(sum(exp(s[j:])))``, computed right to left."""
    return np.logaddexp.accumulate(s[::-1])[::-1]


def pl_log_prob(scores) -> PlResult:
    """Log-probability of the given order under Plackett-Luce, with gradient.

    The gradient is ``d log_prob / d s_k = 1 - sum_{j<=k} softmax_j(s)_k``
    where ``softmax_j`` is the softmax over the suffix starting at ``j``.
    """
    s = _as_scores(scores)
    lse = suffix_logsumexp(s)
    stages = s - lse
    # probs[j, k] = exp(s_k - lse_j) for k >= j; exponent is <= 0 there
    expo = s[None, :] - lse[:, None]
    probs = np.where(np.triu(np.ones((s.size, s.size), dtype=bool)), np.exp(np.minimum(expo, 0.0)), 0.0)
    grad = 1.0 - probs.sum(axis=0)
    return PlResult(log_prob=float(stages.sum()), stage_terms=stages, gradient=grad)


def bt_log_prob(r_win: float, r_lose: float) -> float:
    """``log sigmoid(r_win - r_lose)``."""
    if not (math.isfinite(r_win) and math.isfinite(r_lose)):
        raise DomainError("rewards must be finite")
    return -float(np.logaddexp(0.0, -(r_win - r_lose)))


def pl_brute_force_prob(scores, ranking) -> float:
    """Probability of ``ranking`` (a permutation of item indices) by direct
    stagewise products. Only meant as a test oracle for small lists."""
    s = _as_scores(scores)
    m = s.size
    if m > MAX_BRUTE_FORCE_LEN:
        raise DomainError(f"brute force limited to m <= {MAX_BRUTE_FORCE_LEN}, got {m}")
    order = list(ranking)
    if sorted(order) != list(range(m)):
        raise DomainError("ranking must be a permutation of range(m)")
    w = [math.exp(float(v) - float(s.max())) for v in s]
    prob = 1.0
    for j in range(m):
        prob *= w[order[j]] / sum(w[k] for k in order[j:])
    return prob


def pl_permutation_total(scores) -> float:
    """Sum of brute-force probabilities over all ``m!`` orderings."""
    s = _as_scores(scores)
    return math.fsum(pl_brute_force_prob(s, p) for p in itertools.permutations(range(s.size)))
