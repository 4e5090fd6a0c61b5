"""Synthetic ranked-list data with a known oracle reward.

Each condition (a stand-in for a prompt) has its own data distribution and
its own target point; the oracle reward of a sample is the negative squared
distance to that target. Lists are ranked by the oracle reward, optionally
corrupted by random adjacent swaps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _default_centers():
    return ((0.0, 0.0), (0.0, 0.0))


def _default_targets():
    return ((1.0, 1.0), (-1.0, 1.0))


@dataclass(frozen=True)
class SyntheticTask:
    dim: int = 2
    centers: tuple[tuple[float, ...], ...] = field(default_factory=_default_centers)
    targets: tuple[tuple[float, ...], ...] = field(default_factory=_default_targets)
    data_std: float = 1.0
    list_size: int = 4
    n_train: int = 5000
    n_heldout: int = 1000
    n_pretrain: int = 4000
    corruption: float = 0.0

    def __post_init__(self):
        if not 2 <= self.list_size <= 8:
            raise ValueError("list_size must lie in [2, 8]")
        if len(self.centers) != len(self.targets) or not self.centers:
            raise ValueError("need one center and one target per condition")
        for v in (*self.centers, *self.targets):
            if len(v) != self.dim:
                raise ValueError("center/target dimension mismatch")
        if not 0.0 <= self.corruption <= 1.0:
            raise ValueError("corruption must lie in [0, 1]")

    @property
    def n_conditions(self) -> int:
        return len(self.centers)

    def oracle_reward(self, x, cond) -> np.ndarray:
        mu = np.asarray(self.targets, dtype=np.float64)[np.asarray(cond)]
        return -np.sum((np.asarray(x, dtype=np.float64) - mu) ** 2, axis=-1)


@dataclass(frozen=True)
class ListSet:
    """``x[g, j]`` is the j-th ranked point of group g (j = 0 is preferred)."""

    x: np.ndarray
    cond: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class SyntheticDataset:
    train: ListSet
    heldout: ListSet
    pretrain_x: np.ndarray
    pretrain_cond: np.ndarray


def _sample_points(task: SyntheticTask, cond: np.ndarray, shape, rng) -> np.ndarray:
    centers = np.asarray(task.centers, dtype=np.float64)
    noise = rng.standard_normal((*shape, task.dim)) * task.data_std
    return centers[cond].reshape(cond.shape + (1,) * (len(shape) - cond.ndim) + (task.dim,)) + noise


def _make_lists(task: SyntheticTask, n: int, rng) -> ListSet:
    m = task.list_size
    cond = rng.integers(0, task.n_conditions, size=n)
    x = _sample_points(task, cond, (n, m), rng)
    r = task.oracle_reward(x, cond[:, None])
    order = np.argsort(-r, axis=1, kind="stable")
    x = np.take_along_axis(x, order[:, :, None], axis=1)
    if task.corruption > 0:
        u = rng.random((n, m - 1))
        for g in range(n):
            for i in range(m - 1):
                if u[g, i] < task.corruption:
                    x[g, [i, i + 1]] = x[g, [i + 1, i]]
    return ListSet(x, cond)


def generate_synthetic_preferences(task: SyntheticTask, seed: int) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    train = _make_lists(task, task.n_train, rng)
    heldout = _make_lists(task, task.n_heldout, rng)
    pcond = rng.integers(0, task.n_conditions, size=task.n_pretrain)
    px = _sample_points(task, pcond, (task.n_pretrain,), rng)
    return SyntheticDataset(train, heldout, px, pcond)


def pairs_only(ls: ListSet) -> ListSet:
    """Decompose lists into their adjacent pairs (each a list of size 2)."""
    m = ls.x.shape[1]
    xs = np.stack([ls.x[:, i:i + 2] for i in range(m - 1)], axis=1).reshape(-1, 2, ls.x.shape[2])
    return ListSet(xs, np.repeat(ls.cond, m - 1))
