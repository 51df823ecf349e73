"""Soft binary decision tree routing.

Branch probabilities are stored heap-ordered: internal node ``i`` at depth
``t`` lives at flat index ``2**t - 1 + i`` and holds the probability of
taking the *left* branch. Everything here works on a single sample (1-D
input) or a batch (rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BRANCH_EPS = 1e-7
MAX_DEPTH = 10


class TreeConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TreeConfig:
    depth: int = 3

    def __post_init__(self):
        if not isinstance(self.depth, (int, np.integer)) or not 1 <= self.depth <= MAX_DEPTH:
            raise TreeConfigError(f"tree depth must be an integer in [1, {MAX_DEPTH}], got {self.depth!r}")

    @property
    def n_internal(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth


def _cfg(cfg) -> TreeConfig:
    return cfg if isinstance(cfg, TreeConfig) else TreeConfig(int(cfg))


def node_index(level: int, i: int) -> int:
    return 2**level - 1 + i


def clamp_branch(probs) -> Tensor:
    return ad.clip(probs, BRANCH_EPS, 1.0 - BRANCH_EPS)


def _perm(width: int) -> np.ndarray:
    # concat([left, right]) -> interleaved children [l0, r0, l1, r1, ...]
    return np.stack([np.arange(width), np.arange(width) + width], axis=1).ravel()


def level_posteriors(branch, cfg) -> list[Tensor]:
    """Distributions over the nodes of each level, ``P_0 .. P_T``.

    ``P_{t+1}[2i] = P_t[i] * b`` and ``P_{t+1}[2i+1] = P_t[i] * (1 - b)`` with
    ``b`` the left probability of node ``i`` at depth ``t``.
    """
    cfg = _cfg(cfg)
    branch = branch if isinstance(branch, Tensor) else Tensor(branch)
    single = branch.ndim == 1
    if single:
        branch = ad.reshape(branch, (1, -1))
    if branch.ndim != 2 or branch.shape[1] != cfg.n_internal:
        raise TreeConfigError(
            f"expected {cfg.n_internal} branch probabilities for depth {cfg.depth}, got shape {branch.shape}"
        )
    n = branch.shape[0]
    level = Tensor(np.ones((n, 1)))
    levels = [level]
    for t in range(cfg.depth):
        width = 2**t
        cols = np.arange(width) + node_index(t, 0)
        b = ad.take(branch, cols, axis=1)
        left = level * b
        right = level * (1.0 - b)
        level = ad.take(ad.concat([left, right], axis=1), _perm(width), axis=1)
        levels.append(level)
    if single:
        levels = [ad.reshape(p, (p.shape[1],)) for p in levels]
    return levels


def level_similarity(p, q) -> Tensor:
    """Bhattacharyya coefficient ``sum_i sqrt(p_i q_i)`` (row-wise for matrices)."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    q = q if isinstance(q, Tensor) else Tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return ad.sum(ad.sqrt(p) * ad.sqrt(q), axis=-1 if p.ndim == 2 else None)


def tree_similarity(a: Sequence[Tensor], b: Sequence[Tensor], cfg) -> Tensor:
    """Sum of level similarities over depths ``1..T``.

    The root level is constant (``P_0 = [1]``) and skipped; the leaf level is
    included so that every internal node influences the result.
    """
    cfg = _cfg(cfg)
    if len(a) != cfg.depth + 1 or len(b) != cfg.depth + 1:
        raise TreeConfigError(
            f"posteriors for depth {len(a) - 1} and {len(b) - 1} do not match config depth {cfg.depth}"
        )
    total = level_similarity(a[1], b[1])
    for t in range(2, cfg.depth + 1):
        total = total + level_similarity(a[t], b[t])
    return total


def pairwise_tree_similarity(levels: Sequence[Tensor], cfg) -> Tensor:
    """``S[i, j] = tree_similarity(sample i, sample j)`` for a batch of posteriors."""
    cfg = _cfg(cfg)
    if len(levels) != cfg.depth + 1:
        raise TreeConfigError(f"got {len(levels) - 1} levels for config depth {cfg.depth}")
    total = None
    for p in levels[1:]:
        r = ad.sqrt(p)
        s = r @ r.T
        total = s if total is None else total + s
    return total


def leaf_assignment(levels) -> np.ndarray | int:
    """Hard leaf index: argmax of the last level, lowest index on ties."""
    last = levels[-1]
    data = last.data if isinstance(last, Tensor) else np.asarray(last, dtype=np.float64)
    idx = np.argmax(data, axis=-1)
    return int(idx) if data.ndim == 1 else idx
