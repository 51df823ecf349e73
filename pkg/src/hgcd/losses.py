"""Contrastive, hierarchical and balance losses.

View layout used throughout: a batch of ``B`` samples yields ``2B`` views
stacked as ``[x_0 .. x_{B-1}, x'_0 .. x'_{B-1}]``, so the partner of view
``v`` is ``(v + B) % 2B``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tree import TreeConfig, level_posteriors, pairwise_tree_similarity

HIER_MODES = ("semi", "unsup", "off")


class NoLabelledWarning(UserWarning):
    pass


@dataclass
class BatchView:
    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray  # class id, -1 where unlabelled
    labelled: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.labels = np.where(self.labelled, self.labels, -1)

    def __len__(self) -> int:
        return len(self.indices)

    def views(self) -> np.ndarray:
        return np.concatenate([self.x1, self.x2], axis=0)

    def view_labels(self) -> np.ndarray:
        return np.concatenate([self.labels, self.labels])


@dataclass
class LossWeights:
    alpha: float = 0.35
    beta: float | None = None  # None -> 2**-T
    gamma: float = 1.0
    temperature: float = 1.0
    warmup_epochs: int = 50
    hier_mode: str = "semi"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta is not None and self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.hier_mode not in HIER_MODES:
            raise ValueError(f"hier_mode must be one of {HIER_MODES}, got {self.hier_mode!r}")

    def beta_for(self, depth: int) -> float:
        return 2.0**-depth if self.beta is None else float(self.beta)


@dataclass
class LossBreakdown:
    l_unsup: float
    l_sup: float
    l_contrastive: float
    l_hier: float
    l_reg: float
    l_total: float
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    FIELDS = ("l_unsup", "l_sup", "l_contrastive", "l_hier", "l_reg", "l_total")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


def _row_logsumexp(logits: Tensor, mask: np.ndarray) -> Tensor:
    # shift by the detached row max over the masked entries; exact in value and gradient
    masked = np.where(mask, logits.data, -np.inf)
    shift = masked.max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = ad.exp(logits - Tensor(np.broadcast_to(shift[:, None], logits.shape)))
    return ad.log(ad.sum(e * mask.astype(np.float64), axis=1)) + Tensor(shift)


def unsup_contrastive(z: Tensor, temperature: float = 1.0) -> Tensor:
    """SimCLR-style loss averaged over all ``2B`` anchor views."""
    n = z.shape[0]
    if n == 0 or n % 2:
        raise ValueError(f"expected 2B stacked views with B >= 1, got {n} rows")
    b = n // 2
    logits = ad.scale(z @ z.T, 1.0 / temperature)
    denom = ~np.eye(n, dtype=bool)
    pos = np.zeros((n, n))
    v = np.arange(n)
    pos[v, (v + b) % n] = 1.0
    per_anchor = _row_logsumexp(logits, denom) - ad.sum(logits * pos, axis=1)
    return ad.mean(per_anchor)


def sup_contrastive(z: Tensor, labels, temperature: float = 1.0) -> Tensor:
    """Supervised contrastive loss over labelled views.

    Anchors whose class has no other view in the set are skipped; if no
    anchor remains the loss is 0.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        warnings.warn("no labelled samples in batch; supervised loss is 0", NoLabelledWarning, stacklevel=2)
        return Tensor(0.0)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    n_pos = same.sum(axis=1)
    active = n_pos > 0
    if not active.any():
        return Tensor(0.0)
    logits = ad.scale(z @ z.T, 1.0 / temperature)
    pos_w = np.where(same, 1.0 / np.maximum(n_pos, 1)[:, None], 0.0)
    per_anchor = _row_logsumexp(logits, ~np.eye(n, dtype=bool)) - ad.sum(logits * pos_w, axis=1)
    return ad.sum(per_anchor * (active / active.sum()))


def contrastive(z: Tensor, batch_labels, weights: LossWeights) -> tuple[Tensor, Tensor, Tensor]:
    """``(1 - alpha) * L_unsup + alpha * L_sup``; returns ``(l_c, l_u, l_s)``.

    ``batch_labels`` has one entry per sample (``-1`` = unlabelled); views
    are laid out as described in the module docstring.
    """
    labels = np.asarray(batch_labels)
    view_labels = np.concatenate([labels, labels])
    lu = unsup_contrastive(z, weights.temperature)
    lab_idx = np.flatnonzero(view_labels >= 0)
    if len(lab_idx):
        ls = sup_contrastive(ad.take(z, lab_idx, axis=0), view_labels[lab_idx], weights.temperature)
    else:
        warnings.warn("no labelled samples in batch; supervised loss is 0", NoLabelledWarning, stacklevel=2)
        ls = Tensor(0.0)
    lc = ad.scale(lu, 1.0 - weights.alpha) + ad.scale(ls, weights.alpha)
    return lc, lu, ls


def hierarchical_weights(batch_labels, semi: bool = True) -> np.ndarray:
    """Coefficient matrix ``W`` such that the loss is ``sum(S * W) / 2B``.

    Row ``v`` holds ``+1/|N|`` on negatives and ``-1/(|P|+1)`` on the
    positives plus the view's own augmentation. Views of the anchor's own
    sample never appear among its negatives.
    """
    labels = np.asarray(batch_labels)
    b = len(labels)
    n = 2 * b
    vl = np.concatenate([labels, labels])
    sample = np.arange(n) % b
    other = sample[:, None] != sample[None, :]
    if semi:
        anchor_lab = (vl >= 0)[:, None]
        pos = other & anchor_lab & (vl[:, None] == vl[None, :])
    else:
        pos = np.zeros((n, n), dtype=bool)
    neg = other & ~pos
    partner = np.zeros((n, n), dtype=bool)
    v = np.arange(n)
    partner[v, (v + b) % n] = True
    n_neg = neg.sum(axis=1, keepdims=True)
    n_pos = pos.sum(axis=1, keepdims=True)
    w = np.where(neg, 1.0 / np.maximum(n_neg, 1), 0.0)
    w -= np.where(pos | partner, 1.0 / (n_pos + 1), 0.0)
    return w


def hierarchical_from_similarity(sim: Tensor, batch_labels, semi: bool = True) -> Tensor:
    w = hierarchical_weights(batch_labels, semi)
    return ad.scale(ad.sum(sim * w), 1.0 / w.shape[0])


def hierarchical(levels, batch_labels, cfg, semi: bool = True) -> Tensor:
    """Semi-supervised hierarchical clustering loss.

    ``levels`` are the level posteriors of all ``2B`` views. For a labelled
    anchor, negatives are views of differently-labelled or unlabelled
    samples and positives are views of same-labelled samples; an unlabelled
    anchor treats every other sample as negative and only its augmentation
    as positive. With ``semi=False`` every anchor is treated as unlabelled.
    """
    sim = pairwise_tree_similarity(levels, cfg)
    return hierarchical_from_similarity(sim, batch_labels, semi)


def regularizer(branch: Tensor) -> Tensor:
    """Cross-entropy of the batch-mean left probability against [0.5, 0.5], averaged over nodes."""
    pbar = ad.mean(branch, axis=0)
    ce = ad.scale(ad.log(pbar) + ad.log(1.0 - pbar), -0.5)
    return ad.mean(ce)


def is_warmup(epoch: int, weights: LossWeights) -> bool:
    return epoch < weights.warmup_epochs


def total(z: Tensor, branch: Tensor, batch_labels, epoch: int, weights: LossWeights, cfg) -> LossBreakdown:
    """Compose the training objective for one batch.

    During warm-up (and when the hierarchical loss is switched off) the
    objective is the contrastive loss alone; the tree terms are still
    evaluated for logging but kept out of the graph.
    """
    cfg = cfg if isinstance(cfg, TreeConfig) else TreeConfig(int(cfg))
    lc, lu, ls = contrastive(z, batch_labels, weights)
    tree_active = weights.hier_mode != "off" and not is_warmup(epoch, weights)
    semi = weights.hier_mode != "unsup"
    beta = weights.beta_for(cfg.depth)
    if tree_active:
        lh = hierarchical(level_posteriors(branch, cfg), batch_labels, cfg, semi)
        lr = regularizer(branch)
        loss = lh + ad.scale(lr, beta) + ad.scale(lc, weights.gamma)
    else:
        with ad.no_grad():
            lh = hierarchical(level_posteriors(branch.detach(), cfg), batch_labels, cfg, semi)
            lr = regularizer(branch.detach())
        loss = lc
    return LossBreakdown(
        l_unsup=lu.item(),
        l_sup=ls.item(),
        l_contrastive=lc.item(),
        l_hier=lh.item(),
        l_reg=lr.item(),
        l_total=loss.item(),
        loss=loss,
    )

