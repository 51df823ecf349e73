"""GCD evaluation: semi-supervised k-means, Hungarian alignment, accuracies."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .rng import stream


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    iterations: int
    converged: bool
    pinned_classes: tuple[int, ...]  # class id held by clusters 0..L-1
    inertia: float = 0.0  # sum of squared distances to assigned centroids
    reseeds: int = 0  # empty clusters moved onto a far unlabelled point


def _kmeanspp(points: np.ndarray, centroids: list[np.ndarray], k: int, rng) -> list[np.ndarray]:
    centroids = list(centroids)
    if not centroids:
        centroids.append(points[rng.integers(len(points))])
    d2 = np.min([((points - c) ** 2).sum(axis=1) for c in centroids], axis=0)
    while len(centroids) < k:
        total = d2.sum()
        if total > 0:
            pick = rng.choice(len(points), p=d2 / total)
        else:
            pick = rng.integers(len(points))
        c = points[pick]
        centroids.append(c)
        d2 = np.minimum(d2, ((points - c) ** 2).sum(axis=1))
    return centroids


def semi_kmeans(
    x,
    labels,
    n_clusters: int,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 300,
    n_init: int = 10,
) -> ClusterResult:
    """k-means where labelled points (``labels >= 0``) stay in their class's cluster.

    Each labelled class ``c`` (in ascending id order) owns cluster ``rank(c)``,
    initialised at the class mean. The remaining centroids are seeded with
    k-means++ over the unlabelled points. An emptied cluster is moved onto the
    unlabelled point farthest from its current centroid.

    With ``n_init > 1`` the k-means++ seeding is repeated from independent
    streams and the run with the lowest inertia is kept (first one on ties).
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    best = None
    for r in range(n_init):
        res = _semi_kmeans_once(x, labels, n_clusters, stream(seed, "kmeans++") if r == 0
                                else stream(seed, "kmeans++", r), tol, max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _semi_kmeans_once(x, labels, n_clusters, rng, tol, max_iter) -> ClusterResult:
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(x)
    if n_clusters > n:
        raise ValueError(f"n_clusters={n_clusters} exceeds the number of points ({n})")
    pinned = tuple(int(c) for c in np.unique(labels[labels >= 0]))
    if n_clusters < len(pinned):
        raise ValueError(f"n_clusters={n_clusters} is smaller than the {len(pinned)} labelled classes")
    rank = {c: k for k, c in enumerate(pinned)}
    fixed = np.array([rank[int(c)] if c >= 0 else -1 for c in labels], dtype=np.int64)
    unl = np.flatnonzero(fixed < 0)

    init = [x[fixed == k].mean(axis=0) for k in range(len(pinned))]
    pool = x[unl] if len(unl) else x
    cent = np.array(_kmeanspp(pool, init, n_clusters, rng), dtype=np.float64).reshape(n_clusters, -1)

    converged = False
    it = 0
    reseeds = 0
    for it in range(1, max_iter + 1):
        assign, d2 = kernels.assign_nearest(x, cent, fixed)
        new, counts = kernels.centroid_update(x, assign, n_clusters)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            taken: set[int] = set()
            order = unl[np.argsort(-d2[unl], kind="stable")]
            for k in empty:
                pick = next((int(i) for i in order if int(i) not in taken and d2[i] > 0), None)
                if pick is None:
                    new[k] = cent[k]
                    continue
                taken.add(pick)
                new[k] = x[pick]
                reseeds += 1
        shift = np.sqrt(((new - cent) ** 2).sum(axis=1)).max()
        cent = new
        if shift < tol:
            converged = True
            break
    assign, d2 = kernels.assign_nearest(x, cent, fixed)
    return ClusterResult(assign, cent, it, converged, pinned, float(d2.sum()), reseeds)


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching; returns ``(col_of_row, total_cost)``.

    A rectangular matrix is padded to square with a constant larger than
    every entry, so padded pairs never displace real ones.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {a.shape}")
    if np.isnan(a).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(a).all():
        raise ValueError("cost matrix contains infinite entries")
    r, c = a.shape
    n = max(r, c)
    if r != c:
        big = (np.abs(a).max() if a.size else 0.0) * 2 + 1
        sq = np.full((n, n), big)
        sq[:r, :c] = a
        a_sq = sq
    else:
        a_sq = a
    assign = kernels.hungarian(a_sq) if n else np.zeros(0, dtype=np.int64)
    keep = [(i, j) for i, j in enumerate(assign) if i < r and j < c]
    total = float(sum(a[i, j] for i, j in keep))
    return assign[:r], total


@dataclass
class GcdReport:
    mapping: dict[int, int]  # cluster id -> class id
    acc_all: float
    acc_known: float | None
    acc_novel: float | None
    confusion: np.ndarray  # classes x clusters, unlabelled samples only
    n_unlabelled: int
    known_classes: tuple[int, ...]
    class_names: list[str]
    iterations: int | None = None

    def to_dict(self) -> dict:
        return {
            "acc_all": self.acc_all,
            "acc_known": self.acc_known,
            "acc_novel": self.acc_novel,
            "mapping": {str(k): v for k, v in sorted(self.mapping.items())},
            "n_unlabelled": self.n_unlabelled,
            "known_classes": list(self.known_classes),
            "iterations": self.iterations,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def score(
    assignments,
    truth,
    known_classes: Sequence[int],
    labelled_mask,
    n_classes: int | None = None,
    n_clusters: int | None = None,
    class_names: Sequence[str] | None = None,
) -> GcdReport:
    """All/known/novel accuracy of cluster assignments on the unlabelled samples.

    A single Hungarian mapping, computed over all unlabelled samples, is used
    for every subset. Clusters left unmatched count as errors.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    unl = ~np.asarray(labelled_mask, dtype=bool)
    if not unl.any():
        raise ValueError("no unlabelled samples to score")
    n_classes = n_classes or int(truth.max()) + 1
    n_clusters = n_clusters or int(assignments.max()) + 1
    y, p = truth[unl], assignments[unl]
    conf = np.zeros((n_classes, n_clusters), dtype=np.int64)
    np.add.at(conf, (y, p), 1)
    # Match on columns in a content-defined order so that tie-breaking between
    # equally good matchings cannot depend on the arbitrary cluster ids.
    order = np.lexsort(conf[::-1])
    col_of_row, _ = hungarian(conf.max() - conf[:, order])
    mapping = {int(order[j]): int(i) for i, j in enumerate(col_of_row) if j < n_clusters}
    pred_class = np.array([mapping.get(int(k), -1) for k in p])
    correct = pred_class == y
    known = np.isin(y, list(known_classes))

    def frac(sel):
        return float(correct[sel].sum() / sel.sum()) if sel.any() else None

    names = list(class_names) if class_names is not None else [f"class_{k}" for k in range(n_classes)]
    return GcdReport(
        mapping=mapping,
        acc_all=float(correct.sum() / len(y)),
        acc_known=frac(known),
        acc_novel=frac(~known),
        confusion=conf,
        n_unlabelled=int(len(y)),
        known_classes=tuple(int(k) for k in known_classes),
        class_names=names,
    )


def _display(report: GcdReport, cls: int) -> str:
    name = report.class_names[cls]
    return name if cls in report.known_classes else name + "*"


def confusion_csv(report: GcdReport, path) -> None:
    """Write the confusion matrix with clusters relabelled by their matched class.

    Novel classes carry a trailing ``*``; unmatched clusters are named
    ``cluster_<id>`` and placed last.
    """
    n_clusters = report.confusion.shape[1]
    matched = sorted((cls, k) for k, cls in report.mapping.items())
    cols = [k for _, k in matched] + [k for k in range(n_clusters) if k not in report.mapping]
    header = ["class"] + [
        _display(report, report.mapping[k]) if k in report.mapping else f"cluster_{k}" for k in cols
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for cls in range(report.confusion.shape[0]):
            w.writerow([_display(report, cls)] + [int(report.confusion[cls, k]) for k in cols])


def embed(params, cfg, x, space: str = "encoder", batch_size: int = 1024) -> np.ndarray:
    """Inference-only features: encoder output (default) or normalized contrastive projection."""
    from .model import encode, project_contrastive

    out = []
    with ad.no_grad():
        for s in range(0, len(x), batch_size):
            h = encode(params, cfg, x[s : s + batch_size])
            if space == "projection":
                h = project_contrastive(params, cfg, h)
            elif space != "encoder":
                raise ValueError(f"unknown embedding space {space!r}")
            out.append(h.data)
    return np.concatenate(out, axis=0)


def evaluate(params, cfg, ds, n_clusters: int | None = None, space: str = "encoder", seed: int = 0,
             tol: float = 1e-6, max_iter: int = 300, n_init: int = 10) -> tuple[GcdReport, ClusterResult]:
    feats = embed(params, cfg, ds.features, space)
    k = n_clusters or ds.n_classes
    res = semi_kmeans(feats, ds.train_labels(), k, seed=seed, tol=tol, max_iter=max_iter, n_init=n_init)
    rep = score(res.assignments, ds.class_ids, ds.known_classes, ds.labelled_mask,
                n_classes=ds.n_classes, n_clusters=k, class_names=ds.class_names)
    rep.iterations = res.iterations
    return rep, res
