"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import losses
from .model import ContrastiveHeadConfig, EncoderConfig, ModelConfig, TreeHeadConfig, encode, init_params
from .model import project_contrastive, project_tree
from .rng import stream
from .tree import TreeConfig, level_posteriors

H = 1e-5
REL_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H, coords=None) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x`` (mutated in place and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check(fn: Callable[[Sequence[ad.Tensor]], ad.Tensor], inputs: Sequence[np.ndarray], h: float = H,
          coords_per_input: int | None = None, rng=None) -> float:
    """Max relative error between ``backward`` and finite differences of ``fn(inputs)``."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    ts = [ad.Tensor(a, requires_grad=True) for a in arrays]
    fn(ts).backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]

    def value() -> float:
        with ad.no_grad():
            return fn([ad.Tensor(a) for a in arrays]).item()

    worst = 0.0
    for a, g in zip(arrays, analytic):
        coords = None
        if coords_per_input is not None and a.size > coords_per_input:
            coords = np.sort((rng or np.random.default_rng(0)).choice(a.size, coords_per_input, replace=False))
        num = numeric_grad(value, a, h, coords)
        if coords is None:
            worst = max(worst, relative_error(g, num))
        else:
            worst = max(worst, relative_error(g.reshape(-1)[coords], num.reshape(-1)[coords]))
    return worst


# ----------------------------------------------------------------------
# suite over random small batches


@dataclass
class GradReport:
    name: str
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def random_batch_labels(rng, b: int, n_classes: int = 3) -> np.ndarray:
    """Mixed labels: at least two labelled (same class) and one unlabelled sample."""
    labels = rng.integers(0, n_classes, size=b)
    labels[rng.random(b) < 0.4] = -1
    labels[0] = labels[1] = int(rng.integers(0, n_classes))
    labels[-1] = -1
    return labels


def _tiny_model(d: int, depth: int) -> ModelConfig:
    return ModelConfig(
        EncoderConfig(d, (8, 8), 8, "gelu"),
        ContrastiveHeadConfig(4, 8, 8),
        TreeHeadConfig(6, depth),
    )


def suite(seed: int = 0, n_batches: int = 20, b: int = 6, d: int = 8, depth: int = 2,
          model_coords: int = 60) -> list[GradReport]:
    """Finite-difference check of every loss term and of the full objective.

    Term checks differentiate with respect to the raw head outputs (all
    coordinates); the full objective is checked with respect to a random
    subset of model parameters.
    """
    cfg = TreeConfig(depth)
    w = losses.LossWeights(alpha=0.35, temperature=0.7, warmup_epochs=0)
    worst: dict[str, float] = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for k in range(n_batches):
        rng = stream(seed, "gradcheck", k)
        labels = random_batch_labels(rng, b)
        vl = np.concatenate([labels, labels])
        raw_z = rng.standard_normal((2 * b, d))
        logits = rng.standard_normal((2 * b, cfg.n_internal)) * 1.5
        lab_idx = np.flatnonzero(vl >= 0)

        def branch_of(t):
            return ad.sigmoid(t)

        note("unsup_contrastive", check(lambda t: losses.unsup_contrastive(ad.l2_normalize(t[0]), w.temperature), [raw_z]))
        note("sup_contrastive", check(
            lambda t: losses.sup_contrastive(ad.l2_normalize(ad.take(t[0], lab_idx)), vl[lab_idx], w.temperature), [raw_z]))
        note("contrastive", check(lambda t: losses.contrastive(ad.l2_normalize(t[0]), labels, w)[0], [raw_z]))
        note("hierarchical", check(
            lambda t: losses.hierarchical(level_posteriors(branch_of(t[0]), cfg), labels, cfg), [logits]))
        note("regularizer", check(lambda t: losses.regularizer(branch_of(t[0])), [logits]))

        mcfg = _tiny_model(d, depth)
        params = init_params(mcfg, seed + k)
        names = list(params)
        x = rng.standard_normal((2 * b, d))

        def full(ts):
            p = dict(zip(names, ts))
            h = encode(p, mcfg, x)
            return losses.total(project_contrastive(p, mcfg, h), project_tree(p, mcfg, h), labels, 1, w, cfg).loss

        note("total", check(full, [params[n].data for n in names], coords_per_input=max(1, model_coords // len(names)),
                            rng=stream(seed, "gradcheck-coords", k)))
    return [GradReport(n, e) for n, e in worst.items()]


def engine_suite(seed: int = 0, n_inputs: int = 100) -> list[GradReport]:
    """Finite-difference check of each differentiable primitive on random inputs."""
    rng = stream(seed, "engine-gradcheck")
    # name -> (function of the selected inputs, indices into [a, b, bias, c, sq])
    ops: dict[str, tuple[Callable, tuple[int, ...]]] = {
        "matmul": (lambda t: ad.sum(t[0] @ t[1]), (0, 1)),
        "add_row_bias": (lambda t: ad.sum(ad.exp(ad.scale(t[0] @ t[1], 0.3) + t[2])), (0, 1, 2)),
        "mul": (lambda t: ad.sum(t[0] * t[0] * t[1]), (0, 3)),
        "exp": (lambda t: ad.sum(ad.exp(ad.scale(t[0], 0.5))), (0,)),
        "log": (lambda t: ad.sum(ad.log(ad.exp(t[0]) + 0.1)), (0,)),
        "sqrt": (lambda t: ad.sum(ad.sqrt(ad.exp(t[0]))), (0,)),
        "sigmoid": (lambda t: ad.sum(ad.sigmoid(t[0]) * t[1]), (0, 3)),
        "relu": (lambda t: ad.sum(ad.relu(t[0]) * t[1]), (0, 3)),
        "gelu": (lambda t: ad.sum(ad.gelu(t[0]) * t[1]), (0, 3)),
        "mean_axis": (lambda t: ad.sum(ad.exp(ad.mean(t[0], axis=0))), (0,)),
        "l2_normalize": (lambda t: ad.sum(ad.l2_normalize(t[0]) * t[1]), (0, 3)),
        "take_concat": (lambda t: ad.sum(ad.exp(ad.take(ad.concat([t[0], t[1]], axis=1), [0, 5, 5, 2], axis=1))), (0, 3)),
        "mlp_depth4": (lambda t: ad.sum(ad.gelu(ad.gelu(ad.gelu(ad.gelu(t[0] @ t[1]) @ t[1]) @ t[1]) @ t[1])), (0, 4)),
    }
    worst = dict.fromkeys(ops, 0.0)
    for _ in range(n_inputs):
        pool = [
            rng.standard_normal((3, 4)),
            rng.standard_normal((4, 5)),
            rng.standard_normal(5),
            rng.standard_normal((3, 4)),
            rng.standard_normal((4, 4)) * 0.6,
        ]
        for name, (f, idx) in ops.items():
            worst[name] = max(worst[name], check(f, [pool[i] for i in idx]))
    return [GradReport(n, e) for n, e in worst.items()]
