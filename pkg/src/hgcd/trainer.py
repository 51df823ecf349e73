"""SGD training loop with warm-up gating, checkpoints and an NDJSON metrics log."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses
from .data import AugmentConfig, EmbeddingDataset, make_batches
from .losses import LossWeights
from .model import (
    ContrastiveHeadConfig,
    EncoderConfig,
    ModelConfig,
    TreeHeadConfig,
    encode,
    init_params,
    parse_checkpoint,
    dump_checkpoint,
    project_contrastive,
    project_tree,
)
from .tree import TreeConfig

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int, step: int, reason: str):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {reason}")
        self.epoch = epoch
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 64
    depth: int = 3
    seed: int = 0
    checkpoint_every: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder_hidden: tuple[int, ...] = (256, 256)
    feature_dim: int = 128
    activation: str = "gelu"
    proj_layers: int = 4
    proj_hidden: int = 128
    proj_dim: int = 64
    tree_hidden: int = 128
    lr_schedule: str = "constant"
    clip_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < self.weights.warmup_epochs and self.weights.hier_mode != "off":
            raise ValueError(f"epochs ({self.epochs}) must be >= warmup_epochs ({self.weights.warmup_epochs})")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        TreeConfig(self.depth)

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            EncoderConfig(input_dim, tuple(self.encoder_hidden), self.feature_dim, self.activation),
            ContrastiveHeadConfig(self.proj_layers, self.proj_hidden, self.proj_dim),
            TreeHeadConfig(self.tree_hidden, self.depth),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["augment"]["scale_range"] = list(self.augment.scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        aug = dict(d["augment"])
        aug["scale_range"] = tuple(aug["scale_range"])
        d["augment"] = AugmentConfig(**aug)
        d["encoder_hidden"] = tuple(d["encoder_hidden"])
        return cls(**d)

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "cosine":
            return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / max(self.epochs, 1)))
        return self.learning_rate


@dataclass
class TrainState:
    config: TrainConfig
    model: ModelConfig
    params: dict[str, ad.Tensor]
    velocity: dict[str, np.ndarray]
    epoch: int = 0  # next epoch to run
    history: list[dict] = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg: TrainConfig, input_dim: int) -> "TrainState":
        mcfg = cfg.model_config(input_dim)
        params = init_params(mcfg, cfg.seed)
        vel = {k: np.zeros_like(p.data) for k, p in params.items()}
        return cls(cfg, mcfg, params, vel)


def sgd_step(params: dict[str, ad.Tensor], velocity: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """Heavy-ball update ``v = m v + g; w -= lr v``. Missing gradients count as zero.

    All gradients are checked before anything is modified.
    """
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise ad.NumericError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    for name, p in params.items():
        v = velocity[name]
        v *= momentum
        v += grads[name]
        p.data -= lr * v


def clip_grad_norm(params: dict[str, ad.Tensor], max_norm: float) -> float:
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    norm = math.sqrt(sq)
    if norm > max_norm:
        f = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= f
    return norm


def forward_losses(state: TrainState, batch, epoch: int) -> losses.LossBreakdown:
    cfg = state.config
    h = encode(state.params, state.model, batch.views())
    z = project_contrastive(state.params, state.model, h)
    branch = project_tree(state.params, state.model, h)
    return losses.total(z, branch, batch.labels, epoch, cfg.weights, cfg.depth)


def train_step(state: TrainState, batch, epoch: int, step: int) -> losses.LossBreakdown:
    cfg = state.config
    ad.zero_grad(state.params.values())
    try:
        bd = forward_losses(state, batch, epoch)
        if not math.isfinite(bd.l_total):
            raise ad.NumericError("non-finite loss")
        bd.loss.backward()
        if cfg.clip_norm:
            clip_grad_norm(state.params, cfg.clip_norm)
        sgd_step(state.params, state.velocity, cfg.lr_at(epoch), cfg.momentum)
    except ad.NumericError as e:
        raise TrainingDiverged(epoch, step, str(e)) from e
    bd.loss = None
    return bd


def train(
    ds: EmbeddingDataset,
    cfg: TrainConfig | None = None,
    state: TrainState | None = None,
    metrics_path=None,
    checkpoint_dir=None,
    until_epoch: int | None = None,
    timing: bool = False,
) -> TrainState:
    """Run (or resume) training up to ``until_epoch`` (default: all epochs).

    Every epoch draws its shuffle and augmentations from streams keyed by
    ``(seed, epoch)``, so a resumed run reproduces an uninterrupted one.
    Each epoch appends one JSON line to ``metrics_path``; ``wall_ms`` is
    only filled in when ``timing`` is set, keeping logs reproducible.
    """
    if state is None:
        state = TrainState.fresh(cfg or TrainConfig(), ds.dim)
    cfg = state.config
    stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    for epoch in range(state.epoch, stop):
        t0 = time.perf_counter()
        sums = dict.fromkeys(losses.LossBreakdown.FIELDS, 0.0)
        batches = make_batches(ds, cfg.batch_size, cfg.seed, epoch, cfg.augment)
        for step, batch in enumerate(batches):
            try:
                bd = train_step(state, batch, epoch, step)
            except TrainingDiverged:
                if ckdir:
                    save_checkpoint(state, ckdir / "last_good.ckpt")
                raise
            for k in sums:
                sums[k] += getattr(bd, k)
        record = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}}
        state.history.append(record)
        state.epoch = epoch + 1
        if metrics_path:
            line = dict(record, wall_ms=round((time.perf_counter() - t0) * 1000, 3) if timing else None)
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(line) + "\n")
        if ckdir and cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(state, ckdir / f"epoch_{state.epoch:04d}.ckpt")
        log.debug("epoch %d %s", epoch, record)
    return state


# ----------------------------------------------------------------------
# checkpoints


def state_to_bytes(state: TrainState) -> bytes:
    tensors = {f"param/{k}": p.data for k, p in state.params.items()}
    tensors.update({f"velocity/{k}": v for k, v in state.velocity.items()})
    meta = {
        "model": state.model.to_dict(),
        "train": state.config.to_dict(),
        "epoch": state.epoch,
        "rng": {"scheme": "philox-counter", "root_seed": state.config.seed, "next_epoch": state.epoch},
        "history": state.history,
    }
    return dump_checkpoint(tensors, meta)


def save_checkpoint(state: TrainState, path) -> None:
    Path(path).write_bytes(state_to_bytes(state))


def load_checkpoint(path) -> TrainState:
    tensors, meta = parse_checkpoint(Path(path).read_bytes())
    mcfg = ModelConfig.from_dict(meta["model"])
    cfg = TrainConfig.from_dict(meta["train"])
    params = {k[6:]: ad.Tensor(v, requires_grad=True) for k, v in tensors.items() if k.startswith("param/")}
    vel = {k[9:]: v.copy() for k, v in tensors.items() if k.startswith("velocity/")}
    return TrainState(cfg, mcfg, params, vel, int(meta["epoch"]), list(meta["history"]))
