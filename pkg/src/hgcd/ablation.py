"""Component and tree-depth ablations over a shared dataset and seed."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .data import EmbeddingDataset
from .evaluation import GcdReport, evaluate
from .trainer import TrainConfig, train

# name, uses L^c after warm-up, semi-supervised L^h, unsupervised L^h, warm-up
ABLATION_ROWS = (
    ("1 contrastive only", True, False, False, True),
    ("2 hierarchical only", False, True, True, True),
    ("3 unsup. hierarchical + contrastive", True, False, True, True),
    ("4 no warm-up", True, True, True, False),
    ("5 full", True, True, True, True),
)


def ablation_configs(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """The five component configurations, all sharing ``base``'s seed and schedule.

    Row 1 never activates the tree loss. Row 2 still warms up with the
    contrastive loss but drops it afterwards (gamma = 0).
    """
    out = []
    for name, use_c, semi, unsup, warm in ABLATION_ROWS:
        w = base.weights
        if not (semi or unsup):
            w = replace(w, hier_mode="off")
        else:
            w = replace(w, hier_mode="semi" if semi else "unsup")
        if not use_c:
            w = replace(w, gamma=0.0)
        if not warm:
            w = replace(w, warmup_epochs=0)
        out.append((name, replace(base, weights=w)))
    return out


def depth_configs(base: TrainConfig, depths: Sequence[int] = (2, 3, 4, 5, 6)) -> list[tuple[str, TrainConfig]]:
    """Full method at several tree depths; ``beta`` follows ``2**-T`` unless fixed in ``base``."""
    return [(f"T={t}", replace(base, depth=t)) for t in depths]


@dataclass
class RowResult:
    name: str
    report: GcdReport

    def as_row(self) -> dict:
        r = self.report
        return {"config": self.name, "acc_all": r.acc_all, "acc_known": r.acc_known, "acc_novel": r.acc_novel}


def run_row(ds: EmbeddingDataset, name: str, cfg: TrainConfig, **eval_kw) -> RowResult:
    state = train(ds, cfg)
    report, _ = evaluate(state.params, state.model, ds, seed=cfg.seed, **eval_kw)
    return RowResult(name, report)


def format_table(rows: Sequence[RowResult]) -> str:
    lines = ["| config | all | known | novel |", "|---|---|---|---|"]

    def pct(v):
        return "-" if v is None else f"{100 * v:.1f}"

    for r in rows:
        d = r.as_row()
        lines.append(f"| {d['config']} | {pct(d['acc_all'])} | {pct(d['acc_known'])} | {pct(d['acc_novel'])} |")
    return "\n".join(lines)
