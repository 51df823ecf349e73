"""Command-line entry point: ``hgcd {synth,train,eval,ablate,gradcheck}``.

Settings come from an INI-style file (``--config``) with ``--key value``
overrides; the fully resolved configuration is written to the output
directory before any work starts.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import autodiff as ad
from .ablation import ablation_configs, depth_configs, format_table, run_row
from .data import (
    AugmentConfig,
    DataError,
    SynthConfig,
    gcd_split,
    load_dataset,
    load_split,
    make_synthetic_hierarchy,
    save_dataset,
    save_split,
)
from .evaluation import confusion_csv, evaluate
from .gradcheck import engine_suite, suite
from .losses import LossWeights
from .model import CheckpointError
from .rng import root_seed
from .trainer import TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train

log = logging.getLogger("hgcd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "", "out": "", "data": "", "split": "", "checkpoint": "", "resume": "",
            "depth_sweep": "false", "depths": "2,3,4,5,6", "timing": "false"},
    "synth": {"classes": "7", "known": "4", "depth": "auto", "dim": "32", "per_class": "200",
              "within_sigma": str(SynthConfig.within_sigma), "level_offset_scale": str(SynthConfig.level_offset_scale),
              "labelled_fraction": "0.5", "format": "csv"},
    "train": {"learning_rate": "0.01", "momentum": "0.9", "epochs": "200", "batch_size": "64",
              "warmup_epochs": "50", "alpha": "0.35", "beta": "auto", "gamma": "1.0", "temperature": "1.0",
              "depth": "3", "hier_mode": "semi", "checkpoint_every": "0", "lr_schedule": "constant",
              "clip_norm": "none", "encoder_hidden": "256,256", "feature_dim": "128", "activation": "gelu",
              "proj_layers": "4", "proj_hidden": "128", "proj_dim": "64", "tree_hidden": "128"},
    "augment": {"gaussian_sigma": "0.1", "scale_lo": "0.9", "scale_hi": "1.1", "shift_sigma": "0.05",
                "dropout_prob": "0.1"},
    "eval": {"clusters": "auto", "space": "encoder", "tol": "1e-6", "max_iter": "300"},
}


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# configuration


def _key_index(prefer: str) -> dict[str, str]:
    # bare keys present in several sections resolve to ``prefer`` first
    idx: dict[str, str] = {}
    for sec in [prefer, *DEFAULTS]:
        for k in DEFAULTS.get(sec, {}):
            idx.setdefault(k, sec)
    return idx


def resolve_config(path: str | None, overrides: list[str], prefer: str = "train") -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = configparser.ConfigParser(interpolation=None)
                user.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise UsageError(f"cannot read config {path}: {e}") from None
        for sec in user.sections():
            if sec not in DEFAULTS:
                raise UsageError(f"unknown config section [{sec}]")
            for k, v in user[sec].items():
                if k not in DEFAULTS[sec]:
                    raise UsageError(f"unknown config key {sec}.{k}")
                cp[sec][k] = v
    idx = _key_index(prefer)
    i = 0
    while i < len(overrides):
        tok = overrides[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        elif i + 1 < len(overrides) and not overrides[i + 1].startswith("--"):
            val = overrides[i + 1]
            i += 2
        else:
            val = "true"
            i += 1
        if "." in key:
            sec, key = key.split(".", 1)
        else:
            sec = idx.get(key)
        if sec not in DEFAULTS or key not in DEFAULTS[sec]:
            raise UsageError(f"unknown option --{key}")
        cp[sec][key] = val
    if not cp["run"]["seed"]:
        cp["run"]["seed"] = str(root_seed())
    return cp


def config_text(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _get(cp, sec, key, conv=str):
    raw = cp[sec][key]
    try:
        if conv is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return conv(raw)
    except ValueError:
        raise UsageError(f"invalid value for {sec}.{key}: {raw!r}") from None


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def train_config(cp) -> TrainConfig:
    t = cp["train"]
    beta = None if t["beta"].strip().lower() == "auto" else _get(cp, "train", "beta", float)
    clip = None if t["clip_norm"].strip().lower() in ("none", "") else _get(cp, "train", "clip_norm", float)
    try:
        weights = LossWeights(
            alpha=_get(cp, "train", "alpha", float),
            beta=beta,
            gamma=_get(cp, "train", "gamma", float),
            temperature=_get(cp, "train", "temperature", float),
            warmup_epochs=_get(cp, "train", "warmup_epochs", int),
            hier_mode=t["hier_mode"],
        )
        aug = AugmentConfig(
            gaussian_sigma=_get(cp, "augment", "gaussian_sigma", float),
            scale_range=(_get(cp, "augment", "scale_lo", float), _get(cp, "augment", "scale_hi", float)),
            shift_sigma=_get(cp, "augment", "shift_sigma", float),
            dropout_prob=_get(cp, "augment", "dropout_prob", float),
        )
        return TrainConfig(
            learning_rate=_get(cp, "train", "learning_rate", float),
            momentum=_get(cp, "train", "momentum", float),
            epochs=_get(cp, "train", "epochs", int),
            batch_size=_get(cp, "train", "batch_size", int),
            depth=_get(cp, "train", "depth", int),
            seed=_get(cp, "run", "seed", int),
            checkpoint_every=_get(cp, "train", "checkpoint_every", int),
            weights=weights,
            augment=aug,
            encoder_hidden=_get(cp, "train", "encoder_hidden", _ints),
            feature_dim=_get(cp, "train", "feature_dim", int),
            activation=t["activation"],
            proj_layers=_get(cp, "train", "proj_layers", int),
            proj_hidden=_get(cp, "train", "proj_hidden", int),
            proj_dim=_get(cp, "train", "proj_dim", int),
            tree_hidden=_get(cp, "train", "tree_hidden", int),
            lr_schedule=t["lr_schedule"],
            clip_norm=clip,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _eval_kwargs(cp, n_classes: int) -> dict:
    k = cp["eval"]["clusters"].strip().lower()
    return {
        "n_clusters": n_classes if k in ("auto", "") else _get(cp, "eval", "clusters", int),
        "space": cp["eval"]["space"],
        "tol": _get(cp, "eval", "tol", float),
        "max_iter": _get(cp, "eval", "max_iter", int),
    }


def _require(cp, key: str) -> str:
    v = cp["run"][key]
    if not v:
        raise UsageError(f"--{key} is required")
    return v


def _outdir(cp) -> Path:
    out = Path(_require(cp, "out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from None
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cp, inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": int(cp["run"]["seed"]),
        "config": {sec: dict(cp[sec]) for sec in cp.sections()},
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": {p.name: _sha256(p) for p in outputs if p.exists()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _load_data(cp):
    data = Path(_require(cp, "data"))
    split = Path(_require(cp, "split"))
    for p in (data, split):
        if not p.exists():
            raise DataError(f"{p}: no such file")
    return load_split(load_dataset(data), split), [data, split]


# ----------------------------------------------------------------------
# commands


def cmd_synth(cp) -> int:
    out = _outdir(cp)
    (out / "config.ini").write_text(config_text(cp))
    seed = int(cp["run"]["seed"])
    classes = _get(cp, "synth", "classes", int)
    known = _get(cp, "synth", "known", int)
    if not 0 < known < classes:
        raise UsageError(f"--known must lie in [1, {classes - 1}], got {known}")
    if cp["synth"]["depth"].strip().lower() == "auto":
        depth = max(3, (classes - 1).bit_length())  # smallest tree (>= 3 levels) with a leaf per class
    else:
        depth = _get(cp, "synth", "depth", int)
    scfg = SynthConfig(
        depth=depth,
        num_classes=classes,
        dim=_get(cp, "synth", "dim", int),
        samples_per_class=_get(cp, "synth", "per_class", int),
        within_sigma=_get(cp, "synth", "within_sigma", float),
        level_offset_scale=_get(cp, "synth", "level_offset_scale", float),
        seed=seed,
    )
    frac = _get(cp, "synth", "labelled_fraction", float)
    try:
        ds = gcd_split(make_synthetic_hierarchy(scfg), range(known), frac, seed)
    except DataError as e:
        raise UsageError(str(e)) from None
    fmt = cp["synth"]["format"]
    if fmt not in ("csv", "bin"):
        raise UsageError(f"--format must be csv or bin, got {fmt!r}")
    data_path = out / f"dataset.{fmt}"
    split_path = out / "split.json"
    save_dataset(ds, data_path, fmt)
    save_split(ds, split_path, frac, seed)
    write_manifest(out, "synth", cp, [], [data_path, split_path])
    print(f"wrote {data_path}: {len(ds)} samples, d={ds.dim}, {ds.n_classes} classes "
          f"(known {list(ds.known_classes)}, novel {list(ds.novel_classes)}), "
          f"{int(ds.labelled_mask.sum())} labelled")
    return EXIT_OK


def cmd_train(cp) -> int:
    ds, inputs = _load_data(cp)
    cfg = train_config(cp)
    out = _outdir(cp)
    (out / "config.ini").write_text(config_text(cp))
    metrics = out / "metrics.ndjson"
    state = None
    if cp["run"]["resume"]:
        state = load_checkpoint(cp["run"]["resume"])
        inputs.append(Path(cp["run"]["resume"]))
        # a resumed run may extend the schedule but must otherwise match the checkpoint
        if replace(state.config, epochs=cfg.epochs) != cfg:
            raise UsageError("resolved configuration differs from the resumed checkpoint (only epochs may change)")
        state.config = cfg
    else:
        metrics.write_text("")
    state = train(ds, cfg, state=state, metrics_path=metrics, checkpoint_dir=out,
                  timing=_get(cp, "run", "timing", bool))
    final = out / "final.ckpt"
    save_checkpoint(state, final)
    outputs = [final, metrics] + sorted(out.glob("epoch_*.ckpt"))
    write_manifest(out, "train", cp, inputs, outputs)
    last = state.history[-1] if state.history else {}
    print(f"trained {state.epoch} epochs; final l_total={last.get('l_total', float('nan')):.6f}; wrote {final}")
    return EXIT_OK


def cmd_eval(cp) -> int:
    ds, inputs = _load_data(cp)
    ck = Path(_require(cp, "checkpoint"))
    state = load_checkpoint(ck)
    out = _outdir(cp)
    (out / "config.ini").write_text(config_text(cp))
    report, _ = evaluate(state.params, state.model, ds, seed=int(cp["run"]["seed"]),
                         **_eval_kwargs(cp, ds.n_classes))
    rj, cc = out / "report.json", out / "confusion.csv"
    report.save_json(rj)
    confusion_csv(report, cc)
    write_manifest(out, "eval", cp, inputs + [ck], [rj, cc])
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"acc_all={fmt(report.acc_all)} acc_known={fmt(report.acc_known)} acc_novel={fmt(report.acc_novel)}")
    return EXIT_OK


def cmd_ablate(cp) -> int:
    ds, inputs = _load_data(cp)
    base = train_config(cp)
    out = _outdir(cp)
    (out / "config.ini").write_text(config_text(cp))
    ev = _eval_kwargs(cp, ds.n_classes)
    rows = []
    configs = ablation_configs(base)
    if _get(cp, "run", "depth_sweep", bool):
        configs += depth_configs(base, _get(cp, "run", "depths", _ints))
    for name, cfg in configs:
        r = run_row(ds, name, cfg, **ev)
        rows.append(r)
        print(f"{name}: all={r.report.acc_all:.4f}", flush=True)
    table = format_table(rows)
    (out / "ablation.md").write_text(table + "\n")
    aj = out / "ablation.json"
    aj.write_text(json.dumps([r.as_row() for r in rows], indent=1) + "\n")
    write_manifest(out, "ablate", cp, inputs, [out / "ablation.md", aj])
    print(table)
    return EXIT_OK


def cmd_gradcheck(cp) -> int:
    seed = int(cp["run"]["seed"])
    reports = engine_suite(seed) + suite(seed)
    for r in reports:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:<20} max_rel_err={r.max_rel_error:.3e}")
    return EXIT_OK if all(r.ok for r in reports) else EXIT_NUMERIC


COMMANDS = {
    "synth": (cmd_synth, "write a synthetic hierarchical dataset and split"),
    "train": (cmd_train, "train encoder and heads; writes checkpoints and metrics"),
    "eval": (cmd_eval, "cluster and score a checkpoint; writes report and confusion matrix"),
    "ablate": (cmd_ablate, "run the component ablation (and optional depth sweep)"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of all gradients"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hgcd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_ + ". Any config key may be overridden with --key value.")
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cp = resolve_config(args.config, rest, prefer="synth" if args.command == "synth" else "train")
        return fn(cp)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, ad.NumericError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
