"""Embedding datasets: file formats, GCD splits, augmentation, batching and
synthetic hierarchical data."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .losses import BatchView
from .rng import stream


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class EmbeddingDataset:
    features: np.ndarray
    class_ids: np.ndarray
    class_names: list[str]
    known_classes: tuple[int, ...] = ()
    labelled_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"features must be N x d, got shape {self.features.shape}")
        n, c = len(self.features), len(self.class_names)
        if self.class_ids.shape != (n,):
            raise DataError(f"{len(self.class_ids)} class ids for {n} samples")
        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= c):
            raise DataError(f"class ids must lie in [0, {c}), got range [{self.class_ids.min()}, {self.class_ids.max()}]")
        counts = np.bincount(self.class_ids, minlength=c)
        if (counts == 0).any():
            raise DataError(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
        self.known_classes = tuple(sorted(int(k) for k in self.known_classes))
        if self.labelled_mask is None:
            self.labelled_mask = np.zeros(n, dtype=bool)
        self.labelled_mask = np.asarray(self.labelled_mask, dtype=bool)
        if self.labelled_mask.shape != (n,):
            raise DataError("labelled mask length does not match sample count")
        stray = self.labelled_mask & ~np.isin(self.class_ids, self.known_classes)
        if stray.any():
            raise DataError(f"sample {int(np.argmax(stray))} is labelled but its class is not known")
        self._std = None

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def novel_classes(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.n_classes) if c not in self.known_classes)

    @property
    def feature_std(self) -> np.ndarray:
        """Per-feature standard deviation, computed once and reused for augmentation scaling."""
        if self._std is None:
            self._std = self.features.std(axis=0)
        return self._std

    def train_labels(self) -> np.ndarray:
        """Class ids visible to training: -1 for unlabelled samples."""
        return np.where(self.labelled_mask, self.class_ids, -1)


# ----------------------------------------------------------------------
# file formats

CSV_HEADER_KEYS = ("dim", "classes")
BIN_MAGIC = b"HGCE"
BIN_VERSION = 1


def save_csv(ds: EmbeddingDataset, path) -> None:
    lines = [f"dim={ds.dim},classes={ds.n_classes}"]
    for cid, row in zip(ds.class_ids, ds.features):
        lines.append(",".join([str(int(cid)), *map(repr, row.tolist())]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_csv(path: Path) -> EmbeddingDataset:
    text = path.read_text(encoding="utf-8").splitlines()
    if not text:
        raise DataError(f"{path}: empty file")
    header = {}
    for part in text[0].split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise DataError(f"{path}:1: malformed header {text[0]!r}, expected 'dim=<d>,classes=<C>'")
        header[key.strip()] = val.strip()
    try:
        d, c = int(header["dim"]), int(header["classes"])
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}:1: malformed header {text[0]!r}: {e}") from None
    ids, rows = [], []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != d + 1:
            raise DataError(f"{path}:{lineno}: expected {d + 1} fields (class id + {d} features), got {len(fields)}")
        try:
            cid = int(fields[0])
            vals = [float(v) for v in fields[1:]]
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        if not 0 <= cid < c:
            raise DataError(f"{path}:{lineno}: class id {cid} out of range [0, {c})")
        ids.append(cid)
        rows.append(vals)
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return EmbeddingDataset(feats, np.array(ids, dtype=np.int64), [f"class_{k}" for k in range(c)])


def save_binary(ds: EmbeddingDataset, path) -> None:
    n, d = ds.features.shape
    parts = [BIN_MAGIC, struct.pack("<IQII", BIN_VERSION, n, d, ds.n_classes)]
    for name in ds.class_names:
        b = name.encode("utf-8")
        parts.append(struct.pack("<I", len(b)) + b)
    rec = np.zeros(n, dtype=np.dtype([("cid", "<u4"), ("x", "<f8", (d,))]))
    rec["cid"] = ds.class_ids
    rec["x"] = ds.features
    parts.append(rec.tobytes())
    Path(path).write_bytes(b"".join(parts))


def _load_binary(path: Path) -> EmbeddingDataset:
    raw = path.read_bytes()
    pos = 0

    def take(k: int, what: str) -> bytes:
        nonlocal pos
        if pos + k > len(raw):
            raise DataError(f"{path}: truncated at byte {pos} while reading {what}")
        out = raw[pos : pos + k]
        pos += k
        return out

    if take(4, "magic") != BIN_MAGIC:
        raise DataError(f"{path}: bad magic at byte 0")
    version, n, d, c = struct.unpack("<IQII", take(20, "header"))
    if version != BIN_VERSION:
        raise DataError(f"{path}: unsupported version {version} at byte 4")
    names = []
    for k in range(c):
        (ln,) = struct.unpack("<I", take(4, f"class name {k} length"))
        names.append(take(ln, f"class name {k}").decode("utf-8"))
    rec_size = 4 + 8 * d
    body = len(raw) - pos
    if body != n * rec_size:
        actual = body / rec_size
        raise DataError(
            f"{path}: header declares {n} rows but {actual:g} rows of {rec_size} bytes follow (offset {pos})"
        )
    rec = np.frombuffer(raw, dtype=np.dtype([("cid", "<u4"), ("x", "<f8", (d,))]), count=n, offset=pos)
    ids = rec["cid"].astype(np.int64)
    if n and ids.max() >= c:
        bad = int(np.argmax(ids >= c))
        raise DataError(f"{path}: class id {ids[bad]} out of range [0, {c}) at byte {pos + bad * rec_size}")
    return EmbeddingDataset(rec["x"].astype(np.float64).reshape(n, d), ids, names)


def load_dataset(path) -> EmbeddingDataset:
    """Read a dataset in either format, chosen by the leading magic bytes."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    return _load_binary(path) if head == BIN_MAGIC else _load_csv(path)


def save_dataset(ds: EmbeddingDataset, path, fmt: str | None = None) -> None:
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "bin")
    (save_csv if fmt == "csv" else save_binary)(ds, path)


# ----------------------------------------------------------------------
# GCD split


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def gcd_split(ds: EmbeddingDataset, known_classes: Sequence[int], labelled_fraction: float, seed: int) -> EmbeddingDataset:
    """Mark ``round(fraction * n_c)`` samples of every known class as labelled."""
    known = sorted({int(k) for k in known_classes})
    if not known:
        raise DataError("known_classes must be non-empty")
    unknown = [k for k in known if not 0 <= k < ds.n_classes]
    if unknown:
        raise DataError(f"unknown class ids {unknown} (dataset has {ds.n_classes} classes)")
    if len(known) == ds.n_classes:
        raise DataError("every class is known; there are no novel classes to discover")
    if not 0.0 < labelled_fraction <= 1.0:
        raise DataError(f"labelled_fraction must lie in (0, 1], got {labelled_fraction}")
    mask = np.zeros(len(ds), dtype=bool)
    for c in known:
        members = np.flatnonzero(ds.class_ids == c)
        k = _round_half_up(labelled_fraction * len(members))
        chosen = stream(seed, "split", c).permutation(members)[:k]
        mask[chosen] = True
    return replace(ds, known_classes=tuple(known), labelled_mask=mask)


def split_to_dict(ds: EmbeddingDataset, labelled_fraction: float, seed: int) -> dict:
    return {
        "known_classes": list(ds.known_classes),
        "labelled_fraction": labelled_fraction,
        "seed": seed,
        "labelled_indices": np.flatnonzero(ds.labelled_mask).tolist(),
    }


def save_split(ds: EmbeddingDataset, path, labelled_fraction: float, seed: int) -> None:
    Path(path).write_text(json.dumps(split_to_dict(ds, labelled_fraction, seed), indent=1) + "\n")


def apply_split(ds: EmbeddingDataset, split: dict) -> EmbeddingDataset:
    try:
        known = [int(k) for k in split["known_classes"]]
        idx = np.asarray(split["labelled_indices"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed split: {e}") from None
    if len(idx) and (idx.min() < 0 or idx.max() >= len(ds)):
        raise DataError(f"labelled index out of range for {len(ds)} samples")
    mask = np.zeros(len(ds), dtype=bool)
    mask[idx] = True
    return replace(ds, known_classes=tuple(known), labelled_mask=mask)


def load_split(ds: EmbeddingDataset, path) -> EmbeddingDataset:
    try:
        split = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return apply_split(ds, split)


# ----------------------------------------------------------------------
# augmentation and batching


@dataclass(frozen=True)
class AugmentConfig:
    """Noise and shift sigmas are in units of the per-feature std when one is supplied."""

    gaussian_sigma: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    shift_sigma: float = 0.05
    dropout_prob: float = 0.1

    def __post_init__(self):
        lo, hi = self.scale_range
        if lo > hi:
            raise ValueError(f"scale_range lower bound {lo} exceeds upper bound {hi}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")
        if self.gaussian_sigma < 0 or self.shift_sigma < 0:
            raise ValueError("sigmas must be non-negative")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, (1.0, 1.0), 0.0, 0.0)


def augment(x, cfg: AugmentConfig, rng: np.random.Generator, feature_std=None) -> np.ndarray:
    """Noise, global scale, shift, then feature dropout, applied per row."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    b, d = x2.shape
    unit = np.ones(d) if feature_std is None else np.asarray(feature_std, dtype=np.float64)
    noise = rng.standard_normal((b, d)) * (cfg.gaussian_sigma * unit)
    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1], size=(b, 1))
    shift = rng.standard_normal((b, d)) * (cfg.shift_sigma * unit)
    keep = rng.random((b, d)) >= cfg.dropout_prob
    out = ((x2 + noise) * scale + shift) * keep
    return out[0] if single else out


def make_batches(
    ds: EmbeddingDataset,
    batch_size: int,
    seed: int,
    epoch: int,
    aug: AugmentConfig | None = None,
) -> list[BatchView]:
    """Shuffle, partition and augment one epoch; a trailing batch of one sample is dropped."""
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2 for contrastive losses, got {batch_size}")
    aug = aug or AugmentConfig()
    order = stream(seed, "shuffle", epoch).permutation(len(ds))
    rng = stream(seed, "augment", epoch)
    labels = ds.train_labels()
    std = ds.feature_std
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if len(idx) < 2:
            break
        x = ds.features[idx]
        x1 = augment(x, aug, rng, std)
        x2 = augment(x, aug, rng, std)
        batches.append(BatchView(x1, x2, labels[idx], ds.labelled_mask[idx], idx))
    return batches


# ----------------------------------------------------------------------
# synthetic hierarchical data


@dataclass(frozen=True)
class SynthConfig:
    depth: int = 3
    num_classes: int = 7
    dim: int = 32
    samples_per_class: int = 200
    within_sigma: float = 0.4
    level_offset_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes > 2**self.depth:
            raise DataError(f"{self.num_classes} classes do not fit in the {2 ** self.depth} leaves of a depth-{self.depth} tree")
        if self.num_classes < 2 or self.samples_per_class < 1 or self.dim < 1:
            raise DataError("need >= 2 classes, >= 1 sample per class and dim >= 1")


def make_synthetic_hierarchy(cfg: SynthConfig) -> EmbeddingDataset:
    """Gaussian classes whose means follow a random binary tree.

    Every tree node below the root carries an offset drawn with standard
    deviation ``level_offset_scale * 2**-level``; a class mean is the sum of
    offsets along its root-to-leaf path, so siblings sit closer together
    than cousins.
    """
    rng = stream(cfg.seed, "synth")
    d = cfg.dim
    offsets = {}
    for level in range(1, cfg.depth + 1):
        sd = cfg.level_offset_scale * 2.0**-level
        offsets[level] = rng.standard_normal((2**level, d)) * sd
    leaves = np.sort(rng.choice(2**cfg.depth, size=cfg.num_classes, replace=False))
    leaves = leaves[rng.permutation(cfg.num_classes)]
    means = np.zeros((cfg.num_classes, d))
    for c, leaf in enumerate(leaves):
        for level in range(1, cfg.depth + 1):
            means[c] += offsets[level][leaf >> (cfg.depth - level)]
    noise = rng.standard_normal((cfg.num_classes, cfg.samples_per_class, d)) * cfg.within_sigma
    feats = (means[:, None, :] + noise).reshape(-1, d)
    ids = np.repeat(np.arange(cfg.num_classes), cfg.samples_per_class)
    meta = {
        "leaf_of_class": [int(v) for v in leaves],
        "depth": cfg.depth,
        "class_means": means.tolist(),
    }
    return EmbeddingDataset(feats, ids, [f"class_{k}" for k in range(cfg.num_classes)], meta=meta)
