"""Encoder and the two projection heads, plus the binary checkpoint format."""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import stream
from .tree import TreeConfig, clamp_branch

ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu}


@dataclass
class EncoderConfig:
    input_dim: int
    hidden: tuple[int, ...] = (256, 256)
    output_dim: int = 128
    activation: str = "gelu"

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]


@dataclass
class ContrastiveHeadConfig:
    n_layers: int = 4
    hidden: int = 128
    output_dim: int = 64


@dataclass
class TreeHeadConfig:
    hidden: int = 128
    depth: int = 3

    @property
    def output_dim(self) -> int:
        return TreeConfig(self.depth).n_internal


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    contrastive: ContrastiveHeadConfig = field(default_factory=ContrastiveHeadConfig)
    tree: TreeHeadConfig = field(default_factory=TreeHeadConfig)

    def __post_init__(self):
        if self.encoder.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.encoder.activation!r}")
        widths = [*self.encoder.widths, self.contrastive.hidden, self.contrastive.output_dim, self.tree.hidden]
        if min(widths) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.contrastive.n_layers < 1:
            raise ValueError("contrastive head needs at least one layer")

    @classmethod
    def default(cls, input_dim: int, depth: int = 3) -> "ModelConfig":
        return cls(EncoderConfig(input_dim), ContrastiveHeadConfig(), TreeHeadConfig(depth=depth))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        enc = dict(d["encoder"])
        enc["hidden"] = tuple(enc["hidden"])
        return cls(EncoderConfig(**enc), ContrastiveHeadConfig(**d["contrastive"]), TreeHeadConfig(**d["tree"]))

    def layer_shapes(self) -> dict[str, list[tuple[int, int]]]:
        enc = self.encoder.widths
        c = self.contrastive
        phi = [self.encoder.output_dim] + [c.hidden] * (c.n_layers - 1) + [c.output_dim]
        pi = [self.encoder.output_dim, self.tree.hidden, self.tree.output_dim]
        return {
            "enc": list(zip(enc[:-1], enc[1:])),
            "phi": list(zip(phi[:-1], phi[1:])),
            "pi": list(zip(pi[:-1], pi[1:])),
        }

    def n_params(self) -> int:
        return sum(i * o + o for shapes in self.layer_shapes().values() for i, o in shapes)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = stream(seed, "init")
    params: dict[str, Tensor] = {}
    for prefix, shapes in cfg.layer_shapes().items():
        for k, (fan_in, fan_out) in enumerate(shapes):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[f"{prefix}.{k}.w"] = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)
            params[f"{prefix}.{k}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return params


def _mlp(params, prefix: str, n_layers: int, x: Tensor, act) -> Tensor:
    for k in range(n_layers):
        x = x @ params[f"{prefix}.{k}.w"] + params[f"{prefix}.{k}.b"]
        if k < n_layers - 1:
            x = act(x)
    return x


def encode(params, cfg: ModelConfig, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    bad = ~np.isfinite(x.data).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite input at sample index {int(np.argmax(bad))}")
    act = ACTIVATIONS[cfg.encoder.activation]
    return _mlp(params, "enc", len(cfg.encoder.widths) - 1, x, act)


def project_contrastive(params, cfg: ModelConfig, h: Tensor) -> Tensor:
    z = _mlp(params, "phi", cfg.contrastive.n_layers, h, ad.gelu)
    return ad.l2_normalize(z)


def project_tree(params, cfg: ModelConfig, h: Tensor) -> Tensor:
    hidden = ad.relu(h @ params["pi.0.w"] + params["pi.0.b"])
    return clamp_branch(ad.sigmoid(hidden @ params["pi.1.w"] + params["pi.1.b"]))


# ----------------------------------------------------------------------
# checkpoint file: b"HGCD", u32 version, u32 len + UTF-8 JSON metadata,
# u32 tensor count, then per tensor: u32 len + name, u32 ndim, u64 dims,
# little-endian float64 data.

MAGIC = b"HGCD"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def dump_checkpoint(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(_pack_str(json.dumps(meta, sort_keys=True)))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        buf.write(_pack_str(name))
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, file has {len(self.raw)}"
            )
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        return self.take(self.u32(what), what).decode("utf-8")


def parse_checkpoint(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    meta = json.loads(r.string("metadata"))
    tensors = {}
    for _ in range(r.u32("tensor count")):
        name = r.string("tensor name")
        ndim = r.u32(f"{name} ndim")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, f"{name} shape"))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count, f"{name} data"), dtype="<f8")
        tensors[name] = data.reshape(shape).astype(np.float64)
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after last tensor")
    return tensors, meta


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    Path(path).write_bytes(dump_checkpoint(tensors, meta))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return parse_checkpoint(Path(path).read_bytes())
