"""Counter-based random streams derived from one root seed.

Each subsystem asks for ``stream(root, "name", *counters)``; the name is
hashed to a stable integer and folded into the Philox key together with the
counters, so adding draws in one subsystem never shifts another.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

DEFAULT_SEED = 0


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream(root_seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def root_seed(explicit: int | None = None) -> int:
    """Explicit seed if given, else ``HGCD_SEED`` from the environment, else 0."""
    if explicit is not None:
        return int(explicit)
    env = os.environ.get("HGCD_SEED")
    return int(env) if env not in (None, "") else DEFAULT_SEED
