"""Deterministic RNG substreams.

One 64-bit experiment seed is expanded into named, independent streams
(init / batching / update / dynamics / evaluation / ...) through a
counter-based bit generator keyed by a path of labels.  Because a stream
is a pure function of ``(seed, *path)``, two calls with the same path
yield identical draws; this is also how common random numbers are
implemented (re-derive the same path twice).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def _path_token(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"substream path parts must be int or str, got {type(part)!r}")


def substream(seed: int, *path) -> np.random.Generator:
    """Return the generator for the stream addressed by ``(seed, *path)``.

    Streams with different paths are statistically independent; adding new
    paths (e.g. extra evaluation streams) never perturbs draws taken from
    existing ones.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF,) + tuple(_path_token(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
