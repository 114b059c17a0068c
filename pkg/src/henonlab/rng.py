"""Deterministic counter-based random words.

Every draw is a pure function of (master_seed, stream_id, index, word),
all 64-bit, pushed through a splitmix-style avalanche chain.  There is no
mutable generator state, so parallel workers can evaluate any cell of the
(stream, index) table in any order and always obtain the same bits.  This
is what makes multi-threaded runs bit-identical to single-threaded ones.

Scalar helpers operate on Python ints; the ``*_array`` variants accept
numpy uint64 arrays and vectorise the same mixing chain (numpy unsigned
arithmetic wraps mod 2^64, matching the masked scalar path).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2^-53, so uniforms use the top 53 bits of a word
_U53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """Finalizer of splitmix64; a bijection on 64-bit words."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def word64(master_seed: int, stream_id: int, index: int, word: int = 0) -> int:
    """The 64-bit word at cell (master_seed, stream_id, index, word)."""
    h = mix64(master_seed ^ _GAMMA)
    h = mix64(h ^ (stream_id & MASK64))
    h = mix64(h ^ (index & MASK64))
    h = mix64(h ^ (word & MASK64))
    return h


def uniform01(master_seed: int, stream_id: int, index: int, word: int = 0) -> float:
    """Uniform double in [0, 1) from the addressed word."""
    return (word64(master_seed, stream_id, index, word) >> 11) * _U53


def derive_stream(*parts: int) -> int:
    """Fold integer tags into a stream id.

    Pure function of its arguments; used to hand each grid point, replicate
    or worker its own independent stream without coordination.
    """
    h = _GAMMA
    for p in parts:
        h = mix64(h ^ (int(p) & MASK64))
    return h


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def word64_array(master_seed: int, stream_ids, index, word=0) -> np.ndarray:
    """Vectorised :func:`word64`; any of stream_ids/index/word may be arrays."""
    streams = np.asarray(stream_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h0 = np.uint64(mix64(master_seed ^ _GAMMA))
        h = _mix64_np(h0 ^ streams)
        h = _mix64_np(h ^ np.asarray(index, dtype=np.uint64))
        h = _mix64_np(h ^ np.asarray(word, dtype=np.uint64))
    return h


def uniform01_array(master_seed: int, stream_ids, index, word=0) -> np.ndarray:
    w = word64_array(master_seed, stream_ids, index, word)
    return (w >> np.uint64(11)).astype(np.float64) * _U53
