"""Driving distributions over the generator class.

Two kinds are supported:

* finite support: explicit maps with positive weights summing to one,
  sampled by inverse CDF;
* noise ball: a base map whose translation part alpha and constant
  polynomial coefficient are perturbed by a uniform draw from the radius-r
  ball in C^2 (rejection from the enclosing 4-cube).  delta and the degree
  stay fixed, so the whole support shares one filtration certificate.

All sampling is addressed through the counter-based words in :mod:`rng`;
the map at position ``index`` of a sequence never depends on how many maps
were drawn before it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from . import rng
from .core import FiltrationParams, HenonMap, Poly, condition_a_radius, inverse_as_plus

_MAX_BALL_ATTEMPTS = 256

# stream-id tags for internal sampling purposes
TAG_SUPPORT = 0x53555050


@dataclass(frozen=True)
class SequenceSeed:
    """Master seed plus stream id addressing one i.i.d. map sequence."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 1 << 64):
                raise ValueError(f"{name} must fit in 64 bits, got {v}")


@dataclass(frozen=True)
class FiniteDist:
    maps: Tuple[HenonMap, ...]
    weights: Tuple[float, ...]

    kind = "finite"

    def __post_init__(self) -> None:
        maps = tuple(self.maps)
        weights = tuple(float(w) for w in self.weights)
        if not maps:
            raise ValueError("finite distribution needs at least one map")
        if len(maps) != len(weights):
            raise ValueError("maps and weights must have equal length")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        total = sum(weights)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")
        weights = tuple(w / total for w in weights)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "weights", weights)
        cum = np.cumsum(np.asarray(weights, dtype=np.float64))
        cum[-1] = 1.0  # guard the last bin against rounding
        object.__setattr__(self, "_cum", cum)


@dataclass(frozen=True)
class BallNoise:
    base: HenonMap
    radius: float

    kind = "ball"

    def __post_init__(self) -> None:
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("radius must be positive and finite")


MapDistribution = Union[FiniteDist, BallNoise]


@dataclass(frozen=True)
class NoiseFamily:
    """One-parameter ball-noise family with radius u*t + (1-t)*v, t in [0,1]."""

    base: HenonMap
    v: float
    u: float

    def __post_init__(self) -> None:
        if not (0 < self.v < self.u):
            raise ValueError("need 0 < v < u")


def family_at(fam: NoiseFamily, t: float) -> BallNoise:
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return BallNoise(base=fam.base, radius=fam.u * t + (1.0 - t) * fam.v)


def _perturbed(base: HenonMap, a: complex, b: complex) -> HenonMap:
    coeffs = base.poly.coeffs[:-1] + (base.poly.coeffs[-1] + b,)
    return HenonMap(alpha=base.alpha + a, delta=base.delta, poly=Poly(coeffs))


def _ball_draw(radius: float, master: int, stream: int, index: int) -> Tuple[complex, complex]:
    r2 = radius * radius
    for attempt in range(_MAX_BALL_ATTEMPTS):
        c = [
            (2.0 * rng.uniform01(master, stream, index, 4 * attempt + k) - 1.0) * radius
            for k in range(4)
        ]
        if c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3] <= r2:
            return complex(c[0], c[1]), complex(c[2], c[3])
    raise RuntimeError("ball rejection failed to terminate")  # pragma: no cover


def sample_map(dist: MapDistribution, seed: SequenceSeed, index: int) -> HenonMap:
    """Map at position ``index`` of the sequence addressed by ``seed``."""
    if isinstance(dist, FiniteDist):
        u = rng.uniform01(seed.master_seed, seed.stream_id, index)
        j = int(np.searchsorted(dist._cum, u, side="right"))  # type: ignore[attr-defined]
        return dist.maps[min(j, len(dist.maps) - 1)]
    a, b = _ball_draw(dist.radius, seed.master_seed, seed.stream_id, index)
    return _perturbed(dist.base, a, b)


def sample_sequence(dist: MapDistribution, seed: SequenceSeed, n: int) -> List[HenonMap]:
    return [sample_map(dist, seed, i) for i in range(n)]


def inverse_distribution(dist: MapDistribution) -> FiniteDist:
    """Distribution of the swap-conjugated inverses; finite support only."""
    if not isinstance(dist, FiniteDist):
        raise ValueError(
            "unsupported kind: noise-ball distributions have no closed-form inverse; "
            "finite support required"
        )
    return FiniteDist(
        maps=tuple(inverse_as_plus(f) for f in dist.maps),
        weights=dist.weights,
    )


def support_sample(dist: MapDistribution, seed: SequenceSeed, k: int = 64) -> List[HenonMap]:
    """Deterministic stand-in for the support: the maps themselves when
    finite, otherwise k ball samples drawn on a dedicated stream."""
    if isinstance(dist, FiniteDist):
        return list(dist.maps)
    stream = rng.derive_stream(seed.stream_id, TAG_SUPPORT)
    sub = SequenceSeed(seed.master_seed, stream)
    return [sample_map(dist, sub, i) for i in range(k)]


def condition_a_params(dist: MapDistribution, rho_margin: float = 1.0) -> FiltrationParams:
    """Filtration certificate covering the whole support.

    For a noise ball the closed form is evaluated on the base map with
    |alpha| and the constant coefficient inflated by the radius, which
    dominates every map in the support.
    """
    if isinstance(dist, FiniteDist):
        return condition_a_radius(dist.maps, rho_margin)
    return condition_a_radius(
        [dist.base], rho_margin, alpha_pad=dist.radius, const_pad=dist.radius
    )


# ---------------------------------------------------------------------------
# vectorised per-step draws for walker kernels

def finite_choices_array(
    dist: FiniteDist, master: int, streams: np.ndarray, index: int
) -> np.ndarray:
    """Per-walker support indices for step ``index``; matches sample_map."""
    u = rng.uniform01_array(master, streams, np.uint64(index))
    cum = dist._cum  # type: ignore[attr-defined]
    j = np.searchsorted(cum, u, side="right")
    return np.minimum(j, len(dist.maps) - 1)


def ball_offsets_array(
    dist: BallNoise, master: int, streams: np.ndarray, index: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-walker (alpha, constant-coefficient) offsets for step ``index``.

    Bitwise identical to looping sample_map over the same streams.
    """
    radius = dist.radius
    n = streams.shape[0]
    a = np.zeros(n, dtype=np.complex128)
    b = np.zeros(n, dtype=np.complex128)
    pending = np.arange(n)
    attempt = np.zeros(n, dtype=np.uint64)
    r2 = radius * radius
    while pending.size:
        s = streams[pending]
        t = attempt[pending] * np.uint64(4)
        c = [
            (2.0 * rng.uniform01_array(master, s, np.uint64(index), t + np.uint64(k)) - 1.0)
            * radius
            for k in range(4)
        ]
        ok = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3] <= r2
        acc = pending[ok]
        a[acc] = c[0][ok] + 1j * c[1][ok]
        b[acc] = c[2][ok] + 1j * c[3][ok]
        rej = pending[~ok]
        attempt[rej] += 1
        pending = rej
    return a, b
