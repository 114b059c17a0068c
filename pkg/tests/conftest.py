"""Shared fixture maps and distributions."""

from __future__ import annotations

import pytest

from henonlab.core import HenonMap, Poly, condition_a_radius
from henonlab.dist import BallNoise, FiniteDist, SequenceSeed

# volume preserving quadratic, the worked reference for filtration radii
QUAD = HenonMap(0.0, 1.0, Poly((1.0, 0.0, 0.0)))

# strongly dissipative quadratic with an attracting fixed point at the origin
QUAD_A = HenonMap(0.0, 0.1, Poly((1.0, 0.0, 0.0)))

# dissipative quadratic with an attracting period-2 cycle
QUAD_C = HenonMap(0.0, 0.1, Poly((1.0, -1.3, 0.0)))

# mildly dissipative quadratic, fixed point multiplier 0.9 in modulus
QUAD_W = HenonMap(0.0, 0.81, Poly((1.0, 0.0, 0.0)))

CUBIC = HenonMap(1j, 2.0, Poly((1.0, 0.0, 0.0, 0.0)))


@pytest.fixture(scope="session")
def quad_params():
    return condition_a_radius([QUAD])


@pytest.fixture(scope="session")
def quad_c_params():
    return condition_a_radius([QUAD_C])


@pytest.fixture(scope="session")
def mixed_dist():
    other = HenonMap(0.1, 0.5, Poly((1.0, -1.0, 0.0, 0.0)))
    return FiniteDist((QUAD, other), (0.5, 0.5))


@pytest.fixture(scope="session")
def noisy_cycle_dist():
    # frozen perturbations of QUAD_C, all inside its basin regime
    maps = (
        QUAD_C,
        HenonMap(0.004, 0.1, Poly((1.0, -1.3, 0.003))),
        HenonMap(-0.002, 0.1, Poly((1.0, -1.3, -0.005))),
        HenonMap(0.001, 0.1, Poly((1.0, -1.3, 0.002))),
    )
    return FiniteDist(maps, (0.4, 0.2, 0.2, 0.2))


@pytest.fixture(scope="session")
def ball_cycle_dist():
    return BallNoise(QUAD_C, 0.05)


@pytest.fixture
def seed():
    return SequenceSeed(0x5EED_0001, 3)
