from __future__ import annotations

import numpy as np
import pytest

from conftest import QUAD, QUAD_C
from henonlab.core import HenonMap, Poly
from henonlab.dist import (
    BallNoise,
    FiniteDist,
    NoiseFamily,
    SequenceSeed,
    ball_offsets_array,
    condition_a_params,
    family_at,
    finite_choices_array,
    inverse_distribution,
    sample_map,
    sample_sequence,
    support_sample,
)


def test_finite_dist_validation():
    with pytest.raises(ValueError):
        FiniteDist((QUAD,), (0.5,))  # weights do not sum to 1
    with pytest.raises(ValueError):
        FiniteDist((QUAD, QUAD_C), (1.0, -0.0))
    d = FiniteDist((QUAD, QUAD_C), (0.25, 0.75))
    assert abs(sum(d.weights) - 1.0) < 1e-12


def test_sequence_prefix_stability():
    d = FiniteDist((QUAD, QUAD_C), (0.5, 0.5))
    s = SequenceSeed(42, 0)
    short = sample_sequence(d, s, 5)
    long = sample_sequence(d, s, 50)
    assert short == long[:5]


def test_finite_frequencies_follow_weights():
    d = FiniteDist((QUAD, QUAD_C), (0.25, 0.75))
    s = SequenceSeed(7, 1)
    n = 20000
    hits = sum(1 for i in range(n) if sample_map(d, s, i) is d.maps[1])
    freq = hits / n
    assert abs(freq - 0.75) < 4 * (0.25 * 0.75 / n) ** 0.5 + 0.005


def test_independent_streams_differ():
    d = FiniteDist((QUAD, QUAD_C), (0.5, 0.5))
    a = sample_sequence(d, SequenceSeed(42, 0), 20)
    b = sample_sequence(d, SequenceSeed(42, 1), 20)
    assert a != b


def test_finite_choices_vectorized_matches_scalar():
    d = FiniteDist((QUAD, QUAD_C), (0.3, 0.7))
    streams = np.arange(64, dtype=np.uint64)
    for index in (0, 5, 1000):
        vec = finite_choices_array(d, 99, streams, index)
        for s, j in zip(streams.tolist(), vec.tolist()):
            assert d.maps[j] is sample_map(d, SequenceSeed(99, s), index)


def test_ball_draw_properties():
    bn = BallNoise(QUAD_C, 0.25)
    s = SequenceSeed(11, 4)
    for i in range(200):
        f = sample_map(bn, s, i)
        assert f.delta == QUAD_C.delta
        assert f.degree == QUAD_C.degree
        da = f.alpha - QUAD_C.alpha
        dc = f.poly.coeffs[-1] - QUAD_C.poly.coeffs[-1]
        assert (abs(da) ** 2 + abs(dc) ** 2) ** 0.5 <= 0.25
        # middle coefficients untouched
        assert f.poly.coeffs[:-1] == QUAD_C.poly.coeffs[:-1]
    assert sample_map(bn, s, 3) == sample_map(bn, s, 3)


def test_ball_offsets_vectorized_matches_scalar():
    bn = BallNoise(QUAD_C, 0.25)
    streams = np.arange(64, dtype=np.uint64)
    a, b = ball_offsets_array(bn, 11, streams, 17)
    for k, s in enumerate(streams.tolist()):
        f = sample_map(bn, SequenceSeed(11, s), 17)
        assert a[k] == f.alpha - QUAD_C.alpha
        assert b[k] == f.poly.coeffs[-1] - QUAD_C.poly.coeffs[-1]


def test_ball_second_moment():
    # uniform on the radius-r ball in C^2 ~ R^4: E|offset|^2 = r^2 * 4/6
    bn = BallNoise(QUAD_C, 0.25)
    streams = np.arange(20000, dtype=np.uint64)
    a, b = ball_offsets_array(bn, 5, streams, 0)
    m = (np.abs(a) ** 2 + np.abs(b) ** 2).mean()
    want = 0.25**2 * 4.0 / 6.0
    assert abs(m - want) < 0.002


def test_inverse_distribution_involution():
    d = FiniteDist((QUAD, QUAD_C), (0.3, 0.7))
    q = inverse_distribution(d)
    assert q.weights == d.weights
    r = inverse_distribution(q)
    for f, g in zip(d.maps, r.maps):
        assert abs(f.alpha - g.alpha) == 0.0
        assert abs(f.delta - g.delta) == 0.0
        assert max(abs(a - b) for a, b in zip(f.poly.coeffs, g.poly.coeffs)) == 0.0


def test_inverse_distribution_rejects_ball():
    with pytest.raises(ValueError):
        inverse_distribution(BallNoise(QUAD_C, 0.1))


def test_condition_a_params_finite_matches_core():
    d = FiniteDist((QUAD,), (1.0,))
    p = condition_a_params(d)
    assert p.R == 38.0


def test_condition_a_params_ball_pads_coefficients():
    # alpha and constant inflated by the radius:
    # rho0 = 1 + max(8.1, 3.6) = 9.1, R = max(1+eps, 0.5+eps, 3.1, 18.2)
    p = condition_a_params(BallNoise(QUAD_C, 0.25))
    assert p.R == pytest.approx(18.2)
    # with a dominant linear coefficient the padded sum drives R up
    steep = HenonMap(0.0, 0.1, Poly((1.0, -10.0, 0.0)))
    r0 = condition_a_params(FiniteDist((steep,), (1.0,))).R
    r1 = condition_a_params(BallNoise(steep, 0.25)).R
    assert r0 == pytest.approx(20.0)
    assert r1 == pytest.approx(20.5)


def test_support_sample_kinds(seed):
    d = FiniteDist((QUAD, QUAD_C), (0.5, 0.5))
    assert support_sample(d, seed) == list(d.maps)
    bn = BallNoise(QUAD_C, 0.1)
    reps = support_sample(bn, seed, k=16)
    assert len(reps) == 16
    assert all(abs(f.alpha - QUAD_C.alpha) <= 0.1 for f in reps)
    assert reps == support_sample(bn, seed, k=16)


def test_noise_family_interpolates_radius():
    fam = NoiseFamily(QUAD_C, v=0.01, u=0.5)
    d0 = family_at(fam, 0.0)
    d1 = family_at(fam, 1.0)
    dm = family_at(fam, 0.5)
    assert d0.radius == 0.01
    assert d1.radius == 0.5
    assert d0.radius < dm.radius < d1.radius
    with pytest.raises(ValueError):
        family_at(fam, 1.5)


def test_seed_validation():
    with pytest.raises(ValueError):
        SequenceSeed(-1, 0)
    with pytest.raises(ValueError):
        SequenceSeed(2**64, 0)
