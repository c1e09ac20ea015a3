import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from mphl.model import (
    DirectionObservation,
    DistanceObservation,
    MissingPositionError,
    UndefinedDirectionError,
    azimuth,
    euclidean_distance,
    kappa_from_std,
    log_bessel_i0,
    log_direction_density,
    log_direction_factor,
    log_distance_density,
    log_distance_factor,
    log_likelihood,
    log_pairwise_factor,
    wrap_angle,
)

coord = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-100, 100, allow_nan=False)


def _i0_series(k, terms=200):
    # power series sum (k/2)^(2m) / (m!)^2, accumulated term by term
    total, term = 1.0, 1.0
    for m in range(1, terms):
        term *= (k / 2) ** 2 / m**2
        total += term
    return total


@pytest.mark.parametrize("theta,expected", [
    (0.0, 0.0), (math.pi, -math.pi), (-math.pi, -math.pi), (3 * math.pi, -math.pi),
    (2 * math.pi, 0.0), (math.pi / 2 + 4 * math.pi, math.pi / 2),
])
def test_wrap_angle_values(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected, abs=1e-12)


@given(angle)
def test_wrap_angle_range_and_equivalence(theta):
    w = wrap_angle(theta)
    assert -math.pi <= w < math.pi
    assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)
    assert math.sin(w) == pytest.approx(math.sin(theta), abs=1e-9)


def test_wrap_angle_array():
    out = wrap_angle(np.array([0.0, 4.0, -4.0]))
    assert out.shape == (3,)
    assert np.all((out >= -np.pi) & (out < np.pi))


def test_distance_factor_peak_and_value():
    obs = DistanceObservation(0, 1, 5.0, 0.5)
    assert log_distance_factor((0, 0), (3, 4), obs) == 0.0
    assert log_distance_factor((0, 0), (6, 0), obs) == pytest.approx(-1.0 / (2 * 0.25))


def test_direction_factor_peak_and_antipode():
    obs = DirectionObservation(0, 1, math.pi / 2, 10.0)
    assert log_direction_factor((0, 0), (0, 3), obs) == pytest.approx(10.0)
    assert log_direction_factor((0, 0), (0, -3), obs) == pytest.approx(-10.0)


def test_direction_factor_coincident_points():
    obs = DirectionObservation(0, 1, 0.3, 1.0)
    with pytest.raises(UndefinedDirectionError):
        log_direction_factor((1, 1), (1, 1), obs)


@given(coord, coord, coord, coord, angle, st.floats(0.01, 1e4))
def test_direction_reciprocity(x1, y1, x2, y2, alpha, kappa):
    if math.hypot(x2 - x1, y2 - y1) < 1e-6:
        return
    fwd = DirectionObservation(0, 1, alpha, kappa)
    back = DirectionObservation(1, 0, alpha + math.pi, kappa)
    a = log_direction_factor((x1, y1), (x2, y2), fwd)
    b = log_direction_factor((x2, y2), (x1, y1), back)
    assert a == pytest.approx(b, abs=1e-9 * max(1.0, kappa))


@given(coord, coord, coord, coord)
def test_distance_symmetry(x1, y1, x2, y2):
    obs = DistanceObservation(0, 1, 2.0, 0.3)
    assert log_distance_factor((x1, y1), (x2, y2), obs) == pytest.approx(
        log_distance_factor((x2, y2), (x1, y1), obs))


def test_pairwise_factor_orientation():
    xi, xj = (0.0, 0.0), (2.0, 1.0)
    fwd = DirectionObservation("a", "b", azimuth(xi, xj), 4.0)
    back = DirectionObservation("b", "a", azimuth(xj, xi), 4.0)
    rng = DistanceObservation("a", "b", 2.0, 0.2)
    total = log_pairwise_factor(xi, xj, [fwd, back, rng], first="a")
    swapped = log_pairwise_factor(xj, xi, [fwd, back, rng], first="b")
    assert total == pytest.approx(swapped)
    assert total == pytest.approx(8.0 + log_distance_factor(xi, xj, rng))


def test_pairwise_factor_empty_and_mixed_edges():
    assert log_pairwise_factor((0, 0), (1, 1), []) == 0.0
    with pytest.raises(ValueError):
        log_pairwise_factor((0, 0), (1, 1), [DistanceObservation(0, 1, 1, 1), DistanceObservation(0, 2, 1, 1)])


def test_log_likelihood_sums_and_missing():
    pos = {0: (0, 0), 1: (3, 4), 2: (0, 1)}
    obs = [DistanceObservation(0, 1, 4.0, 1.0), DirectionObservation(0, 2, 0.0, 2.0)]
    assert log_likelihood(pos, obs) == pytest.approx(-0.5 + 2.0 * math.cos(-math.pi / 2))
    with pytest.raises(MissingPositionError):
        log_likelihood({0: (0, 0)}, obs)


@pytest.mark.parametrize("k", [0.0, 1e-3, 0.5, 3.0, 20.0, 100.0])
def test_log_bessel_i0_matches_series(k):
    assert log_bessel_i0(k) == pytest.approx(math.log(_i0_series(k)), rel=1e-12, abs=1e-14)


def test_log_bessel_i0_large_kappa_asymptote():
    k = 1e8
    assert log_bessel_i0(k) == pytest.approx(k - 0.5 * math.log(2 * math.pi * k), rel=1e-12)


def test_densities_normalize():
    obs = DirectionObservation(0, 1, 0.7, 3.0)
    th = np.linspace(-np.pi, np.pi, 20001)
    dens = [math.exp(log_direction_density((0, 0), (math.cos(t), math.sin(t)), obs)) for t in th[:-1]]
    assert np.sum(dens) * (th[1] - th[0]) == pytest.approx(1.0, abs=1e-6)
    dobs = DistanceObservation(0, 1, 2.0, 0.1)
    r = np.linspace(1.0, 3.0, 4001)
    dd = [math.exp(log_distance_density((0, 0), (x, 0), dobs)) for x in r]
    assert trapezoid(dd, r) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("bad", [
    lambda: DistanceObservation(0, 1, 1.0, 0.0),
    lambda: DistanceObservation(0, 0, 1.0, 1.0),
    lambda: DistanceObservation(0, 1, float("nan"), 1.0),
    lambda: DirectionObservation(0, 1, 0.0, -1.0),
    lambda: DirectionObservation(0, 1, float("inf"), 1.0),
])
def test_observation_validation(bad):
    with pytest.raises(ValueError):
        bad()


def test_direction_angle_is_wrapped_and_kappa():
    assert DirectionObservation(0, 1, 3 * math.pi / 2, 1.0).angle == pytest.approx(-math.pi / 2)
    assert kappa_from_std(math.radians(5)) == pytest.approx(1 / math.radians(5) ** 2)
    assert euclidean_distance((0, 0), (3, 4)) == 5.0
