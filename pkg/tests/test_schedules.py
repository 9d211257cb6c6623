import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pisaa.schedules import (GainSchedule, Partition, TemperatureLadder, TruncationBounds, desired_probability,
                             gain_at, subregion_index, temperature_at)


def test_gain_examples():
    assert gain_at(GainSchedule(100, 0.55), 50) == 1.0
    assert gain_at(GainSchedule(100, 0.5), 400) == pytest.approx(0.5)
    assert gain_at(GainSchedule(10 ** 5, 0.55), 10 ** 6) == pytest.approx(0.1 ** 0.55)
    assert gain_at(GainSchedule(10 ** 5, 0.55), 10 ** 6) == pytest.approx(0.28183829, rel=1e-7)


def test_temperature_examples():
    assert temperature_at(TemperatureLadder(1, 1, 0.01), 1) == pytest.approx(1.01)
    assert temperature_at(TemperatureLadder(1, 1, 0.01), 4) == pytest.approx(0.51)
    n = 10 ** 6
    assert temperature_at(TemperatureLadder(5, 1, 1 - 5 / math.sqrt(n)), n) == pytest.approx(1.0)


def test_desired_probability_examples():
    np.testing.assert_allclose(desired_probability(0.0, 5).pi, 0.2)
    np.testing.assert_allclose(desired_probability(0.1, 3).pi, [0.36717, 0.33223, 0.30060], atol=1.5e-5)
    np.testing.assert_array_equal(desired_probability(math.inf, 2).pi, [1.0, 0.0])
    np.testing.assert_allclose(desired_probability(200.0, 2).pi, [1.0, 0.0], atol=1e-80)


def test_subregion_index_examples():
    p = Partition(np.array([0.0, 1.0, 2.0]))
    assert subregion_index(p, -5) == 1
    assert subregion_index(p, 1.0) == 2
    assert subregion_index(p, 7) == 4
    assert subregion_index(p, 0.0) == 1
    assert subregion_index(p, math.inf) == 4
    assert subregion_index(p, math.nan) == 4


def test_uniform_partition_has_m_minus_one_thresholds():
    p = Partition.uniform(0.0, 9.0, 19)
    assert p.m == 19 and p.grid.size == 18
    assert p.grid[0] == 0.0 and p.grid[-1] == 9.0
    assert Partition.uniform(1.0, 1.0, 2).m == 2


@pytest.mark.parametrize("kw", [{"grid": []}, {"grid": [1.0, 1.0]}, {"grid": [2.0, 1.0]}, {"grid": [0.0, math.inf]}])
def test_partition_rejects_bad_grids(kw):
    with pytest.raises(ValueError):
        Partition(np.array(kw["grid"], dtype=float))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        desired_probability(0.1, 1)
    with pytest.raises(ValueError):
        desired_probability(-0.1, 3)
    with pytest.raises(ValueError):
        GainSchedule(100, 0.0)
    with pytest.raises(ValueError):
        GainSchedule(0, 0.6)
    with pytest.raises(ValueError):
        TemperatureLadder(0.0, 1, 0.01)
    with pytest.raises(ValueError):
        gain_at(GainSchedule(), 0)
    with pytest.raises(ValueError):
        temperature_at(TemperatureLadder(), 0)
    with pytest.raises(ValueError):
        TruncationBounds(1.0, 1.0)


def test_truncation_bounds_escalate():
    b = TruncationBounds(1.0, 10.0)
    assert [b.bound(c) for c in range(3)] == [1.0, 10.0, 100.0]
    assert TruncationBounds().bound(10 ** 6) == math.inf


@given(st.integers(1, 10 ** 9), st.integers(1, 10 ** 6), st.floats(0.51, 1.0))
def test_gain_monotone(t, n_gamma, beta):
    s = GainSchedule(n_gamma, beta)
    assert gain_at(s, t + 1) <= gain_at(s, t) <= 1.0


@given(st.integers(1, 10 ** 9), st.floats(0.01, 100), st.integers(1, 10 ** 6), st.floats(1e-4, 10))
def test_temperature_monotone_and_bounded(t, tau_h, n_tau, tau_star):
    lad = TemperatureLadder(tau_h, n_tau, tau_star)
    assert temperature_at(lad, t + 1) <= temperature_at(lad, t)
    assert temperature_at(lad, t) >= tau_star


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30, unique=True),
       st.lists(st.floats(-2e6, 2e6, allow_nan=False), min_size=2, max_size=50))
def test_locate_is_a_monotone_partition(thresholds, energies):
    p = Partition(np.sort(np.array(thresholds)))
    e = np.sort(np.array(energies))
    lab = p.locate(e)
    assert np.all((lab >= 0) & (lab < p.m))
    assert np.all(np.diff(lab) >= 0)
    for x, j in zip(e, lab):
        lo = -math.inf if j == 0 else p.grid[j - 1]
        hi = math.inf if j == p.m - 1 else p.grid[j]
        assert lo < x <= hi


@given(st.one_of(st.just(0.0), st.floats(1e-6, 50.0)), st.integers(2, 500))
def test_desired_probability_normalized_and_decreasing(lam, m):
    pi = desired_probability(lam, m).pi
    assert abs(pi.sum() - 1.0) < 1e-12
    if lam > 0:
        assert np.all(np.diff(pi) <= 0)
        nz = pi[pi > 0]
        assert np.all(np.diff(nz) < 0)


def test_cooling_is_faster_than_gain_decay():
    # tau_t - tau_{t+1} = o(gamma_t) over t in [1, 1e7] with the default pairing
    lad, gain = TemperatureLadder(1.0, 1, 0.01), GainSchedule(100, 0.55)
    t = np.unique(np.logspace(0, 7, 400).astype(np.int64))
    ratio = np.array([(temperature_at(lad, k) - temperature_at(lad, k + 1)) / gain_at(gain, k) for k in t])
    tail = ratio[t >= 10 ** 3]
    assert np.all(np.diff(tail) <= 0)
    assert tail[-1] < 1e-6
