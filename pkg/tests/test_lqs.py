import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasistat.errors import ConfigError, DegenerateThresholdWarning, UndefinedMeasure
from quasistat.lqs import (
    MeasureCurve,
    average_measure,
    du_check,
    extract_lqs,
    measure_correlation,
    odometer_distance,
    symmetric_offsets,
)
from quasistat.measures import MeasureKind, MeasurePair


def _curve(avg, offsets=None):
    avg = np.asarray(avg, dtype=float)
    if offsets is None:
        k = (len(avg) - 1) // 2
        offsets = np.arange(-k, k + 1)
    return MeasureCurve("X", np.asarray(offsets), avg, np.zeros_like(avg),
                        np.ones(len(avg), dtype=int))


def _pairs(values_by_offset):
    out = []
    for off, values in values_by_offset.items():
        for m, v in enumerate(values):
            out.append(MeasurePair(v, m, m + off, MeasureKind.COL_DOPPLER))
    return out


class TestAverage:
    def test_single_pair(self):
        c = average_measure(_pairs({-1: [0.3], 0: [1.0], 1: [0.7]}), symmetric_offsets(1))
        np.testing.assert_allclose(c.avg, [0.3, 1.0, 0.7])
        np.testing.assert_allclose(c.std, 0.0)

    def test_stationary(self):
        c = average_measure(_pairs({d: [1.0] * 5 for d in range(-2, 3)}), symmetric_offsets(2))
        np.testing.assert_allclose(c.avg, 1.0)
        np.testing.assert_allclose(c.std, 0.0)
        assert c.count.tolist() == [5] * 5

    def test_population_std(self):
        c = average_measure(_pairs({0: [0.8, 1.0]}), [0])
        assert c.avg[0] == pytest.approx(0.9)
        assert c.std[0] == pytest.approx(0.1)

    def test_missing_offset_warns(self):
        with pytest.warns(UserWarning):
            c = average_measure(_pairs({0: [1.0]}), symmetric_offsets(1))
        assert c.offsets.tolist() == [0]

    def test_order_independent(self):
        rng = random.Random(3)
        pairs = _pairs({d: [rng.random() for _ in range(50)] for d in range(-3, 4)})
        a = average_measure(pairs, symmetric_offsets(3))
        rng.shuffle(pairs)
        b = average_measure(pairs, symmetric_offsets(3))
        assert a.avg.tobytes() == b.avg.tobytes() and a.std.tobytes() == b.std.tobytes()


class TestExtract:
    def test_hand_example(self):
        r = extract_lqs(_curve([0.89, 0.95, 1.0, 0.95, 0.89]), 0.9, 0.5, 2.0)
        assert r.set_size == 3
        assert r.lqs_time == pytest.approx(1.5)
        assert r.lqs_distance == pytest.approx(3.0)
        assert not r.censored

    def test_full_range_censored(self):
        r = extract_lqs(_curve(np.ones(9)), 0.9, 1.0)
        assert r.censored and r.set_size == 9

    def test_zero_threshold(self):
        r = extract_lqs(_curve([0.1, 0.5, 1.0, 0.2, 0.05]), 0.0, 1.0)
        assert r.set_size == 5 and r.censored

    def test_one_sided_censoring(self):
        r = extract_lqs(_curve([0.95, 0.95, 1.0, 0.5, 0.95]), 0.9, 1.0)
        assert r.set_size == 3 and r.censored

    def test_gap_stops_run(self):
        r = extract_lqs(_curve([0.95, 0.5, 1.0, 0.95, 0.5]), 0.9, 1.0)
        assert r.set_size == 2 and not r.censored

    def test_degenerate(self):
        with pytest.warns(DegenerateThresholdWarning):
            r = extract_lqs(_curve([0.5, 0.8, 0.5]), 0.9, 1.0)
        assert r.degenerate and r.lqs_time == 0 and r.set_size == 0

    @pytest.mark.parametrize("th", [-0.1, 1.5])
    def test_threshold_bounds(self, th):
        with pytest.raises(ConfigError):
            extract_lqs(_curve([1.0]), th, 1.0)

    def test_needs_zero_offset(self):
        with pytest.raises(ConfigError):
            extract_lqs(_curve([1.0, 1.0], [1, 2]), 0.5, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=15), st.floats(0, 1), st.floats(0, 1))
def test_threshold_nesting(values, t1, t2):
    lo, hi = sorted((t1, t2))
    k = len(values)
    avg = np.array(values + [1.0] + values[::-1])
    curve = _curve(avg, np.arange(-k, k + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateThresholdWarning)
        assert extract_lqs(curve, hi, 1.0).set_size <= extract_lqs(curve, lo, 1.0).set_size


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=21).filter(lambda v: len(v) % 2),
       st.floats(0, 0.999))
def test_censored_iff_boundary(values, th):
    avg = np.array(values)
    avg[len(avg) // 2] = 1.0
    curve = _curve(avg)
    r = extract_lqs(curve, th, 1.0)
    k = len(avg) // 2
    lo = hi = 0
    while lo - 1 >= -k and avg[k + lo - 1] > th:
        lo -= 1
    while hi + 1 <= k and avg[k + hi + 1] > th:
        hi += 1
    assert r.set_size == hi - lo + 1
    assert r.censored == (lo == -k or hi == k)


class TestCorrelation:
    def test_identical(self):
        assert measure_correlation([0.1, 0.5, 0.3], [0.1, 0.5, 0.3]) == pytest.approx(1.0)

    def test_negated(self):
        a = np.array([0.1, 0.5, 0.3])
        assert measure_correlation(a, 2 * a.mean() - a) == pytest.approx(-1.0)

    def test_affine(self):
        assert measure_correlation([0, 1, 2], [0, 2, 4]) == pytest.approx(1.0)

    def test_constant(self):
        with pytest.raises(UndefinedMeasure):
            measure_correlation([1, 1, 1], [0, 1, 2])

    def test_length(self):
        with pytest.raises(ConfigError):
            measure_correlation([1], [1])


class TestDu:
    def test_reference_geometry(self):
        v = 10 / 3.6
        f_c = 2.53e9
        # ten wavelengths as stated for the reference geometry (1.185 m exactly)
        d_stat = 1.19
        r = du_check(v, f_c, 5e-6, d_stat, 15.0)
        assert r.nu_max == pytest.approx(23.4, rel=0.01)
        assert r.coherence_time == pytest.approx(42.7e-3, rel=0.01)
        assert r.coherence_freq == pytest.approx(200e3, rel=1e-12)
        assert r.correlation_product == pytest.approx(1.16e-7, rel=0.01)
        assert r.dispersion_product == pytest.approx(1.17e-4, rel=0.01)
        assert r.angular_spread_deg == pytest.approx(25.8, rel=0.01)
        assert r.stationarity_time == pytest.approx(0.43, rel=0.01)
        assert r.verdict

    def test_not_underspread(self):
        r = du_check(300.0, 60e9, 1e-3, 0.01, 15.0)
        assert not r.verdict

    @pytest.mark.parametrize("bad", ["v_max", "f_c", "tau_max", "d_stat_min", "w_max"])
    def test_positive_inputs(self, bad):
        args = dict(v_max=1.0, f_c=1e9, tau_max=1e-6, d_stat_min=1.0, w_max=1.0)
        args[bad] = 0.0
        with pytest.raises(ConfigError):
            du_check(**args)

    def test_json_ready(self):
        d = du_check(2.0, 2.5e9, 5e-6, 1.2, 15.0).as_dict()
        assert isinstance(d["verdict"], bool) and isinstance(d["nu_max"], float)


def test_odometer_constant_speed():
    assert odometer_distance([2.0] * 100, 0.01, 0.5) == pytest.approx(1.0)


def test_odometer_varying_speed():
    speeds = [0.0] * 50 + [4.0] * 50
    # every 10-sample window averaged over the 91 start positions
    expected = np.mean(np.convolve(speeds, np.ones(10), "valid")) * 0.01
    assert odometer_distance(speeds, 0.01, 0.1) == pytest.approx(expected)
    assert math.isclose(odometer_distance(speeds, 0.01, 0.0), 0.0)
