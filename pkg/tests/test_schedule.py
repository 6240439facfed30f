from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agd.schedule import alpha_bar, build_linear_schedule


def test_constant_schedule_by_hand():
    s = build_linear_schedule(2, 0.5, 0.5)
    np.testing.assert_array_equal(s.betas, [0.5, 0.5])
    np.testing.assert_array_equal(s.alpha_bars, [0.5, 0.25])


def test_default_terminal_alpha_bar_matches_exact_product():
    s = build_linear_schedule(100, 1e-3, 0.2)
    # exact rational running product of the float betas
    prod = Fraction(1)
    for b in s.betas:
        prod *= 1 - Fraction(float(b))
    assert s.alpha_bars[-1] == pytest.approx(float(prod), rel=1e-12)
    assert s.alpha_bars[-1] < 1e-3
    assert s.betas[0] == 1e-3 and s.betas[-1] == 0.2


@pytest.mark.parametrize("args", [(1, 1e-3, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0), (2.5, 0.1, 0.2)])
def test_invalid_parameters_rejected(args):
    with pytest.raises(ValueError):
        build_linear_schedule(*args)


def test_alpha_bar_accessor(schedule):
    assert alpha_bar(schedule, 0) == 1.0
    assert alpha_bar(schedule, 1) == pytest.approx(0.999, abs=1e-15)
    assert alpha_bar(schedule, schedule.T) == schedule.alpha_bars[-1]
    for bad in (-1, schedule.T + 1):
        with pytest.raises(IndexError):
            alpha_bar(schedule, bad)


def test_schedule_is_read_only(schedule):
    with pytest.raises(ValueError):
        schedule.betas[0] = 0.5


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(2, 400),
    lo=st.floats(1e-6, 0.5),
    span=st.floats(0.0, 0.49),
)
def test_monotone_and_recurrence(T, lo, span):
    s = build_linear_schedule(T, lo, lo + span)
    ab = s.alpha_bars_full
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0)
    assert np.max(np.abs(ab[1:] - ab[:-1] * (1 - s.betas))) < 1e-12
