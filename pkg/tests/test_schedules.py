import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochbatch.schedules import LrSchedule, lr_at


def test_constant():
    s = LrSchedule("constant", lr_init=0.01)
    assert all(s(e, 20) == 0.01 for e in range(21))


def test_exponential_start():
    assert LrSchedule("exponential")(0, 100) == 0.1


def test_staircase_milestones():
    s = LrSchedule("staircase")
    assert s(49, 100) == 0.1
    assert s(50, 100) == pytest.approx(0.01, rel=1e-15)
    assert s(74, 100) == s(50, 100)
    assert s(75, 100) == pytest.approx(0.001, rel=1e-15)


def test_sigmoid_shape():
    s = LrSchedule("sigmoid")
    vals = [s(e, 30) for e in range(31)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[15] == pytest.approx(0.0505, abs=1e-12)


@given(total=st.integers(1, 300), frac=st.floats(0, 1), k=st.floats(0.5, 40))
def test_sigmoid_point_symmetry(total, frac, k):
    s = LrSchedule("sigmoid", steepness=k)
    e = frac * total
    assert s(e, total) + s(total - e, total) == pytest.approx(s.lr_init + s.lr_final, abs=1e-15)


@given(scheme=st.sampled_from(["constant", "exponential", "staircase", "sigmoid"]),
       total=st.integers(1, 500), frac=st.floats(0, 1))
def test_positive_and_pure(scheme, total, frac):
    s = LrSchedule(scheme)
    e = frac * total
    assert s(e, total) > 0
    assert lr_at(s, e, total) == lr_at(s, e, total)


def test_preconditions():
    with pytest.raises(ValueError):
        LrSchedule("cosine")
    with pytest.raises(ValueError):
        LrSchedule(milestones=(0.5, 1.0))
    with pytest.raises(ValueError):
        lr_at(LrSchedule(), 11, 10)
    with pytest.raises(ValueError):
        lr_at(LrSchedule(), 0, 0)
    assert math.isfinite(LrSchedule("exponential")(1000, 1000))
