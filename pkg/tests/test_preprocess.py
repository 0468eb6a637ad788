import numpy as np
import pytest
from hypothesis import given, strategies as st

from lspe_kit.errors import InputError
from lspe_kit.preprocess import Preprocessor, apply

nonneg = st.floats(0, 500, allow_nan=False)


def test_examples():
    for delta in (1.5, 4.0, 10.0):
        assert apply(Preprocessor.optimal(delta), [1.0])[0] == 0.0
    assert apply(Preprocessor.optimal(4.0), [2.0])[0] == pytest.approx(1 / 3)
    assert apply(Preprocessor.exponential(0.001), [0.0])[0] == 1.0
    assert np.array_equal(apply(Preprocessor.identity(), [1.0, 2.0]), [1.0, 2.0])
    assert np.array_equal(apply(Preprocessor.truncate(2.0), [1.0, 2.0, 3.0]), [1.0, 2.0, 0.0])


@pytest.mark.parametrize("text", ["exp:0", "exp:-1", "optimal:1", "optimal:0.5", "trunc:-2", "bogus", "exp:x",
                                  "trunc"])
def test_invalid_parameters_rejected(text):
    with pytest.raises(InputError):
        Preprocessor.parse(text)


@pytest.mark.parametrize("text", ["identity", "exp:0.001", "optimal:4", "trunc:9"])
def test_parse_round_trip(text):
    assert str(Preprocessor.parse(text)) == text


def test_optimal_pole_is_rejected():
    # pole at y = 1 - sqrt(delta) < 0 only reachable with negative measurements
    with pytest.raises(InputError, match="pole"):
        apply(Preprocessor.optimal(4.0), [-1.0])


@given(y1=nonneg, y2=nonneg, gamma=st.floats(1e-4, 1.0))
def test_exponential_is_decreasing_in_unit_interval(y1, y2, gamma):
    p = Preprocessor.exponential(gamma)
    a, b = apply(p, [y1, y2])
    assert 0 < a <= 1 and 0 < b <= 1
    if gamma * abs(y1 - y2) > 1e-9:
        assert (a > b) == (y1 < y2)


@given(y1=nonneg, y2=nonneg, delta=st.floats(1.01, 20))
def test_optimal_increasing_and_below_one(y1, y2, delta):
    p = Preprocessor.optimal(delta)
    a, b = apply(p, [y1, y2])
    assert a < 1 and b < 1
    if abs(y1 - y2) > 1e-6:
        assert (a < b) == (y1 < y2)


@given(y=st.lists(nonneg, min_size=1, max_size=20), tau=st.floats(0.1, 1e3))
def test_truncate_agrees_with_identity_below_tau(y, tau):
    y = np.array(y)
    keep = y <= tau
    assert np.array_equal(apply(Preprocessor.truncate(tau), y)[keep], y[keep])
