import math
from decimal import Decimal, getcontext

import pytest
from hypothesis import given, settings, strategies as st

from calibrated_reasoning.confidence import (
    ConfidenceQuery,
    logprobs_from_log_odds,
    sigmoid,
    sigmoid_array,
    verbalized_confidence,
)
from calibrated_reasoning.errors import NonFiniteInput

getcontext().prec = 60


def ratio_oracle(ly: float, ln: float) -> float:
    """exp(ly) / (exp(ly) + exp(ln)) in 60-digit decimal arithmetic."""
    a = Decimal(ly).exp()
    b = Decimal(ln).exp()
    return float(a / (a + b))


def test_equal_logprobs_give_half():
    assert verbalized_confidence(ConfidenceQuery(-3.0, -3.0)) == 0.5


def test_direct_value():
    assert verbalized_confidence(-1.0, -2.0) == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)
    assert verbalized_confidence(-1.0, -2.0) == pytest.approx(0.7310585786300049, abs=1e-15)


def test_extreme_gap_stays_finite():
    c = verbalized_confidence(-0.001, -700.0)
    # the naive form underflows exp(-700) relative to exp(-0.001); log-space does not
    assert math.isfinite(c)
    # 1 - 1e-300 is not representable, so the open upper bound cannot be asserted
    assert 1 - 1e-10 < c <= 1.0
    assert c == pytest.approx(ratio_oracle(-0.001, -700.0), abs=1e-15)


def test_non_finite_rejected():
    with pytest.raises(NonFiniteInput):
        ConfidenceQuery(float("nan"), -1.0)
    with pytest.raises(NonFiniteInput):
        verbalized_confidence(-1.0, float("-inf"))


lp = st.floats(min_value=-80, max_value=0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(ly=lp, ln=lp)
def test_matches_decimal_oracle(ly, ln):
    assert verbalized_confidence(ly, ln) == pytest.approx(ratio_oracle(ly, ln), rel=1e-13, abs=1e-300)


@settings(max_examples=300, deadline=None)
@given(ly=lp, ln=lp, shift=st.floats(min_value=-50, max_value=0))
def test_shift_invariance(ly, ln, shift):
    assert abs(verbalized_confidence(ly + shift, ln + shift) - verbalized_confidence(ly, ln)) < 1e-12


@settings(max_examples=300, deadline=None)
@given(ly=lp, ln=lp)
def test_complement_symmetry(ly, ln):
    # exact in real arithmetic; within one rounding of 1 - c in floats
    assert verbalized_confidence(ly, ln) + verbalized_confidence(ln, ly) == pytest.approx(1.0, abs=2.3e-16)


@settings(max_examples=300, deadline=None)
@given(z=st.floats(min_value=-10, max_value=10), dz=st.floats(min_value=1e-3, max_value=10))
def test_monotone(z, dz):
    assert sigmoid(z + dz) > sigmoid(z)


@settings(max_examples=300, deadline=None)
@given(z=st.floats(min_value=-700, max_value=700), dz=st.floats(min_value=0, max_value=10))
def test_non_decreasing_where_floats_saturate(z, dz):
    assert sigmoid(z + dz) >= sigmoid(z)


def test_array_matches_scalar():
    xs = [-800.0, -40.0, -1.0, 0.0, 0.5, 37.0, 800.0]
    assert list(sigmoid_array(xs)) == [sigmoid(x) for x in xs]


@settings(max_examples=200, deadline=None)
@given(z=st.floats(min_value=-500, max_value=500))
def test_logprobs_from_log_odds(z):
    ly, ln = logprobs_from_log_odds(z)
    assert ly <= 0 and ln <= 0
    assert (ly - ln) == pytest.approx(z, abs=1e-9)
    assert math.exp(ly) + math.exp(ln) == pytest.approx(1.0, abs=1e-12)
