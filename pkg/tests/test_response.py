import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from photocal.response import (
    NonMonotoneResponse,
    ResponseParams,
    g_slope,
    inverse_response_samples,
    is_monotone,
    response_eval,
    response_invert,
    response_jacobian,
)

coeff = st.floats(-0.4, 0.4)
mono_c = st.tuples(coeff, coeff, coeff, coeff).filter(is_monotone)


def bisect_inverse(c, intensity, iters=200):
    """Plain scalar bisection on response_eval, kept separate from the LUT code."""
    p = ResponseParams(c)
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if response_eval(p, mid) < intensity:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_identity_midpoint():
    assert response_eval(ResponseParams(), 0.5) == 127.5


def test_first_basis_term_by_hand():
    assert response_eval(ResponseParams((0.5, 0, 0, 0)), 0.5) == pytest.approx(95.625, abs=1e-12)


def test_inverse_examples():
    ident = ResponseParams()
    assert response_invert(ident, 127.5) == pytest.approx(0.5, abs=1e-12)
    assert response_invert(ident, 0.0) == 0.0
    assert response_invert(ResponseParams((0.5, 0, 0, 0)), 95.625) == pytest.approx(0.5, abs=1e-4)


def test_inverse_matches_bisection_oracle():
    c = (0.3, -0.2, 0.1, 0.05)
    for intensity in (3.0, 40.25, 95.625, 180.0, 251.5):
        assert response_invert(ResponseParams(c), intensity) == pytest.approx(bisect_inverse(c, intensity), abs=1e-6)


def test_jacobian_by_hand():
    J = response_jacobian(ResponseParams(), 127.5)
    assert J[0] == pytest.approx(0.25, abs=1e-12)
    assert np.all(response_jacobian(ResponseParams((0.3, -0.2, 0.1, 0.05)), 0.0) == 0.0)


def test_rejects_non_monotone_and_bad_shapes():
    with pytest.raises(NonMonotoneResponse):
        ResponseParams((2.0, 0, 0, 0))
    with pytest.raises(ValueError):
        ResponseParams((0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        response_eval(ResponseParams(), 1.5)
    with pytest.raises(ValueError):
        response_invert(ResponseParams(), 256.0)


def test_inverse_samples_span_unit_interval():
    s = inverse_response_samples(ResponseParams((0.3, -0.2, 0.1, 0.05)))
    assert s.shape == (256,) and s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) > 0)


@settings(max_examples=60, deadline=None)
@given(mono_c)
def test_endpoints_pinned(c):
    p = ResponseParams(c)
    assert response_eval(p, 0.0) == 0.0
    assert response_eval(p, 1.0) == 255.0


@settings(max_examples=60, deadline=None)
@given(mono_c)
def test_accepted_responses_increase_on_grid(c):
    assert np.all(np.diff(response_eval(ResponseParams(c), np.linspace(0, 1, 1024))) > 0)


@settings(max_examples=40, deadline=None)
@given(mono_c)
def test_inverse_consistency(c):
    p = ResponseParams(c)
    levels = np.arange(0.0, 255.01, 0.5)
    assert np.max(np.abs(response_eval(p, response_invert(p, levels)) - levels)) <= 1e-3


@settings(max_examples=100, deadline=None)
@given(mono_c, st.floats(1.0, 254.0))
def test_jacobian_matches_central_differences(c, intensity):
    p = ResponseParams(c)
    assume(g_slope(c, response_invert(p, intensity)) > 0.05)
    J = response_jacobian(p, intensity)
    h = 1e-6
    for k in range(4):
        cp, cm = list(c), list(c)
        cp[k] += h
        cm[k] -= h
        if not (is_monotone(cp) and is_monotone(cm)):
            continue
        fd = (response_invert(ResponseParams(cp), intensity) - response_invert(ResponseParams(cm), intensity)) / (2 * h)
        assert abs(J[k] - fd) <= 1e-4 * max(abs(fd), 1e-3)
