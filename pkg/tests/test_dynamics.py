import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from safecycle.dynamics import (
    CollisionDisc,
    InputBounds,
    LateralMode,
    RelativeState,
    flow,
    integrate_step,
    signed_distance,
)

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


def test_signed_distance_examples():
    disc = CollisionDisc(1.0)
    assert signed_distance(RelativeState(0.0, -3.0, 0.0), disc) == -1.0
    assert signed_distance(RelativeState(3.0, 0.0, 4.0), disc) == 4.0
    assert signed_distance(RelativeState(1.0, -5.0, 0.0), disc) == 0.0


def test_signed_distance_independent_of_dv():
    disc = CollisionDisc(1.0)
    for dv in (-10.0, 0.0, 7.3):
        assert signed_distance(RelativeState(2.0, dv, 1.0), disc) == signed_distance(
            RelativeState(2.0, 0.0, 1.0), disc
        )


@given(finite, finite, finite, finite)
def test_signed_distance_lipschitz(dx1, dy1, dx2, dy2):
    disc = CollisionDisc(1.0)
    g1 = signed_distance(RelativeState(dx1, 0.0, dy1), disc)
    g2 = signed_distance(RelativeState(dx2, 0.0, dy2), disc)
    assert abs(g1 - g2) <= math.hypot(dx1 - dx2, dy1 - dy2) + 1e-12


def test_flow_examples():
    b = InputBounds(3.0, 1.5)
    assert flow(RelativeState(10, -2, 1.5), 0, 0, b, LateralMode.FROZEN) == (-2, 0, 0)
    assert flow(RelativeState(10, -2, 1.5), 1, -1, b, LateralMode.LITERAL) == (-2, -2, 1.5)
    wide = InputBounds(3.0, 2.0)
    assert flow(RelativeState(0, 0, 0), 2, 2, wide, LateralMode.FROZEN) == (0, 0, 0)


def test_flow_rejects_out_of_bounds_inputs():
    b = InputBounds(3.0, 1.5)
    with pytest.raises(ValueError):
        flow(RelativeState(0, 0, 0), 3.5, 0.0, b)
    with pytest.raises(ValueError):
        flow(RelativeState(0, 0, 0), 0.0, -2.0, b)


@given(
    st.floats(-1.0, 1.0),
    st.floats(-3.0, 3.0),
    st.floats(-3.0, 3.0),
    st.floats(-1.5, 1.5),
)
def test_flow_affine_in_control(alpha, u1, u2, d):
    b = InputBounds(3.0, 1.5)
    s = RelativeState(5.0, -1.0, 2.0)
    a = max(0.0, min(1.0, 0.5 * (alpha + 1.0)))
    u_mix = a * u1 + (1 - a) * u2
    f_mix = flow(s, u_mix, d, b, LateralMode.LITERAL)
    f1 = flow(s, u1, d, b, LateralMode.LITERAL)
    f2 = flow(s, u2, d, b, LateralMode.LITERAL)
    for i in range(3):
        assert f_mix[i] == pytest.approx(a * f1[i] + (1 - a) * f2[i], abs=1e-12)


def test_integrate_step_examples():
    b = InputBounds(3.0, 1.5)
    out = integrate_step(RelativeState(10, -2, 0), 0, 0, 1.0, b)
    assert out.as_tuple() == pytest.approx((8.0, -2.0, 0.0), abs=1e-12)
    out = integrate_step(RelativeState(10, 0, 0), 1, 0, 2.0, b)
    assert out.as_tuple() == pytest.approx((8.0, -2.0, 0.0), abs=1e-12)
    out = integrate_step(RelativeState(5, 1, 2), 0.5, -0.5, 0.1, b)
    assert out.as_tuple() == pytest.approx((5.095, 0.9, 2.0), abs=1e-12)


@given(
    st.floats(-20.0, 40.0),
    st.floats(-8.0, 8.0),
    st.floats(-2.0, 4.0),
    st.floats(-3.0, 3.0),
    st.floats(-1.5, 1.5),
    st.floats(0.01, 2.0),
)
def test_frozen_step_matches_double_integrator(dx, dv, dy, u, d, dt):
    b = InputBounds(3.0, 1.5)
    out = integrate_step(RelativeState(dx, dv, dy), u, d, dt, b, LateralMode.FROZEN)
    a = d - u
    assert out.dx == pytest.approx(dx + dv * dt + 0.5 * a * dt * dt, abs=1e-12)
    assert out.dv == pytest.approx(dv + a * dt, abs=1e-12)
    assert out.dy == dy


def test_literal_mode_diverges_exponentially():
    b = InputBounds(3.0, 1.5)
    s = RelativeState(0.0, 0.0, 1.0)
    for _ in range(10):
        s = integrate_step(s, 0.0, 0.0, 0.1, b, LateralMode.LITERAL)
    assert s.dy == pytest.approx(math.exp(1.0), rel=1e-6)


def test_invalid_constructions():
    with pytest.raises(ValueError):
        InputBounds(0.0, 1.0)
    with pytest.raises(ValueError):
        InputBounds(1.0, -0.5)
    with pytest.raises(ValueError):
        CollisionDisc(0.0)
    with pytest.raises(ValueError):
        RelativeState(np.nan, 0.0, 0.0)
    with pytest.raises(ValueError):
        LateralMode.from_str("sideways")
