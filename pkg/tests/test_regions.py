import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from branchwiener.errors import ValidationError
from branchwiener import regions as rg
from branchwiener.regions import Ball, Box, UnionRegion


# ------------------------------------------------------------ construction


def test_box_validation():
    Box((0.0, 0.0), (1.0, 2.0))
    with pytest.raises(ValidationError):
        Box((0.0,), (0.0,))  # empty side
    with pytest.raises(ValidationError):
        Box((0.0, 0.0), (1.0,))
    with pytest.raises(ValidationError):
        Box((), ())
    with pytest.raises(ValidationError):
        Box((0.0,), (math.inf,))


def test_ball_validation():
    Ball((0.0,), 1.0)
    with pytest.raises(ValidationError):
        Ball((0.0,), 0.0)
    with pytest.raises(ValidationError):
        Ball((0.0,), -2.0)
    with pytest.raises(ValidationError):
        Ball((0.0,), math.nan)


def test_union_accepts_disjoint_and_rejects_overlap():
    UnionRegion((Box((0.0,), (1.0,)), Box((1.0,), (2.0,))))  # touching is fine
    UnionRegion((Ball((0.0, 0.0), 1.0), Ball((3.0, 0.0), 1.0)))
    UnionRegion((Box((0.0, 0.0), (1.0, 1.0)), Ball((5.0, 5.0), 1.0)))
    with pytest.raises(ValidationError):
        UnionRegion((Box((0.0,), (2.0,)), Box((1.0,), (3.0,))))
    with pytest.raises(ValidationError):
        # closed balls: tangency means a shared point
        UnionRegion((Ball((0.0,), 1.0), Ball((2.0,), 1.0)))
    with pytest.raises(ValidationError):
        UnionRegion((Box((0.0, 0.0), (1.0, 1.0)), Ball((0.5, 0.5), 0.1)))
    with pytest.raises(ValidationError):
        UnionRegion(())
    with pytest.raises(ValidationError):
        UnionRegion((Box((0.0,), (1.0,)), Ball((0.0, 0.0), 1.0)))  # mixed dims


# ----------------------------------------------------------------- contains


def test_contains_box_half_open():
    box = Box((0.0, 0.0), (1.0, 1.0))
    assert rg.contains(box, (0.0, 0.0))
    assert not rg.contains(box, (1.0, 0.5))
    assert not rg.contains(box, (0.5, 1.0))
    pts = np.array([[0.5, 0.5], [1.0, 1.0], [-0.1, 0.2]])
    np.testing.assert_array_equal(rg.contains(box, pts), [True, False, False])


def test_contains_ball_closed():
    ball = Ball((1.0, 0.0), 1.0)
    assert rg.contains(ball, (2.0, 0.0))  # boundary included
    assert not rg.contains(ball, (2.0 + 1e-12, 0.0))
    assert rg.contains(ball, (1.0, -1.0))


def test_contains_union_and_shape_checks():
    u = UnionRegion((Box((0.0,), (1.0,)), Box((2.0,), (3.0,))))
    np.testing.assert_array_equal(
        rg.contains(u, np.array([[0.5], [1.5], [2.5]])), [True, False, True]
    )
    with pytest.raises(ValidationError):
        rg.contains(u, np.array([0.5, 1.5]))  # dim mismatch


# ------------------------------------------------------------------ moments


def test_box_moments_are_products():
    box = Box((0.0,), (1.0,))
    assert rg.moment(box, (0,)) == pytest.approx(1.0)
    assert rg.moment(box, (1,)) == pytest.approx(0.5)
    assert rg.moment(box, (2,)) == pytest.approx(1 / 3)
    shifted = Box((1.0,), (2.0,))
    assert rg.moment(shifted, (1,)) == pytest.approx(3 / 2)
    assert rg.moment(shifted, (2,)) == pytest.approx(7 / 3)
    assert rg.moment(Box((2.0,), (3.0,)), (2,)) == pytest.approx(19 / 3)
    box2 = Box((0.0, -1.0), (1.0, 1.0))
    assert rg.moment(box2, (3, 1)) == pytest.approx((1 / 4) * 0.0, abs=1e-15)
    assert rg.moment(box2, (1, 2)) == pytest.approx(0.5 * (2 / 3))


def test_centered_ball_moments():
    ball = Ball((0.0, 0.0), 1.0)
    assert rg.volume(ball) == pytest.approx(math.pi)
    assert rg.moment(ball, (2, 0)) == pytest.approx(math.pi / 4)
    assert rg.moment(ball, (0, 2)) == pytest.approx(math.pi / 4)
    assert rg.moment(ball, (1, 0)) == 0.0
    assert rg.moment(ball, (1, 1)) == 0.0
    # d=3 volume
    assert rg.volume(Ball((0.0, 0.0, 0.0), 2.0)) == pytest.approx(
        4 / 3 * math.pi * 8
    )


def test_off_center_ball_first_moment_is_center_times_volume():
    ball = Ball((0.7, -1.2), 1.3)
    vol = rg.volume(ball)
    assert rg.moment(ball, (1, 0)) == pytest.approx(0.7 * vol, rel=1e-12)
    assert rg.moment(ball, (0, 1)) == pytest.approx(-1.2 * vol, rel=1e-12)


def test_ball_moment_against_quadrature():
    # independent route: iterated integral with exact variable limits
    ball = Ball((0.4, -0.3), 1.1)
    c1, c2 = ball.center
    R = ball.radius
    for beta in [(0, 0), (2, 0), (1, 1), (2, 1), (0, 3)]:
        def inner(x):
            half = math.sqrt(max(R * R - (x - c1) ** 2, 0.0))
            lo, hi = c2 - half, c2 + half
            b2 = beta[1]
            return x ** beta[0] * (hi ** (b2 + 1) - lo ** (b2 + 1)) / (b2 + 1)

        ref, err = integrate.quad(inner, c1 - R, c1 + R, limit=400)
        assert rg.moment(ball, beta) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_ball_moment_against_monte_carlo():
    rng = np.random.default_rng(2024)
    ball = Ball((0.5,) * 3, 1.2)
    n = 200_000
    cube = rng.uniform(-0.7, 1.7, size=(n, 3))
    inside = rg.contains(ball, cube)
    beta = (2, 1, 0)
    vals = np.where(inside, cube[:, 0] ** 2 * cube[:, 1], 0.0) * 2.4**3
    est, se = vals.mean(), vals.std(ddof=1) / math.sqrt(n)
    assert abs(rg.moment(ball, beta) - est) <= 4 * se


def test_union_moment_is_sum():
    a = Box((0.0,), (1.0,))
    b = Ball((5.0,), 1.0)
    u = UnionRegion((a, b))
    for beta in [(0,), (1,), (2,)]:
        assert rg.moment(u, beta) == pytest.approx(
            rg.moment(a, beta) + rg.moment(b, beta), rel=1e-13
        )


def test_moment_cap_and_dim_checks():
    box = Box((0.0,), (1.0,))
    with pytest.raises(ValidationError):
        rg.moment(box, (rg.MOMENT_CAP + 1,))
    with pytest.raises(ValidationError):
        rg.moment(box, (1, 1))
    assert math.isfinite(rg.moment(box, (rg.MOMENT_CAP,)))


# ------------------------------------------------------------ serialization


def test_round_trip_dicts():
    regions = [
        Box((0.0, -1.0), (1.0, 1.5)),
        Ball((0.25,), 2.0),
        UnionRegion((Box((0.0,), (1.0,)), Ball((4.0,), 0.5))),
    ]
    for region in regions:
        obj = rg.region_to_dict(region)
        back = rg.region_from_dict(json.loads(json.dumps(obj)))
        assert back == region


def test_region_from_json_inline_and_path(tmp_path):
    text = '{"type": "ball", "center": [0.0, 0.0], "radius": 1.5}'
    assert rg.region_from_json(text) == Ball((0.0, 0.0), 1.5)
    p = tmp_path / "region.json"
    p.write_text(text)
    assert rg.region_from_json(str(p)) == Ball((0.0, 0.0), 1.5)
    with pytest.raises(ValidationError):
        rg.region_from_json('{"type": "cone", "apex": [0]}')
    with pytest.raises(ValidationError):
        rg.region_from_json('{"not json')
    with pytest.raises(ValidationError):
        rg.region_from_json('{"type": "box", "lower": [0.0]}')


# ------------------------------------------------------------- properties


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    lower=st.lists(finite, min_size=1, max_size=3),
    widths=st.lists(st.floats(0.1, 3), min_size=1, max_size=3),
)
def test_box_volume_property(lower, widths):
    d = min(len(lower), len(widths))
    lo = tuple(lower[:d])
    hi = tuple(l + w for l, w in zip(lo, widths[:d]))
    box = Box(lo, hi)
    vol = rg.volume(box)
    expected = math.prod(h - l for l, h in zip(lo, hi))
    assert vol == pytest.approx(expected, rel=1e-12)
    assert rg.moment(box, (0,) * d) == vol


@settings(max_examples=40, deadline=None)
@given(center=st.lists(finite, min_size=1, max_size=3), radius=st.floats(0.1, 3))
def test_ball_odd_central_moment_property(center, radius):
    ball = Ball(tuple(center), radius)
    d = ball.dim
    beta = (1,) + (0,) * (d - 1)
    # integral of x_1 over the ball = c_1 * volume
    assert rg.moment(ball, beta) == pytest.approx(
        center[0] * rg.volume(ball), rel=1e-10, abs=1e-10
    )
