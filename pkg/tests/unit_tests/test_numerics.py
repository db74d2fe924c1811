from fractions import Fraction

import pytest
from mpmath import mp

from phi_cascade.numerics import (
    DyadicRational,
    IntervalD,
    LogPositive,
    dy_add,
    log_add,
    log_sum,
    parse_dyadic,
)


def test_dyadic_canonical_form():
    assert DyadicRational(12, -4) == DyadicRational(3, -2)
    assert DyadicRational(12, -4).mantissa == 3
    assert DyadicRational(0, 7) == DyadicRational(0)
    assert hash(DyadicRational(8)) == hash(DyadicRational(1, 3))
    assert DyadicRational(1, 3) == 8
    assert DyadicRational(-1, -1) < 0 < DyadicRational(1, -30)


def test_dyadic_hash_matches_equal_numbers():
    assert hash(DyadicRational(1)) == hash(1)
    assert hash(DyadicRational(-3, 4)) == hash(-48)
    assert hash(DyadicRational(3, -2)) == hash(0.75) == hash(Fraction(3, 4))
    assert hash(DyadicRational(0)) == hash(0)

    lookup = {1: "one", 0.5: "half", Fraction(-1, 8): "minus an eighth"}
    assert lookup[DyadicRational(1)] == "one"
    assert lookup[DyadicRational(1, -1)] == "half"
    assert lookup[DyadicRational(-1, -3)] == "minus an eighth"
    assert len({DyadicRational(2), 2, 2.0}) == 1


def test_dyadic_arithmetic():
    a = DyadicRational(3, -4)
    b = DyadicRational(5, -2)
    assert (a + b).to_fraction() == Fraction(3, 16) + Fraction(5, 4)
    assert (a - b).to_fraction() == Fraction(3, 16) - Fraction(5, 4)
    assert (a * b).to_fraction() == Fraction(15, 64)
    assert (1 - a).to_fraction() == Fraction(13, 16)
    assert a.shift(4) == 3
    assert abs(-a) == a
    assert (-a).sign() == -1
    assert a.ratio(b) == Fraction(3, 20)


def test_dy_add():
    assert dy_add(DyadicRational(1, -1), DyadicRational(1, -2)) == DyadicRational(3, -2)
    assert dy_add(DyadicRational(5, -3), DyadicRational(0)) == DyadicRational(5, -3)
    assert dy_add(DyadicRational(1, -77), DyadicRational(1, -77)) == DyadicRational(1, -76)
    a, b, c = DyadicRational(3, -40), DyadicRational(-7, 12), DyadicRational(5, -3)
    assert dy_add(dy_add(a, b), c) == dy_add(a, dy_add(b, c))
    assert (a + b) - b == a


def test_floor_and_ceil_scaled():
    def test_case(value, e, floor, ceil):
        x = DyadicRational.from_fraction(value)
        assert x.floor_scaled(e) == floor
        assert x.ceil_scaled(e) == ceil

    test_case(Fraction(5, 8), -2, 2, 3)
    test_case(Fraction(1, 2), -2, 2, 2)
    test_case(Fraction(-5, 8), -2, -3, -2)
    test_case(Fraction(7), 1, 3, 4)


def test_parse_dyadic():
    assert parse_dyadic("3*2^-5") == DyadicRational(3, -5)
    assert parse_dyadic("2^-8") == DyadicRational(1, -8)
    assert parse_dyadic("-2^-1") == DyadicRational(-1, -1)
    assert parse_dyadic("41/64") == DyadicRational(41, -6)
    assert parse_dyadic("-7") == -7
    with pytest.raises(ValueError, match="decimal"):
        parse_dyadic("0.5")
    with pytest.raises(ValueError):
        parse_dyadic("1/3")
    with pytest.raises(ValueError):
        parse_dyadic("two")


def test_from_float_is_exact():
    assert DyadicRational.from_float(0.375) == DyadicRational(3, -3)
    assert DyadicRational.from_float(0.1).to_fraction() == Fraction(0.1)


def test_dyadic_json():
    x = DyadicRational(-123456789123456789, -200)
    assert DyadicRational.from_json(x.to_json()) == x
    assert str(DyadicRational(1, -5)) == "2^-5"
    assert str(DyadicRational(3, -4)) == "3*2^-4"


def test_log_positive_arithmetic():
    a = LogPositive.from_real(3)
    b = LogPositive.from_real(5)
    assert float(a * b) == pytest.approx(15, rel=1e-15)
    assert float(b / a) == pytest.approx(5 / 3, rel=1e-15)
    assert float(a + b) == pytest.approx(8, rel=1e-15)
    assert a < b
    assert LogPositive.zero() < a
    assert (LogPositive.zero() * a).is_zero
    assert (a + LogPositive.zero()) == a
    with pytest.raises(ZeroDivisionError):
        a / LogPositive.zero()
    with pytest.raises(ValueError):
        LogPositive.from_real(-1)


def test_log_positive_handles_tiny_masses():
    # exp(-2^40) underflows every float format
    tiny = LogPositive(-(mp.mpf(2) ** 40))
    assert float(tiny) == 0.0
    assert not tiny.is_zero
    doubled = tiny + tiny
    assert doubled.ln_value - tiny.ln_value == pytest.approx(float(mp.log(2)), abs=1e-15)
    assert LogPositive.from_json(tiny.to_json()) == tiny
    assert LogPositive.from_json(LogPositive.zero().to_json()).is_zero


def test_log_sum_is_order_independent():
    values = [LogPositive.from_real(v) for v in (1e-300, 2.5, 7, 1e-20, 3)]
    forward = log_sum(values)
    backward = log_sum(reversed(values))
    assert forward.ln_value == backward.ln_value
    assert float(forward) == pytest.approx(12.5, rel=1e-15)
    assert log_sum([]).is_zero
    assert log_add(LogPositive.zero(), values[1]) == values[1]


def test_interval_operations():
    unit = IntervalD.unit()
    J = IntervalD(DyadicRational(-1, -2), DyadicRational(3, -2))
    assert unit.contains_interval(J)
    assert J.length == 1
    assert J.midpoint == DyadicRational(1, -2)
    assert J.reflect() == IntervalD(DyadicRational(-3, -2), DyadicRational(1, -2))
    assert J.dilate(2) == IntervalD(DyadicRational(-3, -2), DyadicRational(5, -2))
    assert unit.intersect(J.translate(1)) == IntervalD(DyadicRational(3, -2), DyadicRational(1))
    assert unit.intersect(IntervalD(DyadicRational(1), DyadicRational(2))) is None
    assert unit.distance_to_complement(J) == DyadicRational(1, -2)
    assert IntervalD.ball(0, DyadicRational(1, -3)) == IntervalD(
        DyadicRational(-1, -3), DyadicRational(1, -3)
    )
    assert IntervalD.from_json(J.to_json()) == J
    with pytest.raises(ValueError):
        IntervalD(DyadicRational(1), DyadicRational(0))


def test_log_add_spot_values():
    one = LogPositive.one()
    assert abs(log_add(one, one).ln_value - mp.log(2)) < 1e-30
    far = log_add(LogPositive(mp.mpf(-1000)), LogPositive(mp.mpf(-2000)))
    assert abs(far.ln_value + 1000) < 1e-30
    assert log_add(one, LogPositive(mp.mpf(-3))) == log_add(LogPositive(mp.mpf(-3)), one)
    assert abs(log_sum([one, one, LogPositive.from_real(2)]).ln_value - mp.log(4)) < 1e-30
