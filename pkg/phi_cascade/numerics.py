import re
import sys
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Iterable, Union

from mpmath import mp

# 113 bits is the quadruple-precision significand. Masses at generation k have
# ln ~ -2^k, so doubles lose every digit of relative information by k ~ 17.
mp.prec = 113

LN_DIGITS = 40

_HASH_MODULUS = sys.hash_info.modulus
_HASH_BITS = _HASH_MODULUS.bit_length()

Real = Union[int, float, Fraction, "DyadicRational"]


class CascadeError(Exception):
    pass


class DomainError(CascadeError, ValueError):
    """An argument lies outside [-1, 1) or outside the domain of an operation."""


class QuadratureError(CascadeError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class PreconditionError(CascadeError, ValueError):
    """A checker was called on a configuration that violates its hypotheses."""


class InfeasibleScheduleError(CascadeError, ValueError):
    pass


@total_ordering
@dataclass(frozen=True, eq=True)
class DyadicRational:
    """
    Exact binary rational mantissa * 2^exponent.

    Canonical form (odd mantissa, or zero with exponent 0) is enforced on
    construction, so equality is structural. Hashes agree with the int, float
    and Fraction of the same value.
    """

    mantissa: int
    exponent: int = 0

    def __post_init__(self):
        m, e = int(self.mantissa), int(self.exponent)
        if m == 0:
            e = 0
        else:
            trailing = (m & -m).bit_length() - 1
            m >>= trailing
            e += trailing
        object.__setattr__(self, "mantissa", m)
        object.__setattr__(self, "exponent", e)

    # Constructors
    @classmethod
    def two_pow(cls, k: int) -> "DyadicRational":
        return cls(1, k)

    @classmethod
    def from_fraction(cls, value: Fraction) -> "DyadicRational":
        den = value.denominator
        if den & (den - 1):
            raise ValueError(f"{value} has a non-dyadic denominator")
        return cls(value.numerator, -(den.bit_length() - 1))

    @classmethod
    def from_float(cls, value: float) -> "DyadicRational":
        num, den = float(value).as_integer_ratio()
        return cls.from_fraction(Fraction(num, den))

    @classmethod
    def coerce(cls, value: Real) -> "DyadicRational":
        if isinstance(value, DyadicRational):
            return value
        if isinstance(value, bool):
            raise TypeError("bool is not a dyadic rational")
        if isinstance(value, int):
            return cls(value, 0)
        if isinstance(value, Fraction):
            return cls.from_fraction(value)
        if isinstance(value, float):
            return cls.from_float(value)
        raise TypeError(f"Cannot convert {type(value).__name__} to DyadicRational")

    # Arithmetic
    def __add__(self, other: Real) -> "DyadicRational":
        o = _coerce_or_none(other)
        if o is None:
            return NotImplemented
        e = min(self.exponent, o.exponent)
        m = (self.mantissa << (self.exponent - e)) + (o.mantissa << (o.exponent - e))
        return DyadicRational(m, e)

    __radd__ = __add__

    def __neg__(self) -> "DyadicRational":
        return DyadicRational(-self.mantissa, self.exponent)

    def __sub__(self, other: Real) -> "DyadicRational":
        o = _coerce_or_none(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other: Real) -> "DyadicRational":
        return DyadicRational.coerce(other) - self

    def __mul__(self, other: Real) -> "DyadicRational":
        o = _coerce_or_none(other)
        if o is None:
            return NotImplemented
        return DyadicRational(
            self.mantissa * o.mantissa, self.exponent + o.exponent
        )

    __rmul__ = __mul__

    def __abs__(self) -> "DyadicRational":
        return DyadicRational(abs(self.mantissa), self.exponent)

    def shift(self, n: int) -> "DyadicRational":
        """Multiply by 2^n."""
        return DyadicRational(self.mantissa, self.exponent + n)

    def sign(self) -> int:
        return (self.mantissa > 0) - (self.mantissa < 0)

    def __eq__(self, other) -> bool:
        o = _coerce_or_none(other)
        if o is None:
            return NotImplemented
        return self.mantissa == o.mantissa and self.exponent == o.exponent

    def __hash__(self) -> int:
        # 2^bits = 1 mod the hash modulus, so 2^e reduces to 2^(e mod bits)
        h = ((abs(self.mantissa) % _HASH_MODULUS) << (self.exponent % _HASH_BITS)) % _HASH_MODULUS
        h = -h if self.mantissa < 0 else h
        return -2 if h == -1 else h

    def __lt__(self, other: Real) -> bool:
        o = _coerce_or_none(other)
        if o is None:
            return NotImplemented
        return (self - o).mantissa < 0

    def floor_scaled(self, e: int) -> int:
        """floor(self * 2^-e), used to find which cell of a 2^e grid holds a point."""
        shift = self.exponent - e
        if shift >= 0:
            return self.mantissa << shift
        return self.mantissa >> -shift

    def ceil_scaled(self, e: int) -> int:
        return -((-self).floor_scaled(e))

    def ratio(self, other: "DyadicRational") -> Fraction:
        return self.to_fraction() / other.to_fraction()

    # Conversions
    def to_fraction(self) -> Fraction:
        if self.exponent >= 0:
            return Fraction(self.mantissa << self.exponent)
        return Fraction(self.mantissa, 1 << -self.exponent)

    def to_mpf(self):
        return mp.mpf((self.mantissa, self.exponent))

    def __float__(self) -> float:
        return float(self.to_fraction())

    def log2(self) -> float:
        assert self.mantissa > 0, f"log2 of non-positive {self}"
        return float(mp.log(self.to_mpf(), 2))

    def to_json(self) -> dict:
        return {"m": str(self.mantissa), "e": self.exponent}

    @classmethod
    def from_json(cls, data: dict) -> "DyadicRational":
        return cls(int(data["m"]), int(data["e"]))

    def __str__(self) -> str:
        if self.exponent >= 0:
            return str(self.mantissa << self.exponent)
        if self.mantissa == 1:
            return f"2^{self.exponent}"
        return f"{self.mantissa}*2^{self.exponent}"


def _coerce_or_none(value) -> DyadicRational | None:
    try:
        return DyadicRational.coerce(value)
    except (TypeError, ValueError, OverflowError):
        return None


_INT = re.compile(r"^([+-]?\d+)$")
_MANTISSA_POWER = re.compile(r"^([+-]?\d+)\*2\^([+-]?\d+)$")
_POWER = re.compile(r"^([+-]?)2\^([+-]?\d+)$")
_RATIO = re.compile(r"^([+-]?\d+)/(\d+)$")


def parse_dyadic(text: str) -> DyadicRational:
    """
    Parse a dyadic literal: an integer, `m*2^e`, `2^-k` (optionally signed) or
    `p/q` with q a power of two. Decimals are rejected.
    """
    s = text.replace(" ", "")
    if match := _INT.match(s):
        return DyadicRational(int(match.group(1)))
    if match := _MANTISSA_POWER.match(s):
        return DyadicRational(int(match.group(1)), int(match.group(2)))
    if match := _POWER.match(s):
        sign = -1 if match.group(1) == "-" else 1
        return DyadicRational(sign, int(match.group(2)))
    if match := _RATIO.match(s):
        return DyadicRational.from_fraction(
            Fraction(int(match.group(1)), int(match.group(2)))
        )
    if "." in s or "e" in s.lower():
        raise ValueError(f"decimal literal {text!r} is not allowed; use m*2^e")
    raise ValueError(f"cannot parse {text!r} as a dyadic rational")


def dy_add(a: DyadicRational, b: DyadicRational) -> DyadicRational:
    return a + b


@total_ordering
@dataclass(frozen=True, eq=True)
class LogPositive:
    """A nonnegative real stored as its natural log, with an exact-zero flag."""

    ln_value: object = 0
    is_zero: bool = False

    def __post_init__(self):
        ln = mp.mpf(0) if self.is_zero else mp.mpf(self.ln_value)
        if not self.is_zero and not mp.isfinite(ln):
            if ln == mp.ninf:
                object.__setattr__(self, "is_zero", True)
                ln = mp.mpf(0)
            else:
                raise ValueError(f"ln_value must be finite, got {ln}")
        object.__setattr__(self, "ln_value", ln)

    @classmethod
    def zero(cls) -> "LogPositive":
        return cls(0, is_zero=True)

    @classmethod
    def one(cls) -> "LogPositive":
        return cls(0)

    @classmethod
    def from_real(cls, value) -> "LogPositive":
        if isinstance(value, DyadicRational):
            value = value.to_mpf()
        elif isinstance(value, Fraction):
            value = mp.mpf(value.numerator) / value.denominator
        x = mp.mpf(value)
        if x < 0:
            raise ValueError(f"LogPositive needs a nonnegative value, got {value}")
        if x == 0:
            return cls.zero()
        return cls(mp.log(x))

    def __mul__(self, other: "LogPositive") -> "LogPositive":
        if self.is_zero or other.is_zero:
            return LogPositive.zero()
        return LogPositive(self.ln_value + other.ln_value)

    def __truediv__(self, other: "LogPositive") -> "LogPositive":
        if other.is_zero:
            raise ZeroDivisionError("division by an exact-zero LogPositive")
        if self.is_zero:
            return LogPositive.zero()
        return LogPositive(self.ln_value - other.ln_value)

    def __add__(self, other: "LogPositive") -> "LogPositive":
        return log_add(self, other)

    def __lt__(self, other: "LogPositive") -> bool:
        if other.is_zero:
            return False
        if self.is_zero:
            return True
        return self.ln_value < other.ln_value

    def scaled(self, factor) -> "LogPositive":
        """Multiply by a positive real factor."""
        return self * LogPositive.from_real(factor)

    def to_mpf(self):
        return mp.mpf(0) if self.is_zero else mp.exp(self.ln_value)

    def __float__(self) -> float:
        return float(self.to_mpf())

    def ln_float(self) -> float:
        return float("-inf") if self.is_zero else float(self.ln_value)

    def to_json(self) -> dict:
        if self.is_zero:
            return {"zero": True}
        return {"ln": mp.nstr(self.ln_value, LN_DIGITS)}

    @classmethod
    def from_json(cls, data: dict) -> "LogPositive":
        if data.get("zero"):
            return cls.zero()
        return cls(mp.mpf(str(data["ln"])))

    def __str__(self) -> str:
        return "0" if self.is_zero else f"exp({mp.nstr(self.ln_value, 20)})"


def log_add(a: LogPositive, b: LogPositive) -> LogPositive:
    """ln(e^a + e^b), factoring out the larger term."""
    if a.is_zero:
        return b
    if b.is_zero:
        return a
    hi, lo = (a, b) if a.ln_value >= b.ln_value else (b, a)
    return LogPositive(hi.ln_value + mp.log1p(mp.exp(lo.ln_value - hi.ln_value)))


def log_sum(xs: Iterable[LogPositive]) -> LogPositive:
    """
    Sum in the log domain. Terms are sorted before accumulating so that every
    permutation of the same multiset gives the same bits.
    """
    values = sorted((x.ln_value for x in xs if not x.is_zero), reverse=True)
    if not values:
        return LogPositive.zero()
    hi = values[0]
    return LogPositive(hi + mp.log(mp.fsum(mp.exp(v - hi) for v in values)))


@dataclass(frozen=True)
class IntervalD:
    """Half-open interval [left, right) with dyadic endpoints."""

    left: DyadicRational
    right: DyadicRational

    def __post_init__(self):
        left = DyadicRational.coerce(self.left)
        right = DyadicRational.coerce(self.right)
        if not left < right:
            raise ValueError(f"empty interval [{left}, {right})")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @classmethod
    def unit(cls) -> "IntervalD":
        """The support [-1, 1)."""
        return cls(DyadicRational(-1), DyadicRational(1))

    @classmethod
    def ball(cls, x: Real, r: Real) -> "IntervalD":
        x, r = DyadicRational.coerce(x), DyadicRational.coerce(r)
        return cls(x - r, x + r)

    @property
    def length(self) -> DyadicRational:
        return self.right - self.left

    @property
    def midpoint(self) -> DyadicRational:
        return (self.left + self.right).shift(-1)

    def contains_point(self, x: Real) -> bool:
        return self.left <= x < self.right

    def contains_interval(self, other: "IntervalD") -> bool:
        return self.left <= other.left and other.right <= self.right

    def intersect(self, other: "IntervalD") -> "IntervalD | None":
        left = max(self.left, other.left)
        right = min(self.right, other.right)
        if left < right:
            return IntervalD(left, right)
        return None

    def translate(self, offset: Real) -> "IntervalD":
        return IntervalD(self.left + offset, self.right + offset)

    def dilate(self, factor: Real) -> "IntervalD":
        """Scale about the midpoint, e.g. dilate(5) gives 5J."""
        half = (self.length * factor).shift(-1)
        mid = self.midpoint
        return IntervalD(mid - half, mid + half)

    def reflect(self) -> "IntervalD":
        """Image under t -> -t."""
        return IntervalD(-self.right, -self.left)

    def distance_to_boundary(self, x: Real) -> DyadicRational:
        return min(x - self.left, self.right - x)

    def distance_to_complement(self, inner: "IntervalD") -> DyadicRational:
        """d(inner, boundary of self) for inner contained in self."""
        assert self.contains_interval(inner), f"{inner} is not inside {self}"
        return min(inner.left - self.left, self.right - inner.right)

    def to_json(self) -> dict:
        return {"left": self.left.to_json(), "right": self.right.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "IntervalD":
        return cls(
            DyadicRational.from_json(data["left"]),
            DyadicRational.from_json(data["right"]),
        )

    def __str__(self) -> str:
        return f"[{self.left}, {self.right})"
