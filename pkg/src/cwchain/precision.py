"""Run-level working precision and scalar conversion.

Scalars are :class:`gmpy2.mpfr` values. A precision is given in significant
decimal digits and applies to one whole computation; enter it with
:func:`working_precision` so that gmpy2 and mpmath agree on the bit count.
"""

from __future__ import annotations

import math
import os
from contextlib import contextmanager
from contextvars import ContextVar
from fractions import Fraction

import gmpy2
import mpmath

from .errors import ValidationError

Real = gmpy2.mpfr

DEFAULT_DIGITS = 30
MIN_DIGITS = 15
ENV_VAR = "CWCHAIN_PRECISION"
_GUARD_BITS = 4
_LOG2_10 = math.log2(10)
_ACTIVE: ContextVar[int | None] = ContextVar("cwchain_active_digits", default=None)


def default_digits() -> int:
    """Precision of the enclosing :func:`working_precision` block, else the
    default (overridable through ``CWCHAIN_PRECISION``)."""
    active = _ACTIVE.get()
    if active is not None:
        return active
    raw = os.environ.get(ENV_VAR)
    if not raw:
        return DEFAULT_DIGITS
    try:
        digits = int(raw)
    except ValueError:
        raise ValidationError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    return check_digits(digits)


def check_digits(digits: int) -> int:
    if int(digits) != digits or digits < MIN_DIGITS:
        raise ValidationError(f"precision must be an integer >= {MIN_DIGITS} digits, got {digits}")
    return int(digits)


def bits_for(digits: int) -> int:
    """Significand bits giving a relative rounding error below ``10**-digits``."""
    return math.ceil(digits * _LOG2_10) + _GUARD_BITS


def current_bits() -> int:
    return gmpy2.get_context().precision


def current_digits() -> int:
    return int((current_bits() - _GUARD_BITS) / _LOG2_10)


@contextmanager
def working_precision(digits: int | None = None):
    """Set gmpy2 and mpmath to ``digits`` decimal digits inside the block."""
    digits = default_digits() if digits is None else check_digits(digits)
    bits = bits_for(digits)
    token = _ACTIVE.set(digits)
    try:
        with gmpy2.context(precision=bits), mpmath.workprec(bits):
            yield digits
    finally:
        _ACTIVE.reset(token)


def real(x) -> gmpy2.mpfr:
    """Convert ``x`` to an mpfr at the current precision.

    Strings are parsed in decimal at full precision, so ``real("1.05")`` is
    closer to 1.05 than ``real(1.05)``.
    """
    if isinstance(x, gmpy2.mpfr):
        return gmpy2.mpfr(x)
    if isinstance(x, Fraction):
        return gmpy2.mpfr(x.numerator) / x.denominator
    if isinstance(x, mpmath.mpf):
        return from_mpmath(x)
    if isinstance(x, str):
        try:
            return gmpy2.mpfr(x.strip())
        except ValueError:
            raise ValidationError(f"not a number: {x!r}") from None
    if isinstance(x, (int, float, gmpy2.mpz, gmpy2.mpq)):
        return gmpy2.mpfr(x)
    raise TypeError(f"cannot convert {type(x).__name__} to a real")


def from_mpmath(x) -> gmpy2.mpfr:
    man, exp = mpmath.mpf(x).man_exp
    return gmpy2.mul_2exp(gmpy2.mpfr(man), exp)


def to_mpmath(x) -> mpmath.mpf:
    """Exact conversion of an mpfr to an mpmath number (mpmath rounds to its own precision)."""
    x = gmpy2.mpfr(x)
    if gmpy2.is_zero(x):
        return mpmath.mpf(0)
    man, exp = x.as_mantissa_exp()
    return mpmath.mpf((int(man), int(exp)))


def eps() -> gmpy2.mpfr:
    """Unit roundoff of the current context."""
    return gmpy2.mul_2exp(gmpy2.mpfr(1), 1 - current_bits())


def ulp(x=1) -> gmpy2.mpfr:
    """Spacing of representable numbers at ``x``."""
    x = gmpy2.mpfr(x)
    if gmpy2.is_zero(x):
        return eps()
    e = gmpy2.get_exp(x)
    return gmpy2.mul_2exp(gmpy2.mpfr(1), e - current_bits())


def clamp_margin(digits: int | None = None) -> gmpy2.mpfr:
    """Distance from +-1 kept before taking atanh: ``10**(5 - digits)``."""
    digits = current_digits() if digits is None else digits
    return gmpy2.mpfr(10) ** (5 - digits)


def to_float(x) -> float:
    return float(x)


def format_real(x, digits: int) -> str:
    """Scientific notation with ``digits`` significant digits, e.g. ``-1.50e-03``."""
    x = gmpy2.mpfr(x)
    if not gmpy2.is_finite(x):
        return str(x)
    if gmpy2.is_zero(x):
        return f"{0:.{digits - 1}e}"
    mant, exp, _ = x.digits(10, digits)
    sign = ""
    if mant[0] == "-":
        sign, mant = "-", mant[1:]
    return f"{sign}{mant[0]}.{mant[1:]}e{exp - 1:+03d}"
