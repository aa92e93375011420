import gmpy2
import mpmath
import pytest

from cwchain.errors import ValidationError
from cwchain.precision import (
    bits_for,
    check_digits,
    current_digits,
    default_digits,
    eps,
    format_real,
    from_mpmath,
    real,
    to_mpmath,
    working_precision,
)


def test_bits_cover_digits():
    for d in (15, 30, 64, 128):
        assert 2.0 ** (1 - bits_for(d)) < 10.0 ** -d


def test_context_sets_both_libraries():
    with working_precision(50):
        assert gmpy2.get_context().precision == bits_for(50)
        assert mpmath.mp.prec == bits_for(50)
        assert default_digits() == 50
        assert current_digits() >= 50


def test_env_default(monkeypatch):
    monkeypatch.setenv("CWCHAIN_PRECISION", "40")
    assert default_digits() == 40
    monkeypatch.setenv("CWCHAIN_PRECISION", "abc")
    with pytest.raises(ValidationError):
        default_digits()


@pytest.mark.parametrize("bad", [14, 0, -3, 20.5])
def test_check_digits_rejects(bad):
    with pytest.raises(ValidationError):
        check_digits(bad)


def test_decimal_strings_parse_at_full_precision():
    with working_precision(40):
        x = real("1.05")
        assert abs(x - gmpy2.mpfr(105) / 100) <= 2 * eps()
        assert abs(real(1.05) - x) > gmpy2.mpfr("1e-20")


def test_mpmath_roundtrip_exact():
    with working_precision(60):
        x = gmpy2.const_pi() / 7
        assert from_mpmath(to_mpmath(x)) == x


def test_format_real():
    assert format_real(gmpy2.mpfr("-0.0015"), 3) == "-1.50e-03"
    assert format_real(0, 3) == "0.00e+00"
