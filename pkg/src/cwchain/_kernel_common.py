"""Types shared by the compiled and pure-Python kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

import gmpy2


@dataclass
class KernelState:
    """Core magnetisations, field and forced boundary values.

    ``m_left``/``m_right`` are ``None`` for free (canonical) boundaries.
    """

    m: list
    h: gmpy2.mpfr
    m_left: gmpy2.mpfr | None = None
    m_right: gmpy2.mpfr | None = None

    def copy(self) -> "KernelState":
        return KernelState(list(self.m), self.h, self.m_left, self.m_right)


@dataclass
class KernelResult:
    state: KernelState
    iterations: int
    step: float
    converged: bool
    clamps: int = 0
    history: list = field(default_factory=list)
    message: str = ""


def boundary_weights(coeffs: list, n: int) -> tuple[list, list]:
    """Coupling of each core site to the left and right forced blocks.

    ``coeffs[k]`` is ``(J/w) g_k``. Site ``i`` sees forced sites ``j < 0``
    (left) and ``j >= n`` (right) within ``R = len(coeffs) - 1``.
    """
    R = len(coeffs) - 1
    zero = gmpy2.mpfr(0)
    left = []
    right = []
    for i in range(n):
        wl = zero
        for j in range(i - R, 0):
            wl = wl + coeffs[i - j]
        wr = zero
        for j in range(n, i + R + 1):
            wr = wr + coeffs[j - i]
        left.append(wl)
        right.append(wr)
    return left, right


def to_hex(x) -> str:
    """Exact base-16 text of an mpfr, readable by ``mpfr_set_str``."""
    x = gmpy2.mpfr(x)
    if gmpy2.is_zero(x):
        return "0"
    digits, exp, _ = x.digits(16)
    if digits[0] == "-":
        return f"-0.{digits[1:]}@{exp}"
    return f"0.{digits}@{exp}"


def from_hex(s: str, bits: int):
    return gmpy2.mpfr(s, bits, 16)
