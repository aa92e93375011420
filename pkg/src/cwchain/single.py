"""Single Curie-Weiss and random-field Curie-Weiss systems.

These provide the boundary values of the forced chain and the oracles the
chain isotherm is compared against. All functions evaluate at the
precision of the enclosing :func:`~cwchain.precision.working_precision`
block, or at ``precision`` digits when given.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import gmpy2

from .core import FieldSpec
from .errors import ConvergenceError, ValidationError
from .precision import eps, real, working_precision

MAX_SCALAR_ITERS = 20000


def binary_entropy(m):
    """``H(m)`` in nats for a spin with mean ``m``, with ``0 ln 0 = 0``."""
    m = real(m)
    if abs(m) > 1:
        raise ValidationError(f"magnetisation {m} outside [-1, 1]")
    out = gmpy2.mpfr(0)
    for q in ((1 + m) / 2, (1 - m) / 2):
        if q > 0:
            out -= q * gmpy2.log(q)
    return out


def phi(m, J, precision: int | None = None):
    """Curie-Weiss potential ``-(J/2) m^2 - H(m)``."""
    with working_precision(precision):
        m, J = real(m), real(J)
        return -J * m * m / 2 - binary_entropy(m)


def equation_of_state(m, J, precision: int | None = None):
    """Single-system isotherm ``h(m) = -J m + atanh(m)``, the derivative of :func:`phi`."""
    with working_precision(precision):
        m, J = real(m), real(J)
        if abs(m) >= 1:
            raise ValidationError(f"equation of state diverges at |m| = {abs(m)} >= 1")
        return -J * m + gmpy2.atanh(m)


# --- generic scalar fixed points ------------------------------------------

def _field_pairs(field_spec: FieldSpec | None):
    if field_spec is None:
        return [(gmpy2.mpfr(0), gmpy2.mpfr(1))]
    return [(gmpy2.mpfr(H), gmpy2.mpfr(p)) for H, p in field_spec.pairs()]


def mean_tanh(x, pairs):
    """``T(x) = sum_a p_a tanh(x + H_a)`` and its derivative."""
    t = gmpy2.mpfr(0)
    dt = gmpy2.mpfr(0)
    for H, p in pairs:
        th = gmpy2.tanh(x + H)
        t += p * th
        dt += p * (1 - th * th)
    return t, dt


def stable_fixed_point(J, h, sign: int, pairs, start=None, tol=None):
    """Extreme fixed point of ``m = T(J m + h)`` reached from ``m = sign``.

    Iterating ``m <- T(J m + h)`` from ``+1`` (``-1``) decreases (increases)
    monotonically to the largest (smallest) fixed point, which is stable.
    Once steps are small, Newton steps replace the slow iteration; a Newton
    step is only kept while the step lengths keep shrinking.
    """
    J, h = real(J), real(h)
    tol = eps() * 64 if tol is None else tol
    m = gmpy2.mpfr(sign if start is None else start)
    prev_step = None
    for _ in range(MAX_SCALAR_ITERS):
        t, dt = mean_tanh(J * m + h, pairs)
        f = m - t
        slope = 1 - J * dt
        if abs(f) <= tol:
            return m
        fp_step = -f
        step = fp_step
        if prev_step is not None and abs(fp_step) < gmpy2.mpfr("1e-3") and slope > 0:
            newton = -f / slope
            if abs(newton) <= 2 * abs(prev_step):
                step = newton
        m_new = m + step
        if m_new > 1:
            m_new = gmpy2.mpfr(1)
        elif m_new < -1:
            m_new = gmpy2.mpfr(-1)
        if m_new == m:
            return m
        prev_step = step
        m = m_new
    raise ConvergenceError(f"scalar fixed point did not converge (J={J}, h={h}, branch {sign:+d})")


def fixed_point_slope(m, J, h, pairs):
    """``dm/dh`` along a stable branch: ``T' / (1 - J T')``."""
    _, dt = mean_tanh(real(J) * m + real(h), pairs)
    return dt / (1 - real(J) * dt)


def equilibrium_magnetizations(J, h=0, precision: int | None = None, field_spec: FieldSpec | None = None):
    """Stable solutions ``(m_-(h), m_+(h))`` of the Curie-Weiss equation.

    Returns the smallest and largest fixed points of ``m = tanh(J m + h)``
    (or of its random-field average when ``field_spec`` is given). They
    coincide when the stable solution is unique.
    """
    with working_precision(precision):
        pairs = _field_pairs(field_spec)
        lo = stable_fixed_point(J, h, -1, pairs)
        hi = stable_fixed_point(J, h, +1, pairs)
        return lo, hi


@dataclass(frozen=True)
class SpinodalData:
    m_sp: gmpy2.mpfr
    h_sp: gmpy2.mpfr
    m_plus: gmpy2.mpfr
    m_minus: gmpy2.mpfr


def spinodal(J, precision: int | None = None) -> SpinodalData:
    """Spinodal point of the single system for ``J > 1``.

    ``m_sp = sqrt((J-1)/J)`` and ``h_sp = -h(m_sp)`` from the equation of
    state. The closed form sometimes quoted for ``h_sp`` is not used; see
    the README.
    """
    with working_precision(precision):
        J = real(J)
        if J <= 1:
            raise ValidationError(f"spinodal requires J > 1, got J = {J}")
        m_sp = gmpy2.sqrt((J - 1) / J)
        h_sp = -equation_of_state(m_sp, J)
        m_minus, m_plus = equilibrium_magnetizations(J, 0)
        return SpinodalData(m_sp=m_sp, h_sp=h_sp, m_plus=m_plus, m_minus=m_minus)


def maxwell_envelope(J, m, precision: int | None = None):
    """Convex envelope of :func:`phi`: flat at ``phi(m_+)`` on ``[m_-, m_+]``."""
    with working_precision(precision):
        J, m = real(J), real(m)
        if abs(m) > 1:
            raise ValidationError(f"magnetisation {m} outside [-1, 1]")
        if J <= 1:
            return phi(m, J)
        _, m_plus = equilibrium_magnetizations(J, 0)
        if abs(m) < m_plus:
            return phi(m_plus, J)
        return phi(m, J)


# --- random-field system ---------------------------------------------------

def _as_spec(field_spec) -> FieldSpec:
    if isinstance(field_spec, FieldSpec):
        return field_spec
    values, probs = field_spec
    return FieldSpec.build(values, probs)


def rfcw_equation_of_state(J, field_spec, h=0, precision: int | None = None):
    """Stable fixed points ``(m_-, m_+)`` of ``m = sum_a p_a tanh(J m + h + H_a)``."""
    with working_precision(precision):
        spec = _as_spec(field_spec)
        return equilibrium_magnetizations(J, h, field_spec=spec)


def inverse_mean_tanh(m, pairs):
    """Solve ``sum_a p_a tanh(x + H_a) = m`` for ``x`` (bracketed Newton)."""
    m = real(m)
    if abs(m) >= 1:
        raise ValidationError(f"magnetisation {m} outside (-1, 1)")
    spread = max(abs(H) for H, _ in pairs)
    centre = gmpy2.atanh(m)
    lo, hi = centre - spread - 1, centre + spread + 1
    x = centre
    tol = 64 * eps()
    for _ in range(4 * gmpy2.get_context().precision + 100):
        t, dt = mean_tanh(x, pairs)
        f = t - m
        if f > 0:
            hi = x
        else:
            lo = x
        if abs(f) <= tol * (1 - abs(m) + tol):
            return x
        x_new = x - f / dt if dt > 0 else (lo + hi) / 2
        if not lo < x_new < hi:
            x_new = (lo + hi) / 2
        if x_new == x:
            return x
        x = x_new
    raise ConvergenceError(f"inverse of the averaged tanh did not converge at m={m}")


def rfcw_isotherm(m, J, field_spec, precision: int | None = None):
    """Random-field isotherm ``h(m) = -J m + T^{-1}(m)``."""
    with working_precision(precision):
        pairs = _field_pairs(_as_spec(field_spec))
        return -real(J) * real(m) + inverse_mean_tanh(m, pairs)


def rfcw_phi(m, J, field_spec, precision: int | None = None):
    """Random-field potential with the per-field magnetisations at their
    conditional optimum ``m_a = tanh(x + H_a)``."""
    with working_precision(precision):
        return site_potential(real(m), real(J), _field_pairs(_as_spec(field_spec)))


def site_potential(m, J, pairs):
    """Per-site potential for a list of field pairs (plain CW when trivial)."""
    if len(pairs) == 1 and pairs[0][0] == 0:
        return -J * m * m / 2 - binary_entropy(m)
    if abs(m) == 1:
        return -J / 2 - m * sum((p * H for H, p in pairs), gmpy2.mpfr(0))
    x = inverse_mean_tanh(m, pairs)
    out = -J * m * m / 2
    for H, p in pairs:
        ma = gmpy2.tanh(x + H)
        out -= p * (H * ma + binary_entropy(ma))
    return out


@dataclass(frozen=True)
class SingleSystem:
    """Convenience wrapper bundling ``J`` and an optional field distribution."""

    J: gmpy2.mpfr
    field_spec: FieldSpec | None = None

    @classmethod
    def build(cls, J, field_values: Sequence | None = None, field_probs: Sequence | None = None):
        spec = None if field_values is None else FieldSpec.build(field_values, field_probs)
        return cls(real(J), spec)

    def potential(self, m):
        return site_potential(real(m), self.J, _field_pairs(self.field_spec))

    def isotherm(self, m):
        if self.field_spec is None:
            return equation_of_state(m, self.J)
        return rfcw_isotherm(m, self.J, self.field_spec)

    def fixed_points(self, h=0):
        return equilibrium_magnetizations(self.J, h, field_spec=self.field_spec)
