"""Closed-form continuum oracles for the chain.

Near-critical formulas (``J -> 1+``) hold for any window through its second
moment ``kappa``; the uniform-window kink is exact in the continuum for all
``J > 1``. Values are returned at the working precision. Position arguments
``z`` may be a number or a sequence; sequences give lists.

Kinks are centred so that the profile has mean ``m`` on ``-L..L``, i.e. at
``z0 = -m L / A`` for amplitude ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
import mpmath

from .errors import ValidationError
from .precision import from_mpmath, real, to_mpmath, working_precision
from .single import equation_of_state, equilibrium_magnetizations


def _near_critical(J):
    J = real(J)
    if J <= 1:
        raise ValidationError(f"continuum kink needs J > 1, got J = {J}")
    return J


def _map(fn, z):
    if isinstance(z, (list, tuple, range)):
        return [fn(real(v)) for v in z]
    return fn(real(z))


@dataclass(frozen=True)
class KinkShape:
    """``amplitude * tanh(inverse_width * (z - center))``."""

    amplitude: gmpy2.mpfr
    inverse_width: gmpy2.mpfr
    center: gmpy2.mpfr
    J: gmpy2.mpfr
    w: int
    kappa: gmpy2.mpfr | None = None

    def __call__(self, z):
        return _map(lambda x: self.amplitude * gmpy2.tanh(self.inverse_width * (x - self.center)), z)

    def derivative(self, z, order: int = 1):
        def d(x):
            t = gmpy2.tanh(self.inverse_width * (x - self.center))
            s2 = 1 - t * t
            k = self.inverse_width
            if order == 1:
                return self.amplitude * k * s2
            if order == 2:
                return -2 * self.amplitude * k * k * t * s2
            raise ValueError("order must be 1 or 2")
        return _map(d, z)


def kink_shape(J, L: int, w: int, kappa, m=0, precision: int | None = None) -> KinkShape:
    """Near-critical kink with mean ``m`` on a chain of half-length ``L``."""
    with working_precision(precision):
        J = _near_critical(J)
        kappa = real(kappa)
        A = gmpy2.sqrt(3 * (J - 1))
        m = real(m)
        if abs(m) >= A:
            raise ValidationError(f"|m| = {abs(m)} must be below the kink amplitude {A}")
        k = gmpy2.sqrt((J - 1) / (2 * kappa)) / w
        return KinkShape(A, k, -m * L / A, J, w, kappa)


def kink_profile(J, L: int, w: int, kappa, m, z, precision: int | None = None):
    """``sqrt(3(J-1)) tanh((1/w) sqrt((J-1)/(2 kappa)) (z - z0))`` with ``z0 = -m L / sqrt(3(J-1))``."""
    with working_precision(precision):
        return kink_shape(J, L, w, kappa, m)(z)


def uniform_kink_shape(J, L: int, w: int, m=0, discrete: bool = True,
                       precision: int | None = None) -> KinkShape:
    """Uniform-window kink ``m_+ tanh((J m_+/W)(z - z0))``, ``z0 = -(m/m_+) L``.

    ``W = w`` is the continuum range. The lattice window spreads weight
    ``1/(2w+1)`` over ``2w+1`` unit cells, i.e. over ``|x| <= w + 1/2``, so with
    ``discrete=True`` the kink uses ``W = w + 1/2`` and solves the lattice
    map to ``O(1/w^2)`` instead of ``O(1/w)``.
    """
    with working_precision(precision):
        J = _near_critical(J)
        _, mp = equilibrium_magnetizations(J, 0)
        m = real(m)
        if abs(m) >= mp:
            raise ValidationError(f"|m| = {abs(m)} must be below m_+ = {mp}")
        scale = w + gmpy2.mpfr(0.5) if discrete else gmpy2.mpfr(w)
        return KinkShape(mp, J * mp / scale, -m * L / mp, J, w, real(1) / 6)


def uniform_window_kink(J, L: int, w: int, m, z, discrete: bool = True, precision: int | None = None):
    with working_precision(precision):
        return uniform_kink_shape(J, L, w, m, discrete)(z)


def layer_width(J, h, w: int, kappa, precision: int | None = None):
    """Width of the linear transition layer of the homogeneous state,
    ``w sqrt(kappa) (3(J-1))^(1/4) / sqrt(h)``, which makes the two pieces meet."""
    with working_precision(precision):
        J = _near_critical(J)
        h = abs(real(h))
        if h == 0:
            raise ValidationError("homogeneous profile needs h != 0 (use the kink at h = 0)")
        return w * gmpy2.sqrt(real(kappa)) * gmpy2.root(3 * (J - 1), 4) / gmpy2.sqrt(h)


def homogeneous_profile(J, h, L: int, w: int, kappa, z, precision: int | None = None):
    """Two-piece homogeneous profile: a linear layer next to ``z = -L``
    (``z = +L`` for ``h < 0``) joined to the plateau ``sqrt(3(J-1)) + h/(2(J-1))``."""
    with working_precision(precision):
        J = _near_critical(J)
        h = real(h)
        if h == 0:
            raise ValidationError("homogeneous profile needs h != 0 (use the kink at h = 0)")
        if h < 0:
            vals = homogeneous_profile(J, -h, L, w, kappa, _map(lambda x: -x, z))
            return [-v for v in vals] if isinstance(vals, list) else -vals
        kappa = real(kappa)
        A = gmpy2.sqrt(3 * (J - 1))
        shift = h / (2 * (J - 1))
        slope = 2 / gmpy2.sqrt(kappa) * gmpy2.root(3 * (J - 1), 4) * gmpy2.sqrt(h) / w
        top = A + shift

        def f(x):
            v = -A + shift + slope * (x + L)
            return v if v < top else top

        return _map(f, z)


# --- oscillation predictions -----------------------------------------------

@dataclass(frozen=True)
class OscillationPrediction:
    """Predicted finite-size oscillations of the free energy and isotherm.

    ``E_w``/``C_w`` split the isotherm amplitude into exponential factor
    and prefactor. For uniform windows ``E_w`` uses the all-``J`` rate
    ``pi^2 w / (J m_+)`` and ``C_w`` keeps the near-critical prefactor,
    flagged by ``prefactor_is_estimate``.
    """

    J: gmpy2.mpfr
    L: int
    w: int
    kappa: gmpy2.mpfr
    window_kind: str
    m_plus: gmpy2.mpfr
    period: gmpy2.mpfr
    amplitude_F: gmpy2.mpfr
    amplitude_h: gmpy2.mpfr
    surface_tension: gmpy2.mpfr
    barrier: gmpy2.mpfr
    exponent_rate: gmpy2.mpfr
    uniform_rate: gmpy2.mpfr | None
    E_w: gmpy2.mpfr
    C_w: gmpy2.mpfr
    prefactor_is_estimate: bool

    def free_energy_oscillation(self, m):
        """Oscillating part of ``F_L(m)``, ``-amplitude_F cos(2 pi m / period)``."""
        return -self.amplitude_F * gmpy2.cos(2 * gmpy2.const_pi() * real(m) / self.period)

    def isotherm_oscillation(self, m):
        """``d/dm`` of :meth:`free_energy_oscillation` divided by ``2L+1``."""
        return self.amplitude_h * gmpy2.sin(2 * gmpy2.const_pi() * real(m) / self.period)


def predict_oscillations(J, L: int, w: int, kappa, window_kind: str = "triangular",
                         precision: int | None = None) -> OscillationPrediction:
    with working_precision(precision):
        J = _near_critical(J)
        kappa = real(kappa)
        pi = gmpy2.const_pi()
        lo, hi = equilibrium_magnetizations(J, 0)
        period = (hi - lo) / (2 * L)
        rate = pi * pi * w * gmpy2.sqrt(2 * kappa / (J - 1))
        amp_F = 16 * (pi * w) ** 4 * kappa ** 2 * gmpy2.exp(-rate)
        amp_h = 2 * pi * amp_F / (period * (2 * L + 1))
        C = 16 * pi * (pi * w) ** 4 * kappa ** 2 / gmpy2.sqrt(3 * (J - 1))
        uniform = window_kind == "uniform"
        urate = pi * pi * w / (J * hi) if uniform else None
        E = gmpy2.exp(-urate) if uniform else gmpy2.exp(-rate)
        return OscillationPrediction(
            J=J, L=L, w=w, kappa=kappa, window_kind=window_kind, m_plus=hi, period=period,
            amplitude_F=amp_F, amplitude_h=amp_h,
            surface_tension=4 * w * (J - 1) ** gmpy2.mpfr(1.5) * gmpy2.sqrt(kappa / 2),
            barrier=2 * amp_F, exponent_rate=rate, uniform_rate=urate, E_w=E, C_w=C,
            prefactor_is_estimate=uniform,
        )


def surface_tension(J, w: int, kappa, precision: int | None = None):
    """Zero-mode free energy of the kink, ``4 w (J-1)^(3/2) sqrt(kappa/2)``."""
    with working_precision(precision):
        J = _near_critical(J)
        return 4 * w * (J - 1) ** gmpy2.mpfr(1.5) * gmpy2.sqrt(real(kappa) / 2)


def surface_tension_quadrature(J, w: int, kappa, precision: int | None = None):
    """Integral of the near-critical kink energy density.

    The density is the gradient term ``(kappa w^2 / 2) mu'^2`` plus the
    quartic potential excess ``(J-1)^2 (sigma^2 - 3)^2 / 12`` evaluated on the
    kink; its integral must equal :func:`surface_tension`.
    """
    with working_precision(precision):
        J = _near_critical(J)
        shape = kink_shape(J, 1, w, kappa, 0)
        Jm, kap = to_mpmath(J), to_mpmath(real(kappa))

        def density(x):
            mu = to_mpmath(shape(from_mpmath(x)))
            dmu = to_mpmath(shape.derivative(from_mpmath(x)))
            sigma2 = mu * mu / (Jm - 1)
            return kap * w * w / 2 * dmu ** 2 + (Jm - 1) ** 2 * (sigma2 - 3) ** 2 / 12

        width = to_mpmath(1 / shape.inverse_width)
        return from_mpmath(mpmath.quad(density, [-mpmath.inf, -width, 0, width, mpmath.inf]))


def fourier_mode(k, J, w: int, kappa, m=0, L: int = 0, precision: int | None = None):
    """Fourier coefficient of the kink free-energy density at integer ``k``.

    Returns an ``mpmath.mpc``. ``k = 0`` gives the surface tension. The
    phase is ``exp(2 pi i k z0)`` for the kink centre ``z0 = -m L / A``.
    """
    with working_precision(precision):
        J = _near_critical(J)
        kappa = to_mpmath(real(kappa))
        Jm = to_mpmath(J)
        k = mpmath.mpf(k)
        if k == 0:
            return mpmath.mpc(to_mpmath(surface_tension(J, w, real(kappa))))
        pi = mpmath.pi
        arg = k * pi ** 2 * w * mpmath.sqrt(2 * kappa / (Jm - 1))
        mag = 4 * (Jm - 1) * kappa * w * w * pi * pi * k * (1 - k * k * pi * pi * w * w * kappa / (Jm - 1))
        mag = mag / mpmath.sinh(arg)
        z0 = -to_mpmath(real(m)) * L / mpmath.sqrt(3 * (Jm - 1))
        return mag * mpmath.expj(2 * pi * k * z0)


def exact_integral_closed_form(k):
    """``(pi/6) k (8 - k^2) / sinh(k pi / 2)``, with the value ``8/3`` at ``k = 0``."""
    k = mpmath.mpf(k)
    if k == 0:
        return mpmath.mpf(8) / 3
    return mpmath.pi / 6 * k * (8 - k * k) / mpmath.sinh(k * mpmath.pi / 2)


def exact_integral_quadrature(k):
    """``int cos(k z) (1 - tanh(z)^4) dz`` by piecewise tanh-sinh quadrature.

    The integrand decays like ``8 exp(-2|z|)``, so it is cut where that
    falls below the working precision; the range is split at every half
    period of the cosine.
    """
    k = mpmath.mpf(k)
    cut = (mpmath.mp.dps + 10) * mpmath.log(10) / 2 + 2
    piece = mpmath.mpf(1) if k == 0 else min(mpmath.mpf(1), mpmath.pi / abs(k))
    n = int(mpmath.ceil(cut / piece))
    nodes = [i * piece for i in range(n + 1)]

    def f(z):
        return mpmath.cos(k * z) * (1 - mpmath.tanh(z) ** 4)

    return 2 * mpmath.quad(f, nodes)


def verify_exact_integral(k, precision: int | None = None):
    """Closed form and quadrature of ``int exp(i k z) (1 - tanh^4 z) dz``.

    Returns ``(closed_form, quadrature)`` as mpfr values. The integrand is
    even in ``z``, so the sine part vanishes and the value is even in ``k``.
    """
    with working_precision(precision):
        closed = exact_integral_closed_form(to_mpmath(real(k)))
        quad = exact_integral_quadrature(to_mpmath(real(k)))
        return from_mpmath(closed), from_mpmath(quad)


def strip_width(J, w: int, kappa, window_kind: str = "triangular", precision: int | None = None):
    """Half-width of the strip where the kink is analytic.

    Uniform window: ``pi w / (2 J m_+)``. Otherwise the near-critical value
    ``(pi w / 2) sqrt(2 kappa / (J-1))``, which makes ``exp(-2 pi Delta)``
    the near-critical wiggle factor.
    """
    with working_precision(precision):
        J = _near_critical(J)
        pi = gmpy2.const_pi()
        if window_kind == "uniform":
            _, mp = equilibrium_magnetizations(J, 0)
            return pi * w / (2 * J * mp)
        return pi * w / 2 * gmpy2.sqrt(2 * real(kappa) / (J - 1))


# --- residual checks ---------------------------------------------------------

def kink_ode_residual(J, w: int, kappa, z, precision: int | None = None):
    """``max |J kappa w^2 mu'' - Phi'(mu)|`` for the near-critical kink at ``h = 0``."""
    with working_precision(precision):
        J = _near_critical(J)
        shape = kink_shape(J, 1, w, kappa, 0)
        kap = real(kappa)
        worst = gmpy2.mpfr(0)
        for x in z:
            mu = shape(x)
            lhs = J * kap * w * w * shape.derivative(x, 2)
            worst = max(worst, abs(lhs - equation_of_state(mu, J)))
        return worst


def convolution_residual(shape: KinkShape, window_weights, J, w: int, z, precision: int | None = None):
    """``max_z |mu(z) - tanh((J/w) sum_k g_k mu(z+k))|`` on integer sites ``z``."""
    with working_precision(precision):
        J = real(J)
        R = len(window_weights) - 1
        worst = gmpy2.mpfr(0)
        for x in z:
            x = real(x)
            acc = window_weights[0] * shape(x)
            for k in range(1, R + 1):
                acc += window_weights[k] * (shape(x - k) + shape(x + k))
            worst = max(worst, abs(shape(x) - gmpy2.tanh(J / w * acc)))
        return worst


def boundary_effect_window(J, L: int, w: int, kappa, precision: int | None = None):
    """Distance from ``m_+`` inside which the constant state beats the kink:
    ``sqrt((2w/(2L+1)) sqrt(kappa/2) (J-1)^(3/2))``."""
    with working_precision(precision):
        J = _near_critical(J)
        st = 2 * w * (J - 1) ** gmpy2.mpfr(1.5) * gmpy2.sqrt(real(kappa) / 2)
        return gmpy2.sqrt(st / (2 * L + 1))
