import gmpy2
import mpmath
import pytest

from cwchain import continuum
from cwchain.core import kappa, make_window
from cwchain.precision import working_precision


@pytest.mark.parametrize("k", ["0", "0.5", "1", "2.5", "6"])
def test_exact_integral(k):
    closed, quad = continuum.verify_exact_integral(k, precision=30)
    assert abs(closed - quad) < 1e-20


def test_exact_integral_zero_value():
    with working_precision(30):
        closed, quad = continuum.verify_exact_integral(0)
        assert abs(closed - gmpy2.mpfr(8) / 3) < 1e-28
        assert abs(quad - gmpy2.mpfr(8) / 3) < 1e-20


def test_amplitude_identity():
    with working_precision(40):
        win = make_window("triangular", 2)
        p = continuum.predict_oscillations("1.05", 250, 2, kappa(win))
        pi = gmpy2.const_pi()
        assert abs(p.amplitude_h * p.period * (2 * p.L + 1) / (2 * pi * p.amplitude_F) - 1) < 1e-35
        # isotherm oscillation is the scaled derivative of the free-energy oscillation
        m, e = gmpy2.mpfr("0.0123"), gmpy2.mpfr("1e-15")
        fd = (p.free_energy_oscillation(m + e) - p.free_energy_oscillation(m - e)) / (2 * e)
        assert abs(fd / (2 * p.L + 1) / p.isotherm_oscillation(m) - 1) < 1e-20


# printed exponential factors and prefactors, two significant digits
TABLE1_E = [2.8e-14, 9.3e-25, 5.1e-35, 3.3e-45]
TABLE1_C = [7.9e2, 7.8e3, 3.2e4, 9.2e4]
TABLE2_E = [1.7e-4, 3.0e-8, 5.2e-12, 9.0e-16]


@pytest.mark.parametrize("w", [1, 2, 3, 4])
def test_table1_predictions(w):
    with working_precision(30):
        p = continuum.predict_oscillations("1.05", 250, w, kappa(make_window("triangular", w)))
        assert float(p.E_w) == pytest.approx(TABLE1_E[w - 1], rel=0.03)
        assert float(p.C_w) == pytest.approx(TABLE1_C[w - 1], rel=0.03)


@pytest.mark.parametrize("w", [1, 2, 3, 4])
def test_table2_predictions(w):
    # printed values are a few percent below the rate pi^2 w/(J m_+) at J = 1.4
    with working_precision(30):
        p = continuum.predict_oscillations("1.4", 80, w, kappa(make_window("uniform", w)), "uniform")
        assert float(p.E_w) == pytest.approx(TABLE2_E[w - 1], rel=0.05)
        assert p.prefactor_is_estimate


def test_surface_tension_matches_energy_integral():
    with working_precision(30):
        k = gmpy2.mpfr("0.2")
        st = continuum.surface_tension("1.05", 3, k)
        assert abs(continuum.surface_tension_quadrature("1.05", 3, k) / st - 1) < 1e-15
        assert abs(continuum.fourier_mode(0, "1.05", 3, k).real - mpmath.mpf(float(st))) < 1e-12


@pytest.mark.parametrize("J", ["1.05", "1.01", "1.001"])
def test_kink_solves_quartic_equation_to_leading_order(J):
    # the kink solves the quartic truncation; the full atanh adds O((J-1)^(5/2))
    with working_precision(30):
        res = continuum.kink_ode_residual(J, 2, gmpy2.mpfr("0.2"), [-3, 0.4, 7])
        assert res < 2 * (gmpy2.mpfr(J) - 1) ** gmpy2.mpfr(2.5)


def test_kink_is_odd_and_bounded():
    with working_precision(30):
        k = kappa(make_window("tabulated", 1, ["0.5", "0.25"]))
        zs = list(range(-25, 26))
        prof = continuum.kink_profile("1.1", 25, 1, k, 0, zs)
        assert all(abs(a + b) < 1e-25 for a, b in zip(prof, reversed(prof)))
        assert all(abs(v) < 1 for v in prof)


def test_uniform_kink_nearly_solves_convolution():
    with working_precision(30):
        win = make_window("uniform", 3)
        shape = continuum.uniform_kink_shape("1.4", 80, 3, 0)
        res = abs(continuum.convolution_residual(shape, win.weights, "1.4", 3, range(-10, 11)))
        # the tanh form is the continuum solution; the lattice correction is small
        assert res < 0.05


def test_strip_width_near_critical_matches_rate():
    with working_precision(30):
        k = gmpy2.mpfr("0.2")
        d = continuum.strip_width("1.05", 2, k)
        p = continuum.predict_oscillations("1.05", 250, 2, k)
        assert abs(2 * gmpy2.const_pi() * d - p.exponent_rate) < 1e-25
        du = continuum.strip_width("1.4", 2, k, "uniform")
        pu = continuum.predict_oscillations("1.4", 80, 2, k, "uniform")
        assert abs(2 * gmpy2.const_pi() * du - pu.uniform_rate) < 1e-25
