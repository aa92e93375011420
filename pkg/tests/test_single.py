import gmpy2
import pytest

from cwchain import single
from cwchain.core import FieldSpec
from cwchain.errors import ValidationError
from cwchain.precision import working_precision


def test_m_plus_oracle():
    with working_precision(30):
        lo, hi = single.equilibrium_magnetizations("1.4", 0)
        assert abs(hi - gmpy2.mpfr("0.8145285")) < 1e-7
        assert lo == -hi
        assert abs(gmpy2.tanh(gmpy2.mpfr("1.4") * hi) - hi) < 1e-28


def test_unique_solution_below_critical():
    with working_precision(30):
        lo, hi = single.equilibrium_magnetizations("0.8", 0)
        assert abs(lo) < 1e-28 and abs(hi) < 1e-28
        lo, hi = single.equilibrium_magnetizations("0.8", "0.1")
        assert abs(lo - hi) < 1e-25


@pytest.mark.parametrize("J", ["0.8", "1.05", "1.4"])
@pytest.mark.parametrize("m", ["-0.7", "0.1", "0.55"])
def test_equation_of_state_is_potential_derivative(J, m):
    with working_precision(40):
        x = gmpy2.mpfr(m)
        e = gmpy2.mpfr("1e-12")
        fd = (single.phi(x + e, J) - single.phi(x - e, J)) / (2 * e)
        assert abs(fd - single.equation_of_state(x, J)) < 1e-20


def test_spinodal():
    with working_precision(30):
        sp = single.spinodal("1.4")
        assert abs(sp.h_sp - gmpy2.mpfr("0.151876")) < 1e-6
        J = gmpy2.mpfr("1.4")
        # dh/dm vanishes at the spinodal
        assert abs(-J + 1 / (1 - sp.m_sp ** 2)) < 1e-28
    with pytest.raises(ValidationError):
        single.spinodal("0.9")


def test_maxwell_envelope_flat_on_plateau():
    with working_precision(30):
        _, mp = single.equilibrium_magnetizations("1.4", 0)
        base = single.phi(mp, "1.4")
        for m in ("-0.5", "0", "0.3"):
            assert single.maxwell_envelope("1.4", m) == base
        assert single.maxwell_envelope("1.4", "0.95") == single.phi("0.95", "1.4")


def test_rfcw_endpoints_and_isotherm():
    spec = FieldSpec.build(["-0.1", "0.1"], ["0.5", "0.5"])
    with working_precision(30):
        lo, hi = single.rfcw_equation_of_state("1.4", spec)
        assert abs(hi - gmpy2.mpfr("0.80927")) < 1e-5
        assert abs(lo + hi) < 1e-28
        # h(m_+) = 0 on the random-field isotherm
        assert abs(single.rfcw_isotherm(hi, "1.4", spec)) < 1e-25
        e = gmpy2.mpfr("1e-12")
        m = gmpy2.mpfr("0.3")
        fd = (single.rfcw_phi(m + e, "1.4", spec) - single.rfcw_phi(m - e, "1.4", spec)) / (2 * e)
        assert abs(fd - single.rfcw_isotherm(m, "1.4", spec)) < 1e-15


def test_trivial_field_reduces_to_plain_system():
    spec = FieldSpec.build(["0"], ["1"])
    with working_precision(30):
        for m in ("-0.4", "0.2"):
            assert abs(single.rfcw_isotherm(m, "1.4", spec) - single.equation_of_state(m, "1.4")) < 1e-27


def test_domain_errors():
    with pytest.raises(ValidationError):
        single.equation_of_state("1.0", "1.4")
    with pytest.raises(ValidationError):
        single.binary_entropy("1.5")
