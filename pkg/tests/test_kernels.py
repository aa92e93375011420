import gmpy2
import pytest

from cwchain.core import ChainModel
from cwchain.kernels import available_backends, default_backend, kernel_class
from cwchain.precision import clamp_margin, working_precision
from cwchain.solver import Ensemble, SolverConfig, _kernel, solve_grand_canonical, solve_rfcw
from cwchain._kernel_common import KernelState, from_hex, to_hex

from conftest import needs_c


def test_backend_selection(monkeypatch):
    assert "python" in available_backends()
    assert kernel_class("python").backend == "python"
    monkeypatch.setenv("CWCHAIN_BACKEND", "python")
    assert default_backend() == "python"
    with pytest.raises(ValueError):
        kernel_class("fortran")


def test_hex_roundtrip_exact():
    with working_precision(64):
        x = gmpy2.const_pi() / 3
        assert from_hex(to_hex(x), gmpy2.get_context().precision) == x


def _state(model, k, m0):
    ml, mr = k.boundary(0)
    return KernelState([gmpy2.mpfr(m0)] * model.size, gmpy2.mpfr(0), ml, mr)


@needs_c
@pytest.mark.parametrize("ensemble", [Ensemble.GRAND, Ensemble.CANONICAL])
@pytest.mark.parametrize("w,digits", [(1, 30), (3, 64)])
def test_c_kernel_bit_identical(ensemble, w, digits):
    model = ChainModel.build("1.05", 20, w, "triangular", precision=digits)
    with working_precision(digits):
        out = {}
        for backend in ("python", "c"):
            k = _kernel(model, ensemble, digits, backend)
            st = _state(model, k, "0.05")
            pic = k.picard(st, gmpy2.mpfr("0.05"), gmpy2.mpfr("0.9"), gmpy2.mpfr(0), 25, clamp_margin(digits))
            new = k.newton(pic.state, gmpy2.mpfr("0.05"), gmpy2.mpfr(10) ** (5 - digits), 30)
            out[backend] = (pic.state.m, pic.state.h, new.state.m, new.state.h, k.residual(new.state))
        assert out["python"] == out["c"]


@needs_c
def test_c_kernel_random_field_identical():
    model = ChainModel.build("1.4", 10, 1, "tabulated", table=["0.5", "0.25"],
                             field_values=["-0.1", "0.1"], field_probs=["0.5", "0.5"], precision=30)
    a = solve_rfcw(model, "0.2", SolverConfig(precision=30, method="picard", delta="1e-20"), backend="python")
    b = solve_rfcw(model, "0.2", SolverConfig(precision=30, method="picard", delta="1e-20"), backend="c")
    assert a.profile.values == b.profile.values and a.h == b.h


@needs_c
def test_c_and_python_solves_agree():
    model = ChainModel.build("1.4", 25, 2, "uniform", precision=30)
    a = solve_grand_canonical(model, "0.3", SolverConfig(precision=30), backend="python")
    b = solve_grand_canonical(model, "0.3", SolverConfig(precision=30), backend="c")
    # the double-precision warm-ups differ in rounding, the polished states do not beyond tolerance
    assert max(abs(x - y) for x, y in zip(a.profile.values, b.profile.values)) < 1e-12
    assert abs(a.h - b.h) < 1e-12


@needs_c
def test_c_double_warmup_close_to_python():
    model = ChainModel.build("1.4", 15, 1, "triangular", precision=30)
    with working_precision(30):
        res = []
        for backend in ("python", "c"):
            k = _kernel(model, Ensemble.GRAND, 30, backend)
            ml, mr = k.boundary(0)
            res.append(k.picard_double([0.1] * model.size, 0.0, float(ml), float(mr), 0.1, 0.9, 1e-12, 10 ** 6))
    a, b = res
    assert max(abs(float(x) - float(y)) for x, y in zip(a[0], b[0])) < 1e-10
    assert abs(a[1] - b[1]) < 1e-10
