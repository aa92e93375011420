import math

import gmpy2
import pytest

from cwchain import continuum, single
from cwchain.analysis import (
    TABLE_COLUMNS,
    TableRow,
    estimate_strip_width,
    extract_wiggles,
    format_table,
    free_energy_scan,
    measure_row,
    required_digits,
)
from cwchain.core import ChainModel, kappa
from cwchain.errors import ConvergenceError, PrecisionError, ValidationError
from cwchain.precision import working_precision
from cwchain.solver import Isotherm, IsothermPoint, SolverConfig, solve_grand_canonical


def synthetic(A, T, n_per, periods, phase=0.0, offset=0.0, converged=True):
    with working_precision(40):
        n = n_per * periods
        pts = []
        for i in range(n + 1):
            m = gmpy2.mpfr(i) / n_per * T - periods * T / 2
            h = offset + A * gmpy2.sin(2 * gmpy2.const_pi() * m / T + phase)
            pts.append(IsothermPoint(m, h, converged, gmpy2.mpfr(0)))
        return Isotherm(pts, "synthetic")


@pytest.mark.parametrize("A", ["1e-3", "1e-30"])
def test_synthetic_sine_recovered(A):
    T = 0.02
    iso = synthetic(gmpy2.mpfr(A), T, 40, 6, phase=0.3, offset=0.05)
    meas = extract_wiggles(iso)
    assert float(meas.amplitude / gmpy2.mpfr(A)) == pytest.approx(1, rel=1e-3)
    assert meas.period == pytest.approx(T, rel=1e-4)
    assert meas.n_oscillations == 6


def test_wiggles_deterministic_and_subsample_stable():
    iso = synthetic(gmpy2.mpfr("1e-8"), 0.02, 40, 6)
    a, b = extract_wiggles(iso), extract_wiggles(iso)
    assert a == b
    half = Isotherm(iso.points[::2], "half")
    c = extract_wiggles(half)
    assert float(c.amplitude / a.amplitude) == pytest.approx(1, rel=0.02)


def test_wiggle_errors():
    with pytest.raises(ValidationError):
        extract_wiggles(synthetic(gmpy2.mpfr("1e-3"), 0.5, 40, 1))
    with pytest.raises(ConvergenceError):
        extract_wiggles(synthetic(gmpy2.mpfr("1e-3"), 0.02, 40, 4, converged=False))
    with pytest.raises(PrecisionError):
        extract_wiggles(synthetic(gmpy2.mpfr(0), 0.02, 40, 4, offset=0.1))


def test_strip_width_of_tanh():
    with working_precision(60):
        s = gmpy2.mpfr(3)
        fit = estimate_strip_width([gmpy2.tanh(z / s) for z in range(-60, 61)])
    assert fit.delta == pytest.approx(math.pi * 3 / 2, rel=1e-6)
    assert fit.predicted_amplitude == pytest.approx(math.exp(-2 * math.pi * fit.delta))


def test_strip_width_of_uniform_kink():
    with working_precision(60):
        v = continuum.uniform_window_kink("1.4", 80, 2, 0, list(range(-80, 81)), discrete=False)
        fit = estimate_strip_width(v)
        expect = float(continuum.strip_width("1.4", 2, 0, "uniform"))
    assert fit.delta == pytest.approx(expect, rel=0.10)


def test_strip_width_near_critical_scaling():
    ratios = []
    for w in (2, 3):
        model = ChainModel.build("1.05", 120, w, "triangular", precision=60)
        res = solve_grand_canonical(model, 0, SolverConfig(precision=60))
        fit = estimate_strip_width(res.profile, precision=60)
        expect = float(continuum.strip_width("1.05", w, kappa(model.window), precision=60))
        ratios.append(fit.delta / expect)
    assert all(abs(r - 1) < 0.15 for r in ratios)


def test_strip_width_precision_floor():
    with working_precision(30):
        with pytest.raises(PrecisionError):
            # very wide kink: the spectrum drops below rounding after a few modes
            estimate_strip_width([gmpy2.tanh(gmpy2.mpfr(z) / 100) for z in range(-4000, 4001)], n_freqs=8)


def test_required_digits():
    assert required_digits(gmpy2.mpfr("1e-5")) == 20
    assert required_digits(gmpy2.mpfr("0.5")) == 16


def test_measure_row_refuses_low_precision():
    with pytest.raises(PrecisionError):
        measure_row(2, 4, precision=20)


def test_format_table():
    with working_precision(30):
        rows = [
            TableRow(1, gmpy2.mpfr("2.2e-5"), gmpy2.mpfr("1.7e-4"), None, 1.2387, None, None, 0.1, 0.1, 40, 80),
            TableRow(2, gmpy2.mpfr("3.5e-9"), gmpy2.mpfr("3.0e-8"), gmpy2.mpfr("7.8e3"), 1.1, 1.0, 0.7, 0.1, 0.1, 40, 80),
        ]
    csv_text = format_table(rows, "csv", 3)
    lines = csv_text.splitlines()
    assert lines[0] == ",".join(TABLE_COLUMNS)
    assert lines[1] == "1,2.20e-05,1.70e-04,,1.2387,,"
    assert format_table(rows, "tsv", 3).splitlines()[0] == "\t".join(TABLE_COLUMNS)
    text = format_table(rows, "text", 3).splitlines()
    assert len({len(t) for t in text}) == 1
    with pytest.raises(ValidationError):
        format_table(rows, "xml")


def test_free_energy_scan_subcritical_matches_potential():
    model = ChainModel.build("0.8", 25, 1, "triangular", precision=30)
    grid = ["-0.5", "0", "0.3"]
    pts = free_energy_scan(model, grid, SolverConfig(precision=30))
    with working_precision(30):
        for p in pts:
            assert p.converged
            # the only O(w/L) term is the missing coupling at the free edges
            assert abs(p.F_per_site - single.phi(p.m, model.J)) < float(model.J) * model.w / model.L
            # free edges relax, which only lowers F, by a boundary amount
            assert -float(model.J) * model.w < p.F_kink_minus_const < 1e-20


def test_free_energy_kink_wins_in_plateau(fig3_model):
    pts = free_energy_scan(fig3_model, ["-0.2", "0", "0.2"], SolverConfig(precision=30))
    assert all(p.converged and p.F_kink_minus_const < 0 for p in pts)


@pytest.mark.parametrize("L", [25, 100, 400])
def test_free_energy_converges_to_envelope(L):
    model = ChainModel.build("1.4", L, 1, "tabulated", table=["0.5", "0.25"], precision=30)
    with working_precision(30):
        _, mp = single.equilibrium_magnetizations(model.J, 0)
    grid = [float(mp) * x for x in (-0.5, 0.0, 0.5)]
    pts = free_energy_scan(model, grid, SolverConfig(precision=30))
    gap = max(abs(float(p.F_per_site - p.envelope)) for p in pts)
    assert gap <= 5.0 / L
