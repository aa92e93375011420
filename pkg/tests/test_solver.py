import gmpy2
import pytest

from cwchain import single
from cwchain.core import ChainModel, Profile
from cwchain.errors import ConvergenceError, PrecisionError, ValidationError
from cwchain.precision import working_precision
from cwchain.solver import (
    Ensemble,
    SolverConfig,
    free_energy_functional,
    grand_canonical_functional,
    lagrange_multiplier,
    residual,
    site_residuals,
    solve,
    solve_canonical,
    solve_fixed_field,
    solve_grand_canonical,
    sweep_isotherm,
)

CFG = SolverConfig(precision=30)
DELTA = 1e-12


@pytest.mark.parametrize("ensemble", ["grand", "canonical"])
@pytest.mark.parametrize("m", ["-0.6", "0", "0.37"])
def test_converged_residual_small(small_model, ensemble, m):
    r = solve(small_model, m, ensemble, CFG)
    assert r.converged
    assert r.residual_inf <= 100 * DELTA
    assert residual(r.profile, small_model, r.h, ensemble) <= 100 * DELTA
    with working_precision(30):
        assert abs(r.mean - gmpy2.mpfr(m)) < 1e-25


@pytest.mark.parametrize("ensemble", ["grand", "canonical"])
def test_mirror_symmetry(small_model, ensemble):
    a = solve(small_model, "0.3", ensemble, CFG)
    b = solve(small_model, "-0.3", ensemble, CFG)
    mirrored = a.profile.mirrored()
    assert max(abs(x - y) for x, y in zip(mirrored.values, b.profile.values)) < 100 * DELTA
    assert abs(a.h + b.h) < 100 * DELTA


def test_kink_centred_at_zero_is_odd(fig3_model):
    r = solve_grand_canonical(fig3_model, 0, CFG)
    v = r.profile.values
    assert abs(r.h) < 1e-20
    assert max(abs(a + b) for a, b in zip(v, reversed(v))) < 1e-20
    assert v[0] < 0 < v[-1]


def test_lagrange_multiplier_estimate(fig3_model):
    r = solve_grand_canonical(fig3_model, "0.2", CFG)
    bound = float(fig3_model.J) * fig3_model.w / fig3_model.L + 100 * DELTA
    assert abs(lagrange_multiplier(r.profile, fig3_model) - r.h) < bound


def test_subcritical_chain_is_flat():
    model = ChainModel.build("0.8", 15, 1, "triangular", precision=30)
    r = solve_grand_canonical(model, "0.4", CFG)
    with working_precision(30):
        assert max(abs(v - gmpy2.mpfr("0.4")) for v in r.profile.values) < 1e-20
        assert abs(r.h - single.equation_of_state("0.4", "0.8")) < 10 * DELTA


def test_fixed_field_has_requested_field(fig3_model):
    r = solve_fixed_field(fig3_model, "0.017", CFG)
    assert r.converged
    with working_precision(30):
        assert r.h == gmpy2.mpfr("0.017")
    assert max(site_residuals(r.profile, fig3_model, r.h, "grand")) <= 100 * DELTA


def test_picard_matches_hybrid(small_model):
    a = solve_grand_canonical(small_model, "0.2", CFG)
    b = solve_grand_canonical(small_model, "0.2", SolverConfig(precision=30, method="picard", delta="1e-20"))
    assert abs(a.h - b.h) < 1e-15


def test_canonical_kink_beats_grand_for_free_edges(fig3_model):
    # free edges are less constrained, so the canonical free energy is not higher
    a = solve_grand_canonical(fig3_model, 0, CFG)
    b = solve_canonical(fig3_model, 0, CFG)
    assert b.converged and abs(b.mean) < 100 * DELTA
    fa = free_energy_functional(a.profile, fig3_model)
    fb = free_energy_functional(b.profile, fig3_model)
    assert fb <= fa + 1e-20


def test_functionals_consistent(fig3_model):
    r = solve_grand_canonical(fig3_model, "0.1", CFG)
    F = free_energy_functional(r.profile, fig3_model)
    G = grand_canonical_functional(r.profile, fig3_model, r.h)
    with working_precision(30):
        assert abs(F - G - r.h * sum(r.profile.values, gmpy2.mpfr(0))) < 1e-25


def test_sweep_is_monotone_grid_and_deterministic(small_model):
    grid = ["-0.2", "-0.1", "0", "0.1", "0.2"]
    a = sweep_isotherm(small_model, grid, "grand", CFG)
    b = sweep_isotherm(small_model, grid, "grand", CFG)
    assert a.failures == 0
    assert a.h == b.h
    assert a.model_fingerprint == b.model_fingerprint
    with pytest.raises(ValidationError):
        sweep_isotherm(small_model, ["0.1", "0"], "grand", CFG)


def test_error_classes(small_model):
    with pytest.raises(ValidationError):
        SolverConfig(theta=1.0)
    with pytest.raises(ValidationError):
        SolverConfig(method="bisection")
    with pytest.raises(ValidationError):
        solve(small_model, "1.5", "grand", CFG)
    with pytest.raises(ValidationError):
        Ensemble.parse("micro")
    with pytest.raises(PrecisionError):
        solve(small_model, "0.1", "grand", SolverConfig(precision=30, delta="1e-40"))
    with pytest.raises(ConvergenceError) as info:
        solve(small_model, "0.1", "grand", SolverConfig(precision=30, method="picard", max_iters=3))
    assert info.value.result is not None and not info.value.result.converged


def test_warm_start_reaches_same_state(small_model):
    a = solve_grand_canonical(small_model, "0.25", CFG)
    init = Profile.constant("0.25", small_model.L)
    b = solve_grand_canonical(small_model, "0.25", CFG, init=init)
    assert abs(a.h - b.h) < 1e-20
