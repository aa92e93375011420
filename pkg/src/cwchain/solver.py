"""Chain solvers: free-energy functionals, residuals, damped fixed-point
iterations and isotherm sweeps.

Three ensembles are supported:

``grand_canonical_forced``
    Fixed mean magnetisation, boundary blocks forced to ``m_-(h)`` and
    ``m_+(h)``.
``canonical_free``
    Fixed mean magnetisation, free boundaries.
``rfcw_forced``
    As the first, with the random-field averaged map and the field
    re-solved exactly each sweep.

Each solve runs the damped iteration and, with ``method="hybrid"``, first
iterates in double precision and then polishes with Newton's method at the
working precision. Both reach the same fixed point; the hybrid route is much
faster for long chains whose slow diffusive modes stall the damped iteration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import gmpy2

from . import single
from .core import ChainModel, Profile, build_coupling_matrix
from .errors import ConvergenceError, PrecisionError, ValidationError
from .kernels import kernel_class
from .precision import bits_for, clamp_margin, real, working_precision
from ._kernel_common import KernelState

DENOMINATOR_FLOOR = 1e-8


class Ensemble(enum.Enum):
    GRAND = "grand_canonical_forced"
    CANONICAL = "canonical_free"
    RFCW = "rfcw_forced"

    @classmethod
    def parse(cls, value) -> "Ensemble":
        if isinstance(value, cls):
            return value
        aliases = {"grand": cls.GRAND, "canonical": cls.CANONICAL, "rfcw": cls.RFCW}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        for e in cls:
            if e.value == key:
                return e
        raise ValidationError(f"unknown ensemble {value!r}; expected grand, canonical or rfcw")

    @property
    def forced(self) -> bool:
        return self is not Ensemble.CANONICAL


def default_delta(digits: int) -> float:
    """``1e-12`` up to 30 digits, falling log-linearly to ``1e-50`` at 64."""
    if digits <= 30:
        return 1e-12
    return 10.0 ** -round(12 + (digits - 30) * 38 / 34)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    Attributes
    ----------
    theta : damping in ``[0, 1)``.
    delta : l1 tolerance between consecutive profiles; ``None`` picks
        :func:`default_delta` for the precision.
    max_iters : budget for the damped iteration.
    precision : working digits; ``None`` uses the model's precision.
    method : ``"hybrid"`` (double-precision iteration, then Newton polish)
        or ``"picard"`` (damped iteration only, at working precision).
    switch_tol : l1 step at which the hybrid method hands over to Newton.
    newton_iters : Newton budget per solve.
    record_history : keep the per-iteration l1 steps.
    """

    theta: float | str = "0.9"
    delta: float | str | None = None
    max_iters: int = 2_000_000
    precision: int | None = None
    method: str = "hybrid"
    switch_tol: float = 1e-9
    newton_iters: int = 60
    record_history: bool = False

    def __post_init__(self):
        for name in ("theta", "delta", "switch_tol"):
            value = getattr(self, name)
            if value is not None:
                try:
                    float(value)
                except (TypeError, ValueError):
                    raise ValidationError(f"{name} must be a number, got {value!r}") from None
        if not 0 <= float(self.theta) < 1:
            raise ValidationError(f"theta must lie in [0, 1), got {self.theta}")
        if self.delta is not None and not float(self.delta) > 0:
            raise ValidationError(f"delta must be positive, got {self.delta}")
        if int(self.max_iters) < 1:
            raise ValidationError("max_iters must be positive")
        if self.method not in ("hybrid", "picard"):
            raise ValidationError(f"unknown method {self.method!r}")

    def digits(self, model: ChainModel) -> int:
        return model.precision if self.precision is None else self.precision

    def tolerance(self, model: ChainModel) -> float:
        return default_delta(self.digits(model)) if self.delta is None else float(self.delta)

    def fingerprint(self) -> str:
        return (
            f"theta={self.theta};delta={self.delta};max_iters={self.max_iters};"
            f"method={self.method};switch_tol={self.switch_tol}"
        )


@dataclass
class SolveResult:
    """Outcome of one solve; ``h`` is the field (Lagrange multiplier)."""

    profile: Profile
    h: gmpy2.mpfr
    iterations: int
    residual_inf: gmpy2.mpfr
    converged: bool
    ensemble: Ensemble
    m_target: gmpy2.mpfr | None = None
    clamps: int = 0
    step: float = math.nan
    history: list = field(default_factory=list)
    newton_history: list = field(default_factory=list)

    @property
    def mean(self):
        return self.profile.mean


# --- functionals -------------------------------------------------------------

def _pairs(model: ChainModel, ensemble: Ensemble | None = None):
    if model.field_spec is None or ensemble in (Ensemble.GRAND, Ensemble.CANONICAL):
        return [(gmpy2.mpfr(0), gmpy2.mpfr(1))]
    return [(gmpy2.mpfr(H), gmpy2.mpfr(p)) for H, p in model.field_spec.pairs()]


def _core_values(profile: Profile, model: ChainModel) -> list:
    if len(profile.values) != model.size:
        raise ValidationError(f"profile has {len(profile.values)} sites, model has {model.size}")
    return [gmpy2.mpfr(v) for v in profile.values]


def free_energy_functional(profile: Profile, model: ChainModel, random_field: bool | None = None):
    """``-1/2 sum D m m + sum Phi(m_z)`` over the core positions.

    For models with a random field the site potential is the random-field
    potential with per-field magnetisations at their conditional optimum.
    """
    with working_precision(model.precision):
        m = _core_values(profile, model)
        D = build_coupling_matrix(model)
        use_rf = model.field_spec is not None if random_field is None else random_field
        pairs = _pairs(model, Ensemble.RFCW if use_rf else Ensemble.GRAND)
        Dm = D.matvec(m)
        quad = sum((a * b for a, b in zip(m, Dm)), gmpy2.mpfr(0))
        site = sum((single.site_potential(v, model.J, pairs) for v in m), gmpy2.mpfr(0))
        return -quad / 2 + site


def grand_canonical_functional(profile: Profile, model: ChainModel, h, random_field: bool | None = None):
    """:func:`free_energy_functional` minus ``h sum_z m_z``."""
    with working_precision(model.precision):
        F = free_energy_functional(profile, model, random_field)
        return F - real(h) * sum(_core_values(profile, model), gmpy2.mpfr(0))


def lagrange_multiplier(profile: Profile, model: ChainModel, random_field: bool | None = None):
    """Field recovered as the average of ``Phi'(m_z)``; accurate to ``O(w/L)``."""
    with working_precision(model.precision):
        m = _core_values(profile, model)
        use_rf = model.field_spec is not None if random_field is None else random_field
        if use_rf:
            vals = [single.rfcw_isotherm(v, model.J, model.field_spec) for v in m]
        else:
            vals = [single.equation_of_state(v, model.J) for v in m]
        return sum(vals, gmpy2.mpfr(0)) / len(m)


# --- kernel plumbing ---------------------------------------------------------

_KERNELS: dict = {}


def _kernel(model: ChainModel, ensemble: Ensemble, digits: int, backend: str | None = None):
    cls = kernel_class(backend)
    key = (model.fingerprint(), ensemble, digits, cls.backend)
    k = _KERNELS.get(key)
    if k is None:
        with working_precision(digits):
            mdl = model.with_precision(digits)
            coeffs = [mdl.J / mdl.w * g for g in mdl.window.weights]
            pairs = _pairs(mdl, ensemble)
            k = cls(coeffs, mdl.J, pairs, mdl.size, ensemble.forced, bits_for(digits),
                    ensemble is Ensemble.RFCW)
        if len(_KERNELS) > 64:
            _KERNELS.clear()
        _KERNELS[key] = k
    return k


def _check_model(model: ChainModel, ensemble: Ensemble):
    if ensemble is Ensemble.RFCW and model.field_spec is None:
        raise ValidationError("the rfcw ensemble needs a model with a random field")
    if ensemble is not Ensemble.RFCW and model.field_spec is not None:
        raise ValidationError("model carries a random field; use the rfcw ensemble")
    a = float(model.J / model.w * model.window.weights[0] - 1)
    if abs(a) < DENOMINATOR_FLOOR:
        raise ValidationError("update denominator (J/w) g(0) - 1 vanishes for this model")


def precision_floor(model: ChainModel, digits: int) -> float:
    """Smallest l1 tolerance that rounding at ``digits`` digits can honour."""
    return model.size * 10.0 ** (3 - digits)


def _profile_from_state(st: KernelState, R: int) -> Profile:
    left = () if st.m_left is None else (st.m_left,) * R
    right = () if st.m_right is None else (st.m_right,) * R
    return Profile(tuple(st.m), left, right)


def _initial_state(model, kernel, ensemble, m_target, init: Profile | None, init_h):
    n = model.size
    if init is None:
        m = [gmpy2.mpfr(m_target)] * n
        h = gmpy2.mpfr(0 if init_h is None else init_h)
    else:
        vals = [gmpy2.mpfr(v) for v in init.values]
        if len(vals) != n:
            raise ValidationError("initial profile does not match the chain length")
        if m_target is not None:
            shift = gmpy2.mpfr(m_target) - sum(vals, gmpy2.mpfr(0)) / n
            vals = [v + shift for v in vals]
        top = 1 - gmpy2.mpfr("1e-6")
        m = [max(-top, min(top, v)) for v in vals]
        h = gmpy2.mpfr(0 if init_h is None else init_h)
    ml = mr = None
    if ensemble.forced:
        ml, mr = kernel.boundary(h)
    return KernelState(m, h, ml, mr)


def _finish(model, kernel, ensemble, st, iterations, converged, step, m_target, clamps=0,
            history=(), newton_history=()):
    res = kernel.residual(st)
    return SolveResult(
        profile=_profile_from_state(st, model.window.support_radius),
        h=st.h,
        iterations=iterations,
        residual_inf=res,
        converged=converged,
        ensemble=ensemble,
        m_target=None if m_target is None else gmpy2.mpfr(m_target),
        clamps=clamps,
        step=step,
        history=list(history),
        newton_history=list(newton_history),
    )


def _run(model: ChainModel, m_target, config: SolverConfig, ensemble: Ensemble,
         init: Profile | None = None, init_h=None, fixed_h=None, backend: str | None = None) -> SolveResult:
    _check_model(model, ensemble)
    digits = config.digits(model)
    delta = config.tolerance(model)
    floor = precision_floor(model, digits)
    if delta < floor:
        raise PrecisionError(
            f"delta = {delta:.1e} is below the rounding floor {floor:.1e} at {digits} digits; raise --precision"
        )
    with working_precision(digits):
        if m_target is not None:
            m_target = real(m_target)
            if not -1 < m_target < 1:
                raise ValidationError(f"target magnetisation must lie in (-1, 1), got {m_target}")
        kernel = _kernel(model, ensemble, digits, backend)
        if fixed_h is not None:
            init_h = real(fixed_h)
        st = _initial_state(model, kernel, ensemble, m_target, init, init_h)
        theta = real(config.theta)
        margin = clamp_margin(digits)
        iterations = 0
        history: list = []
        if config.method == "picard":
            out = kernel.picard(st, m_target, theta, real(delta), config.max_iters, margin, config.record_history)
            result = _finish(model, kernel, ensemble, out.state, out.iterations, out.converged, out.step,
                             m_target, out.clamps, out.history)
            if not result.converged:
                raise ConvergenceError(
                    f"damped iteration did not reach delta={delta:.1e} within {config.max_iters} sweeps "
                    f"(last step {out.step:.3e})", result)
            return result

        newton_hist: list = []
        if init is not None:
            out = kernel.newton(st, m_target, real(delta), config.newton_iters)
            iterations += out.iterations
            newton_hist += out.history
            if out.converged:
                return _finish(model, kernel, ensemble, out.state, iterations, True, out.step, m_target,
                               newton_history=newton_hist)
        m, h, ml, mr, its, step = kernel.picard_double(
            [float(v) for v in st.m], float(st.h),
            None if st.m_left is None else float(st.m_left),
            None if st.m_right is None else float(st.m_right),
            None if m_target is None else float(m_target),
            float(theta), config.switch_tol, config.max_iters)
        iterations += its
        if not all(math.isfinite(v) for v in m) or not math.isfinite(h):
            st0 = st
        else:
            hh = real(h) if fixed_h is None else real(fixed_h)
            st0 = KernelState([real(float(v)) for v in m], hh, None, None)
            if ensemble.forced:
                st0.m_left, st0.m_right = kernel.boundary(hh, ml, mr)
        out = kernel.newton(st0, m_target, real(delta), config.newton_iters)
        iterations += out.iterations
        newton_hist += out.history
        result = _finish(model, kernel, ensemble, out.state, iterations, out.converged, out.step, m_target,
                         history=history, newton_history=newton_hist)
        if not out.converged:
            raise ConvergenceError(
                f"Newton polish did not reach delta={delta:.1e} (last step {out.step:.3e})", result)
        return result


# --- public solvers ----------------------------------------------------------

def solve_grand_canonical(model: ChainModel, m_target, config: SolverConfig | None = None,
                          init: Profile | None = None, init_h=None, backend: str | None = None) -> SolveResult:
    """Fixed-mean solve with forced boundary blocks.

    The field is re-chosen every sweep so that the damped update keeps the
    prescribed mean; the fixed points are those of the chain equations with
    boundary blocks at ``m_-(h)`` and ``m_+(h)``.
    """
    return _run(model, m_target, config or SolverConfig(), Ensemble.GRAND, init, init_h, backend=backend)


def solve_canonical(model: ChainModel, m_target, config: SolverConfig | None = None,
                    init: Profile | None = None, init_h=None, backend: str | None = None) -> SolveResult:
    """Fixed-mean solve with free boundaries.

    Starts from the forced-boundary solution at the same mean unless
    ``init`` is given.
    """
    config = config or SolverConfig()
    if init is None:
        gc = solve_grand_canonical(model, m_target, config, backend=backend)
        init, init_h = gc.profile, gc.h
    return _run(model, m_target, config, Ensemble.CANONICAL, init, init_h, backend=backend)


def solve_rfcw(model: ChainModel, m_target, config: SolverConfig | None = None,
               init: Profile | None = None, init_h=None, backend: str | None = None) -> SolveResult:
    """Random-field chain with forced boundaries."""
    return _run(model, m_target, config or SolverConfig(), Ensemble.RFCW, init, init_h, backend=backend)


def solve_fixed_field(model: ChainModel, h, config: SolverConfig | None = None, init: Profile | None = None,
                      ensemble="grand", m_start=None, backend: str | None = None) -> SolveResult:
    """Solve the chain equations at a prescribed field ``h``.

    Starts from ``init`` or from the constant profile ``m_start`` (default
    ``m_+(h)`` for ``h >= 0``, else ``m_-(h)``).
    """
    config = config or SolverConfig()
    ens = Ensemble.parse(ensemble)
    with working_precision(config.digits(model)):
        if init is None:
            lo, hi = single.equilibrium_magnetizations(model.J, h, field_spec=model.field_spec
                                                       if ens is Ensemble.RFCW else None)
            start = m_start if m_start is not None else (hi if real(h) >= 0 else lo)
            init = Profile.constant(start, model.L)
        return _run(model, None, config, ens, init, fixed_h=h, backend=backend)


def solve(model: ChainModel, m_target, ensemble="grand", config: SolverConfig | None = None,
          init: Profile | None = None, init_h=None, backend: str | None = None) -> SolveResult:
    ens = Ensemble.parse(ensemble)
    fn = {Ensemble.GRAND: solve_grand_canonical, Ensemble.CANONICAL: solve_canonical,
          Ensemble.RFCW: solve_rfcw}[ens]
    return fn(model, m_target, config, init, init_h, backend)


def _state_for(profile: Profile, model: ChainModel, h, ens: Ensemble, k):
    h = real(h)
    ml = mr = None
    if ens.forced:
        if profile.left and profile.right:
            ml, mr = gmpy2.mpfr(profile.left[0]), gmpy2.mpfr(profile.right[0])
        else:
            ml, mr = k.boundary(h)
    return KernelState(_core_values(profile, model), h, ml, mr)


def residual(profile: Profile, model: ChainModel, h, ensemble="grand", digits: int | None = None):
    """``max_z |m_z - RHS_z|`` of the ensemble's fixed-point map.

    Forced values are taken from the profile when present, else computed
    from ``h``.
    """
    ens = Ensemble.parse(ensemble)
    digits = model.precision if digits is None else digits
    with working_precision(digits):
        k = _kernel(model, ens, digits)
        return k.residual(_state_for(profile, model, h, ens, k))


def site_residuals(profile: Profile, model: ChainModel, h, ensemble="grand", digits: int | None = None) -> list:
    """Per-site ``|m_z - RHS_z|``; see :func:`residual`."""
    ens = Ensemble.parse(ensemble)
    digits = model.precision if digits is None else digits
    with working_precision(digits):
        k = _kernel(model, ens, digits)
        return [abs(f) for f in k.residual_vector(_state_for(profile, model, h, ens, k))]


# --- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class IsothermPoint:
    m: gmpy2.mpfr
    h: gmpy2.mpfr
    converged: bool
    residual: gmpy2.mpfr
    iterations: int = 0


@dataclass
class Isotherm:
    """Sampled van der Waals curve; failed points are kept but flagged."""

    points: list
    model_fingerprint: str
    ensemble: Ensemble = Ensemble.GRAND
    results: list = field(default_factory=list, repr=False)

    @property
    def m(self) -> list:
        return [p.m for p in self.points]

    @property
    def h(self) -> list:
        return [p.h for p in self.points]

    def converged(self) -> "Isotherm":
        keep = [i for i, p in enumerate(self.points) if p.converged]
        res = [self.results[i] for i in keep] if self.results else []
        return Isotherm([self.points[i] for i in keep], self.model_fingerprint, self.ensemble, res)

    @property
    def failures(self) -> int:
        return sum(not p.converged for p in self.points)


def sweep_isotherm(model: ChainModel, m_grid: Sequence, ensemble="grand", config: SolverConfig | None = None,
                   warm_start: bool = True, keep_profiles: bool = False, backend: str | None = None) -> Isotherm:
    """Solve at each grid magnetisation, warm-starting from the previous point.

    A point that fails is retried from a cold start; if that fails too it
    is recorded with ``converged=False`` and the sweep continues.
    """
    config = config or SolverConfig()
    ens = Ensemble.parse(ensemble)
    with working_precision(config.digits(model)):
        grid = [real(v) for v in m_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("m grid must be strictly increasing")
    points = []
    results = []
    prev: SolveResult | None = None
    for mt in grid:
        res = None
        attempts = [prev, None] if (warm_start and prev is not None) else [None]
        for start in attempts:
            try:
                if start is None:
                    res = solve(model, mt, ens, config, backend=backend)
                else:
                    res = solve(model, mt, ens, config, init=start.profile, init_h=start.h, backend=backend)
                break
            except ConvergenceError as exc:
                res = exc.result
        ok = res is not None and res.converged
        if res is None:
            points.append(IsothermPoint(mt, gmpy2.mpfr("nan"), False, gmpy2.mpfr("nan")))
        else:
            points.append(IsothermPoint(mt, res.h, ok, res.residual_inf, res.iterations))
        if keep_profiles:
            results.append(res)
        if ok:
            prev = res
    fp = f"{model.fingerprint()}:{config.fingerprint()}:{ens.value}"
    return Isotherm(points, fp, ens, results)
