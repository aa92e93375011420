"""Measurements on solver output: wiggle amplitude and period, the kink's
analyticity strip, free-energy scans, the canonical boundary-effect window,
and the two amplitude tables.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import gmpy2
import numpy as np
from scipy.optimize import least_squares

from . import continuum, single
from .core import ChainModel, Profile, kappa
from .errors import ConvergenceError, PrecisionError, ValidationError
from .precision import real, working_precision
from .solver import (
    Isotherm,
    SolverConfig,
    free_energy_functional,
    solve,
    solve_canonical,
    solve_fixed_field,
    solve_grand_canonical,
    sweep_isotherm,
)

__all__ = [
    "Isotherm",
    "WiggleMeasurement",
    "extract_wiggles",
    "StripWidth",
    "estimate_strip_width",
    "TableRow",
    "table1_report",
    "table2_report",
    "measure_row",
    "format_table",
    "FreeEnergyPoint",
    "free_energy_scan",
    "measure_surface_tension",
    "CrossoverResult",
    "crossover_window",
]


# --- wiggles ----------------------------------------------------------------

@dataclass(frozen=True)
class WiggleMeasurement:
    """Half mean peak-to-trough ``amplitude`` and mean peak spacing ``period``."""

    amplitude: gmpy2.mpfr
    period: float
    n_oscillations: int
    bulk_window: tuple
    peaks: tuple = ()
    troughs: tuple = ()


def _refine(xs, ys, i):
    """Vertex of the parabola through three neighbouring samples."""
    x0, x1, x2 = xs[i - 1], xs[i], xs[i + 1]
    y0, y1, y2 = ys[i - 1], ys[i], ys[i + 1]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    if denom == 0:
        return x1, y1
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a == 0:
        return x1, y1
    xv = -b / (2 * a)
    if not x0 <= xv <= x2:
        return x1, y1
    c = y1 - a * x1 * x1 - b * x1
    return xv, a * xv * xv + b * xv + c


def extract_wiggles(isotherm: Isotherm, model: ChainModel | None = None, bulk: tuple | None = None,
                    central_fraction: float = 1 / 3) -> WiggleMeasurement:
    """Measure the plateau oscillation of a sampled isotherm.

    Parameters
    ----------
    isotherm : Isotherm
        Increasing ``m`` samples; at least 20 per period are expected.
    model : ChainModel, optional
        Used to place the bulk window in the central ``central_fraction``
        of the plateau ``[m_-, m_+]``.
    bulk : (m_lo, m_hi), optional
        Explicit window; overrides ``model``. Without either, all points.

    Notes
    -----
    Extrema are exact local extrema of the samples, refined by a
    three-point parabola, with the ``h`` values shifted by their mean
    before refinement so small oscillations keep their digits.
    """
    pts = isotherm.points
    if bulk is None and model is not None:
        with working_precision(model.precision):
            _, mp = single.equilibrium_magnetizations(model.J, 0)
        half = float(mp) * central_fraction
        bulk = (-half, half)
    if bulk is None:
        bulk = (float(pts[0].m), float(pts[-1].m))
    lo, hi = bulk
    sel = [p for p in pts if lo <= float(p.m) <= hi]
    if any(not p.converged for p in sel):
        raise ConvergenceError("isotherm has non-converged points inside the bulk window")
    if len(sel) < 5:
        raise ValidationError("too few isotherm points inside the bulk window")
    with gmpy2.context(precision=max(gmpy2.get_context().precision, sel[0].h.precision)):
        base = sum((p.h for p in sel), gmpy2.mpfr(0)) / len(sel)
        ys = [p.h - base for p in sel]
    xs = [float(p.m) for p in sel]
    scale = max(abs(y) for y in ys)
    if scale == 0:
        raise PrecisionError("isotherm is flat to working precision; no oscillation to measure")
    yf = [float(y / scale) for y in ys]
    peaks, troughs = [], []
    for i in range(1, len(yf) - 1):
        if yf[i] > yf[i - 1] and yf[i] >= yf[i + 1]:
            peaks.append(_refine(xs, yf, i))
        elif yf[i] < yf[i - 1] and yf[i] <= yf[i + 1]:
            troughs.append(_refine(xs, yf, i))
    if len(peaks) < 2 or len(troughs) < 2:
        raise ValidationError(f"too few oscillations in bulk window ({len(peaks)} peaks, {len(troughs)} troughs)")
    n = min(len(peaks), len(troughs))
    p2t = (sum(y for _, y in peaks[:n]) - sum(y for _, y in troughs[:n])) / n
    amplitude = gmpy2.mpfr(p2t / 2) * scale
    spacings = [b[0] - a[0] for a, b in zip(peaks, peaks[1:])] + [b[0] - a[0] for a, b in zip(troughs, troughs[1:])]
    period = sum(spacings) / len(spacings)
    return WiggleMeasurement(
        amplitude=amplitude,
        period=period,
        n_oscillations=len(peaks),
        bulk_window=(lo, hi),
        peaks=tuple(x for x, _ in peaks),
        troughs=tuple(x for x, _ in troughs),
    )


# --- analyticity strip --------------------------------------------------------

@dataclass(frozen=True)
class StripWidth:
    delta: float
    prefactor: float
    predicted_amplitude: float
    n_modes: int
    frequencies: tuple = field(default=(), repr=False)
    magnitudes: tuple = field(default=(), repr=False)


def _dtft_magnitudes(values, freqs):
    d = [values[i + 1] - values[i] for i in range(len(values) - 1)]
    centre = (len(d) - 1) / 2
    pi2 = 2 * gmpy2.const_pi()
    out = []
    for f in freqs:
        re = gmpy2.mpfr(0)
        im = gmpy2.mpfr(0)
        fm = gmpy2.mpfr(f)
        for j, dj in enumerate(d):
            ang = pi2 * fm * (j - centre)
            re += dj * gmpy2.cos(ang)
            im += dj * gmpy2.sin(ang)
        out.append(gmpy2.sqrt(re * re + im * im))
    return out


def _alias_model(f, delta, n_alias=3):
    """Spectrum of the differenced samples of a kink with a pole at distance ``delta``."""
    total = np.zeros_like(f)
    with np.errstate(over="ignore"):
        for n in range(-n_alias, n_alias + 1):
            total += 1 / np.sinh(2 * np.pi * delta * (f + n))
    return np.abs(2 * np.sin(np.pi * f) * total)


def estimate_strip_width(profile, n_freqs: int = 48, precision: int | None = None) -> StripWidth:
    """Estimate the half-width ``Delta`` of the kink's analyticity strip.

    A kink whose nearest complex singularity is a pole at ``Im z = Delta``
    has a spectrum decaying as ``1 / sinh(2 pi Delta f)``. The DTFT of the
    difference sequence ``m_{z+1} - m_z`` is that spectrum summed over
    aliases ``f + n`` and multiplied by ``2 sin(pi f)``; ``log|D(f)|`` on
    ``0 < f < 1/2`` is fitted to this form. Frequencies below the rounding
    floor are dropped.

    Returns the fit, with ``exp(-2 pi Delta)`` as the predicted wiggle factor.
    """
    vals = profile.values if isinstance(profile, Profile) else profile
    with working_precision(precision):
        vals = [real(v) for v in vals]
        freqs = [(j + 0.5) / (2 * n_freqs) for j in range(n_freqs)]
        mags = _dtft_magnitudes(vals, freqs)
        # rounding noise scales with the total variation, which bounds every |D(f)|
        tv = sum((abs(b - a) for a, b in zip(vals, vals[1:])), gmpy2.mpfr(0))
        floor = tv * gmpy2.mpfr(10) ** (8 - min(gmpy2.get_context().precision * 0.30103, 300))
    keep = [(f, float(gmpy2.log(mg))) for f, mg in zip(freqs, mags) if mg > floor]
    if len(keep) < 5:
        raise PrecisionError(f"only {len(keep)} Fourier modes above the rounding floor; raise precision")
    f = np.array([k[0] for k in keep])
    y = np.array([k[1] for k in keep])

    def resid(p):
        logc, delta = p
        return logc + np.log(_alias_model(f, delta)) - y

    slope = np.polyfit(f, y, 1)[0]
    d0 = max(0.05, -slope / (2 * np.pi))
    c0 = y[0] - np.log(_alias_model(f[:1], d0))[0]
    fit = least_squares(resid, [c0, d0], bounds=([-np.inf, 1e-3], [np.inf, np.inf]))
    logc, delta = fit.x
    return StripWidth(float(delta), float(np.exp(logc)), float(np.exp(-2 * np.pi * delta)), len(keep),
                      tuple(f), tuple(np.exp(y)))


# --- tables -----------------------------------------------------------------

@dataclass(frozen=True)
class TableRow:
    w: int
    N_w: gmpy2.mpfr
    E_w: gmpy2.mpfr
    C_w: gmpy2.mpfr | None
    r1: float
    r2: float | None
    r3: float | None
    period: float
    period_predicted: float
    precision: int
    L: int


TABLE1 = {"J": "1.05", "kind": "triangular", "L": 250}
TABLE2 = {"J": "1.4", "kind": "uniform", "L": 80}


def _log(x) -> float:
    return float(gmpy2.log(x))


def required_digits(amplitude) -> int:
    """Digits needed to resolve an oscillation of the given size."""
    return max(15, int(math.ceil(15 - math.log10(float(amplitude)))))


def measure_row(table: int, w: int, L: int | None = None, precision: int = 64, periods: int = 3,
                samples_per_period: int = 40, config: SolverConfig | None = None) -> TableRow:
    """One table row: sweep the central ``periods`` periods and compare to the prediction."""
    spec = TABLE1 if table == 1 else TABLE2
    L = spec["L"] if L is None else L
    if table == 1 and w >= 3 and L < 250:
        warnings.warn("Table 1 rows with w >= 3 need L >= 250 for a stable measurement", stacklevel=2)
    model = ChainModel.build(spec["J"], L, w, spec["kind"], precision=precision)
    with working_precision(precision):
        pred = continuum.predict_oscillations(model.J, L, w, kappa(model.window), spec["kind"])
        signal = pred.C_w * pred.E_w if table == 1 else pred.E_w
        need = required_digits(signal)
        if precision < need:
            raise PrecisionError(
                f"w={w}: predicted amplitude {float(signal):.1e} needs at least {need} digits, got {precision}")
        T = float(pred.period)
        n = periods * samples_per_period
        grid = [(i - n / 2) * T / samples_per_period for i in range(n + 1)]
        iso = sweep_isotherm(model, grid, "grand", config or SolverConfig(precision=precision))
        meas = extract_wiggles(iso, bulk=(grid[0], grid[-1]))
        N = meas.amplitude
        if table == 1:
            r1 = _log(N) / _log(pred.C_w * pred.E_w)
            r2 = _log(N / pred.C_w) / _log(pred.E_w)
            r3 = _log(N / pred.E_w) / _log(pred.C_w)
            C = pred.C_w
        else:
            r1 = _log(N) / _log(pred.E_w)
            r2 = r3 = None
            C = None
        return TableRow(w, N, pred.E_w, C, r1, r2, r3, meas.period, T, precision, L)


def _row_job(args):
    return measure_row(*args)


def _report(table, w_list, L, precision, ladder, max_precision, workers, config):
    jobs = [(table, w, L, precision, 3, 40, config) for w in w_list]
    if workers > 1 and not ladder:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_row_job, jobs))
    rows = []
    for job in jobs:
        row = measure_row(*job)
        if ladder:
            p = precision
            while 2 * p <= max_precision:
                p *= 2
                nxt = measure_row(table, row.w, L, p, 3, 40, config)
                change = abs(float(nxt.N_w / row.N_w) - 1)
                row = nxt
                if change < 0.01:
                    break
        rows.append(row)
    return rows


def table1_report(w_list: Sequence[int] = (1, 2, 3), L: int = 250, precision: int = 64, ladder: bool = False,
                  max_precision: int = 256, workers: int = 1, config: SolverConfig | None = None) -> list:
    """Wiggle amplitudes at ``J = 1.05`` with the triangular window.

    ``r1 = log N / log(C E)``, ``r2 = log(N/C) / log E``, ``r3 = log(N/E) / log C``.
    """
    return _report(1, w_list, L, precision, ladder, max_precision, workers, config)


def table2_report(w_list: Sequence[int] = (1, 2, 3, 4), L: int = 80, precision: int = 40, ladder: bool = False,
                  max_precision: int = 256, workers: int = 1, config: SolverConfig | None = None) -> list:
    """Wiggle amplitudes at ``J = 1.4`` with the uniform window; ``r1 = log N / log E``."""
    return _report(2, w_list, L, precision, ladder, max_precision, workers, config)


TABLE_COLUMNS = ("w", "N_w", "E_w", "C_w", "r1", "r2", "r3")


def _cells(row: TableRow, digits: int) -> list[str]:
    from .precision import format_real

    def num(x):
        return "" if x is None else format_real(x, digits)

    def ratio(x):
        return "" if x is None else f"{x:.4f}"

    return [str(row.w), num(row.N_w), num(row.E_w), num(row.C_w), ratio(row.r1), ratio(row.r2), ratio(row.r3)]


def format_table(rows: Sequence[TableRow], fmt: str = "csv", digits: int = 6) -> str:
    """Render rows as CSV/TSV or aligned text with columns ``w, N_w, E_w, C_w, r1, r2, r3``."""
    cells = [_cells(r, digits) for r in rows]
    if fmt in ("csv", "tsv"):
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="," if fmt == "csv" else "\t", lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        writer.writerows(cells)
        return buf.getvalue()
    if fmt != "text":
        raise ValidationError(f"unknown table format {fmt!r}")
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(TABLE_COLUMNS)]
    lines = ["  ".join(h.rjust(wd) for h, wd in zip(TABLE_COLUMNS, widths))]
    lines += ["  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


# --- free energies ------------------------------------------------------------

@dataclass(frozen=True)
class FreeEnergyPoint:
    m: gmpy2.mpfr
    F_per_site: gmpy2.mpfr
    F_kink_minus_const: gmpy2.mpfr
    envelope: gmpy2.mpfr
    converged: bool


def free_energy_scan(model: ChainModel, m_grid: Sequence, config: SolverConfig | None = None,
                     ensemble="canonical") -> list[FreeEnergyPoint]:
    """Free energy of the solved profiles against the constant profile ``m_z = m``.

    The solved branch is followed with warm starts. ``F_kink_minus_const``
    is negative where the inhomogeneous state wins.
    """
    config = config or SolverConfig()
    iso = sweep_isotherm(model, m_grid, ensemble, config, keep_profiles=True)
    out = []
    with working_precision(config.digits(model)):
        for pt, res in zip(iso.points, iso.results):
            n = model.size
            const = free_energy_functional(Profile.constant(pt.m, model.L), model)
            if res is None:
                nan = gmpy2.mpfr("nan")
                out.append(FreeEnergyPoint(pt.m, nan, nan, single.maxwell_envelope(model.J, pt.m), False))
                continue
            F = free_energy_functional(res.profile, model)
            out.append(FreeEnergyPoint(pt.m, F / n, F - const, single.maxwell_envelope(model.J, pt.m),
                                       pt.converged))
    return out


def measure_surface_tension(model: ChainModel, config: SolverConfig | None = None):
    """``F[kink at m=0] - F[constant m_+]``; boundary terms of the two cancel.

    Returns ``(measured, predicted)``.
    """
    config = config or SolverConfig()
    res = solve_grand_canonical(model, 0, config)
    with working_precision(config.digits(model)):
        _, mp = single.equilibrium_magnetizations(model.J, 0)
        Fk = free_energy_functional(res.profile, model)
        Fc = free_energy_functional(Profile.constant(mp, model.L), model)
        pred = continuum.surface_tension(model.J, model.w, kappa(model.window))
        return Fk - Fc, pred


# --- canonical boundary effect -------------------------------------------------
@dataclass(frozen=True)
class CrossoverResult:
    """``window = m_end - m_cross`` where ``m_end`` is the mean of the h=0 free-boundary state."""

    L: int
    m_cross: float
    window: float
    predicted: float
    m_end: float


def _has_kink(profile: Profile) -> bool:
    vals = profile.values
    return min(vals) < 0 < max(vals)


def crossover_window(model: ChainModel, config: SolverConfig | None = None, bisections: int = 20) -> CrossoverResult:
    """Width of the canonical boundary-effect window below the plateau end.

    With free boundaries the homogeneous state has depressed edges, so the
    plateau ends at the mean ``m_end`` of the zero-field free-boundary
    state rather than at the bulk ``m_+``. Two canonical branches are
    followed: the kink (started from the forced-boundary kink) and the
    homogeneous state (started from the constant profile). The crossover is
    where the kink stops having the lower free energy, either because the
    energies cross or because the kink branch merges into the homogeneous
    one; it is located by a forward scan and bisection. Where the
    homogeneous branch has itself collapsed to a kink, the kink wins.
    """
    config = config or SolverConfig()
    with working_precision(config.digits(model)):
        end = solve_fixed_field(model, 0, config, ensemble="canonical")
        m_end = float(end.profile.mean)
        pred = float(continuum.boundary_effect_window(model.J, model.L, model.w, kappa(model.window)))

    def branches(m, prev=None):
        try:
            if prev is None or prev[0] is None:
                gc = solve_grand_canonical(model, m, config)
                kink = solve_canonical(model, m, config, init=gc.profile, init_h=gc.h)
            else:
                kink = solve_canonical(model, m, config, init=prev[0].profile, init_h=prev[0].h)
        except ConvergenceError:
            kink = None
        if prev is None:
            const = solve_canonical(model, m, config, init=Profile.constant(m, model.L))
        else:
            const = solve_canonical(model, m, config, init=prev[1].profile, init_h=prev[1].h)
        return kink, const

    def kink_wins(pair) -> bool:
        kink, const = pair
        if kink is None or not _has_kink(kink.profile):
            return False
        if _has_kink(const.profile):
            return True
        return free_energy_functional(kink.profile, model) < free_energy_functional(const.profile, model)

    # Too far in, the homogeneous branch is unstable; too close, the kink is gone.
    for factor in (8, 4, 16, 2, 32, 64):
        lo_m = m_end - factor * pred
        if lo_m <= 0:
            continue
        state = branches(lo_m)
        if kink_wins(state):
            break
    else:
        raise ConvergenceError("no magnetisation found where the kink beats the homogeneous state")
    step = pred / 2
    hi_m = m_end
    m = lo_m
    while m + step < m_end:
        nxt = branches(m + step, state)
        if not kink_wins(nxt):
            hi_m = m + step
            break
        m, state = m + step, nxt
        lo_m = m
    for _ in range(bisections):
        mid = (lo_m + hi_m) / 2
        nxt = branches(mid, state)
        if kink_wins(nxt):
            lo_m, state = mid, nxt
        else:
            hi_m = mid
    m_cross = (lo_m + hi_m) / 2
    return CrossoverResult(model.L, m_cross, m_end - m_cross, pred, m_end)
