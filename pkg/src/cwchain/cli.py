"""Command-line front end.

Every command writes a ``#``-prefixed header with the model and solver
fingerprints, then delimited rows with numbers in scientific notation at
``min(precision, 40)`` significant digits.

Exit codes: 0 success, 2 invalid input, 3 no convergence, 4 precision too low.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from typing import Sequence

import gmpy2

from . import __version__, analysis, continuum, single
from .core import ChainModel, kappa, read_model_file
from .errors import CWChainError, ValidationError
from .precision import default_digits, format_real, from_mpmath, working_precision
from .solver import (
    Ensemble,
    SolverConfig,
    solve,
    site_residuals,
    solve_fixed_field,
    sweep_isotherm,
)

log = logging.getLogger("cwchain")

COMMANDS = ("profile", "isotherm", "free-energy", "wiggles", "table1", "table2", "selftest")
MAX_OUTPUT_DIGITS = 40
TABLE_DIGITS = {"table1": 64, "table2": 40}


@dataclass
class RunConfig:
    command: str
    model: ChainModel | None
    solver: SolverConfig
    output_path: str | None
    format: str
    args: argparse.Namespace


# --- argument parsing ----------------------------------------------------------

def parse_window(spec: str, w: int | None):
    """``uniform``/``triangular``, or explicit ``g0=..,g1=..`` weights.

    Returns ``(kind, w, table)``; explicit weights set ``w`` to the largest offset.
    """
    spec = spec.strip()
    if spec in ("uniform", "triangular"):
        return spec, (1 if w is None else w), None
    table = {}
    for item in spec.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key.startswith("g") or not key[1:].isdigit():
            raise ValidationError(f"window must be 'uniform', 'triangular' or 'g0=..,g1=..', got {spec!r}")
        try:
            gmpy2.mpfr(value.strip())
        except ValueError:
            raise ValidationError(f"window weight {key}={value.strip()!r} is not a number") from None
        table[int(key[1:])] = value.strip()
    if 0 not in table:
        raise ValidationError("explicit window needs g0")
    R = max(table)
    weights = [table.get(i, "0") for i in range(R + 1)]
    width = max(R, 1) if w is None else w
    return "tabulated", width, weights


def parse_field(spec: str):
    """``v1,v2,...:p1,p2,...`` into value and probability lists."""
    values, sep, probs = spec.partition(":")
    if not sep:
        raise ValidationError(f"--field expects 'values:probs', got {spec!r}")
    return [v for v in values.split(",") if v], [p for p in probs.split(",") if p]


def parse_grid(spec: str) -> list:
    """``lo:hi:step`` inclusive of ``hi`` up to rounding."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValidationError(f"--m-grid expects lo:hi:step, got {spec!r}")
    try:
        lo, hi, step = (gmpy2.mpfr(p) for p in parts)
    except ValueError:
        raise ValidationError(f"--m-grid has a non-numeric entry: {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ValidationError("--m-grid needs lo <= hi and step > 0")
    n = int(gmpy2.floor((hi - lo) / step + gmpy2.mpfr("1e-9")))
    return [lo + i * step for i in range(n + 1)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--model", help="model file with 'key = value' lines")
    g.add_argument("--J", default=None, help="coupling strength (default 1.4)")
    g.add_argument("--L", type=int, default=None, help="chain half-length; sites -L..L (default 25)")
    g.add_argument("--w", type=int, default=None, help="interaction range")
    g.add_argument("--window", default=None, help="uniform, triangular, or g0=..,g1=..")
    g.add_argument("--field", default=None, help="random field 'values:probs', e.g. -0.1,0.1:0.5,0.5")
    g.add_argument("--precision", type=int, default=None, help="working decimal digits")
    s = common.add_argument_group("solver")
    s.add_argument("--ensemble", default="grand", choices=["grand", "canonical", "rfcw"])
    s.add_argument("--theta", default="0.9", help="damping in [0, 1)")
    s.add_argument("--delta", default=None, help="l1 convergence tolerance")
    s.add_argument("--max-iters", type=int, default=2_000_000)
    s.add_argument("--method", default="hybrid", choices=["hybrid", "picard"])
    s.add_argument("--backend", default=None, choices=["auto", "python", "c"])
    o = common.add_argument_group("output")
    o.add_argument("--out", default=None, help="output file (default stdout)")
    o.add_argument("--format", default="csv", choices=["csv", "tsv"])
    o.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cwchain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", parents=[common], help="solve one profile")
    p.add_argument("--m", default=None, help="prescribed mean magnetisation (default 0)")
    p.add_argument("--h", default=None, help="prescribed field instead of a mean")

    for name, text in (("isotherm", "sweep h(m)"), ("free-energy", "free energy along a sweep"),
                       ("wiggles", "measure the plateau oscillation")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--m-grid", default=None, help="lo:hi:step")

    for name, text in (("table1", "wiggle amplitudes, J=1.05 triangular"),
                       ("table2", "wiggle amplitudes, J=1.4 uniform")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--w-list", default=None, help="comma separated ranges")
        q.add_argument("--ladder", action="store_true", help="double precision until N_w is stable")
        q.add_argument("--workers", type=int, default=1)
        q.add_argument("--text", action="store_true", help="aligned text instead of CSV")

    sub.add_parser("selftest", parents=[common], help="internal consistency checks")
    return parser


def build_model(args) -> ChainModel:
    if args.model:
        model = read_model_file(args.model, args.precision)
        if any(v is not None for v in (args.J, args.L, args.w, args.window, args.field)):
            raise ValidationError("--model cannot be combined with --J/--L/--w/--window/--field")
        return model
    kind, w, table = parse_window(args.window or "triangular", args.w)
    fv = fp = None
    if args.field:
        fv, fp = parse_field(args.field)
    model = ChainModel.build(args.J or "1.4", 25 if args.L is None else args.L, w, kind, table, fv, fp,
                             args.precision)
    if table is not None and model.window.scale != 1:
        log.info("window normalisation factor %s", format_real(model.window.scale, 17))
    return model


def make_config(argv: Sequence[str] | None = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="cwchain: %(message)s", stream=sys.stderr)
    if args.backend:
        import os

        os.environ["CWCHAIN_BACKEND"] = args.backend
    solver = SolverConfig(theta=args.theta, delta=args.delta, max_iters=args.max_iters,
                          precision=args.precision, method=args.method)
    model = None if args.command in ("table1", "table2") else build_model(args)
    return RunConfig(args.command, model, solver, args.out, args.format, args)


# --- output ----------------------------------------------------------------------

class Writer:
    def __init__(self, cfg: RunConfig, digits: int):
        self.cfg = cfg
        self.digits = min(digits, MAX_OUTPUT_DIGITS)
        self.fh = open(cfg.output_path, "w", encoding="utf-8", newline="") if cfg.output_path else sys.stdout
        self.csv = csv.writer(self.fh, delimiter="," if cfg.format == "csv" else "\t", lineterminator="\n")

    def header(self, extra: Sequence[str] = ()):
        a = self.cfg.args
        self.comment(f"cwchain {__version__} {self.cfg.command}")
        if self.cfg.model is not None:
            m = self.cfg.model
            self.comment(f"model {m.fingerprint()} J={format_real(m.J, 17)} L={m.L} w={m.w} "
                         f"window={m.window.fingerprint()} field={a.field or 'none'}")
        self.comment(f"solver {self.cfg.solver.fingerprint()} ensemble={a.ensemble} precision={self.digits}")
        for line in extra:
            self.comment(line)

    def comment(self, text: str):
        self.fh.write(f"# {text}\n")

    def row(self, cells):
        self.csv.writerow([self.fmt(c) for c in cells])

    def fmt(self, x):
        if isinstance(x, (str, int)) and not isinstance(x, bool):
            return str(x)
        if isinstance(x, bool):
            return "1" if x else "0"
        if x is None:
            return ""
        return format_real(x, self.digits)

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()
        else:
            self.fh.flush()


# --- commands ----------------------------------------------------------------------

def _plateau(model: ChainModel):
    _, mp = single.equilibrium_magnetizations(model.J, 0)
    return mp


def _default_grid(model: ChainModel, periods: float | None = None, per_period: int = 20) -> list:
    """Open plateau ``(m_-, m_+)`` (or ``(-0.9, 0.9)`` for J <= 1) sampled per period."""
    if model.J <= 1:
        return [gmpy2.mpfr(i - 50) / 50 * gmpy2.mpfr("0.9") for i in range(101)]
    mp = _plateau(model)
    period = 2 * mp / (2 * model.L)
    if periods is None:
        n = 2 * model.L * per_period
        return [-mp + (i + gmpy2.mpfr(0.5)) * 2 * mp / n for i in range(n)]
    n = int(periods * per_period)
    return [(i - gmpy2.mpfr(n) / 2) * period / per_period for i in range(n + 1)]


def _continuum_profile(model: ChainModel, m, h, z):
    try:
        if h is not None:
            return continuum.homogeneous_profile(model.J, h, model.L, model.w, kappa(model.window), z)
        if model.window.kind == "uniform":
            return continuum.uniform_window_kink(model.J, model.L, model.w, m, z)
        return continuum.kink_profile(model.J, model.L, model.w, kappa(model.window), m, z)
    except ValidationError:
        return None


def cmd_profile(cfg: RunConfig, out: Writer):
    a, model = cfg.args, cfg.model
    if a.h is not None and a.m is not None:
        raise ValidationError("give either --m or --h, not both")
    if a.h is not None:
        res = solve_fixed_field(model, a.h, cfg.solver, ensemble=a.ensemble)
    else:
        res = solve(model, a.m or "0", a.ensemble, cfg.solver)
    r = site_residuals(res.profile, model, res.h, a.ensemble, cfg.solver.digits(model))
    out.header([f"h {format_real(res.h, out.digits)}", f"iterations {res.iterations}",
                f"residual_inf {format_real(res.residual_inf, 6)}"])
    out.row(["z", "m_z", "m_z_continuum", "residual"])
    m = res.profile.mean
    for z, mz, rz in zip(model.positions, res.profile.values, r):
        out.row([z, mz, _continuum_profile(model, m, a.h, z), rz])


def _grid(cfg: RunConfig, periods=None):
    a = cfg.args
    return parse_grid(a.m_grid) if a.m_grid else _default_grid(cfg.model, periods)


def cmd_isotherm(cfg: RunConfig, out: Writer):
    a, model = cfg.args, cfg.model
    iso = sweep_isotherm(model, _grid(cfg), a.ensemble, cfg.solver)
    out.header([f"failures {iso.failures}"])
    out.row(["m", "h", "h_single_system", "converged"])
    for p in iso.points:
        if Ensemble.parse(a.ensemble) is Ensemble.RFCW:
            hs = single.rfcw_isotherm(p.m, model.J, model.field_spec)
        else:
            hs = single.equation_of_state(p.m, model.J)
        out.row([p.m, p.h, hs, bool(p.converged)])


def cmd_free_energy(cfg: RunConfig, out: Writer):
    a, model = cfg.args, cfg.model
    pts = analysis.free_energy_scan(model, _grid(cfg), cfg.solver, a.ensemble)
    out.header()
    out.row(["m", "F_per_site", "F_kink_minus_const", "envelope"])
    for p in pts:
        out.row([p.m, p.F_per_site, p.F_kink_minus_const, p.envelope])


def cmd_wiggles(cfg: RunConfig, out: Writer):
    a, model = cfg.args, cfg.model
    grid = _grid(cfg, periods=3)
    iso = sweep_isotherm(model, grid, a.ensemble, cfg.solver)
    meas = analysis.extract_wiggles(iso, bulk=(float(grid[0]), float(grid[-1])))
    pred = continuum.predict_oscillations(model.J, model.L, model.w, kappa(model.window), model.window.kind)
    out.header([f"bulk_window {meas.bulk_window[0]:.6f}:{meas.bulk_window[1]:.6f}"])
    out.row(["quantity", "measured", "predicted"])
    out.row(["amplitude", meas.amplitude, pred.amplitude_h])
    out.row(["period", gmpy2.mpfr(meas.period), pred.period])
    out.row(["n_oscillations", meas.n_oscillations, ""])
    out.row(["E_w", "", pred.E_w])
    out.row(["C_w", "", pred.C_w])


def cmd_table(cfg: RunConfig, out: Writer):
    a = cfg.args
    table = 1 if cfg.command == "table1" else 2
    digits = a.precision or TABLE_DIGITS[cfg.command]
    if a.w_list:
        try:
            w_list = [int(v) for v in a.w_list.split(",")]
        except ValueError:
            raise ValidationError(f"--w-list must be integers, got {a.w_list!r}") from None
    else:
        w_list = [1, 2, 3] if table == 1 else [1, 2, 3, 4]
    fn = analysis.table1_report if table == 1 else analysis.table2_report
    L = a.L if a.L is not None else (250 if table == 1 else 80)
    rows = fn(w_list, L=L, precision=digits, ladder=a.ladder, workers=a.workers, config=cfg.solver)
    out.header([f"L {L}", "columns w N_w E_w C_w r1 r2 r3"])
    fmt = "text" if a.text else cfg.format
    out.fh.write(analysis.format_table(rows, fmt, digits=6))


def cmd_selftest(cfg: RunConfig, out: Writer):
    checks = []
    for k in ("0", "0.5", "1", "2.5"):
        closed, quad = continuum.verify_exact_integral(k)
        diff = abs(closed - quad)
        checks.append((f"exact integral k={k}", diff < gmpy2.mpfr("1e-20"), diff))
    cf = from_mpmath(continuum.exact_integral_closed_form(0))
    checks.append(("exact integral at k=0 equals 8/3", abs(cf - gmpy2.mpfr(8) / 3) < gmpy2.mpfr("1e-25"),
                   abs(cf - gmpy2.mpfr(8) / 3)))
    from .core import make_window

    for kind in ("uniform", "triangular"):
        for w in (1, 2, 5):
            win = make_window(kind, w)
            err = abs(win.normalization() - 1)
            checks.append((f"{kind} window w={w} normalisation", err < gmpy2.mpfr("1e-25"), err))
    out.header()
    out.row(["check", "pass", "error"])
    failed = 0
    for name, ok, err in checks:
        out.row([name, bool(ok), err])
        failed += not ok
    if failed:
        raise CWChainError(f"{failed} self-test checks failed")


DISPATCH = {
    "profile": cmd_profile,
    "isotherm": cmd_isotherm,
    "free-energy": cmd_free_energy,
    "wiggles": cmd_wiggles,
    "table1": cmd_table,
    "table2": cmd_table,
    "selftest": cmd_selftest,
}


def run(cfg: RunConfig) -> int:
    if cfg.model is not None:
        digits = cfg.model.precision
    elif cfg.command in ("table1", "table2"):
        digits = cfg.args.precision or TABLE_DIGITS[cfg.command]
    else:
        digits = cfg.args.precision or default_digits()
    out = Writer(cfg, digits)
    try:
        with working_precision(digits):
            DISPATCH[cfg.command](cfg, out)
    finally:
        out.close()
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(make_config(argv))
    except CWChainError as exc:
        print(f"cwchain: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cwchain: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
