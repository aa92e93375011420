"""Problem definition: coupling windows, the coupling matrix D, chain models.

A window stores ``g(|z|/w)`` for the integer offsets ``z = 0..R`` with
``R = support_radius``; negative offsets mirror the positive ones. Windows are
normalised so that ``(1/w) * sum_z g(|z|/w) = 1``.

The coupling matrix is ``D[z, z'] = (J/w) g(|z - z'|/w) - J delta(z, z')``.
It is stored by its band values only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import gmpy2

from .errors import ValidationError
from .precision import check_digits, default_digits, real, working_precision

WINDOW_KINDS = ("uniform", "triangular", "tabulated")


@dataclass(frozen=True)
class CouplingWindow:
    """Kac window ``g`` sampled at integer offsets.

    ``weights[k]`` is ``g(k/w)`` for ``k = 0..support_radius``.
    """

    w: int
    kind: str
    weights: tuple
    scale: gmpy2.mpfr = field(default=None, compare=False)

    @property
    def support_radius(self) -> int:
        return len(self.weights) - 1

    def weight(self, z: int):
        z = abs(z)
        if z > self.support_radius:
            return gmpy2.mpfr(0)
        return self.weights[z]

    def full(self) -> list:
        """Weights for offsets ``-R..R``."""
        return [self.weight(z) for z in range(-self.support_radius, self.support_radius + 1)]

    def normalization(self):
        """``(1/w) * sum_z g(|z|/w)`` over all integer offsets."""
        total = self.weights[0] + 2 * sum(self.weights[1:], gmpy2.mpfr(0))
        return total / self.w

    def at_precision(self, digits: int) -> "CouplingWindow":
        with working_precision(digits):
            return replace(self, weights=tuple(gmpy2.mpfr(g) for g in self.weights))

    def fingerprint(self) -> str:
        return f"{self.kind}:w={self.w}:" + ",".join(format(float(g), ".17g") for g in self.weights)


def _trim(shape: list) -> list:
    while len(shape) > 1 and shape[-1] == 0:
        shape.pop()
    return shape


def make_window(kind: str, w: int, table: Sequence | None = None) -> CouplingWindow:
    """Build a normalised window of the given kind.

    Parameters
    ----------
    kind : {"uniform", "triangular", "tabulated"}
        ``uniform`` is flat on ``|z| <= w``. ``triangular`` is proportional to
        ``1 - |z|/(2w)`` on ``|z| <= w``, i.e. ``g = 2w/(1+3w) (1 - |x|/2)``.
        ``tabulated`` takes ``table = [g0, g1, ...]`` for offsets ``0, 1, ...``.
    w : int
        Interaction range, ``w >= 1``.
    table : sequence, optional
        Nonnegative weights for ``tabulated``; any scale, rescaled here.

    Returns
    -------
    CouplingWindow
        Weights at the current working precision, rescaled so the
        normalisation is exact to rounding. The applied factor is kept in
        ``scale``.
    """
    if kind not in WINDOW_KINDS:
        raise ValidationError(f"unknown window kind {kind!r}; expected one of {WINDOW_KINDS}")
    if int(w) != w or w < 1:
        raise ValidationError(f"window range w must be a positive integer, got {w}")
    w = int(w)
    if kind == "uniform":
        shape = [gmpy2.mpfr(1)] * (w + 1)
    elif kind == "triangular":
        shape = [1 - gmpy2.mpfr(z) / (2 * w) for z in range(w + 1)]
    else:
        if table is None or len(table) == 0:
            raise ValidationError("tabulated window needs a weight table")
        shape = [real(v) if not isinstance(v, Fraction) else real(v) for v in table]
        if any(g < 0 for g in shape):
            raise ValidationError("window weights must be nonnegative")
        shape = _trim(list(shape))
        if all(g == 0 for g in shape):
            raise ValidationError("window table is identically zero")
    total = shape[0] + 2 * sum(shape[1:], gmpy2.mpfr(0))
    scale = w / total
    weights = tuple(g * scale for g in shape)
    return CouplingWindow(w=w, kind=kind, weights=weights, scale=scale)


def kappa(window: CouplingWindow):
    """Discrete second moment ``(1/(2 w^3)) * sum_z z^2 g(|z|/w)``.

    This is the lattice analogue of ``1/2 * integral x^2 g(|x|) dx``; for the
    uniform window it equals ``(w+1)/(6w)`` and tends to 1/6.
    """
    w = window.w
    s = sum((gmpy2.mpfr(z * z) * g for z, g in enumerate(window.weights)), gmpy2.mpfr(0))
    # both signs of z contribute
    return 2 * s / (2 * gmpy2.mpfr(w) ** 3)


@dataclass(frozen=True)
class CouplingMatrix:
    """Banded symmetric ``D`` on positions ``lo..hi``.

    ``band[k]`` holds ``D[z, z+k]`` for ``k = 0..band_radius``; ``band[0]``
    is the diagonal value ``(J/w) g(0) - J``.
    """

    lo: int
    hi: int
    J: gmpy2.mpfr
    band: tuple

    @property
    def band_radius(self) -> int:
        return len(self.band) - 1

    @property
    def diagonal_value(self):
        return self.band[0]

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def entry(self, z: int, zp: int):
        for p in (z, zp):
            if not self.lo <= p <= self.hi:
                raise IndexError(f"position {p} outside {self.lo}..{self.hi}")
        k = abs(z - zp)
        if k > self.band_radius:
            return gmpy2.mpfr(0)
        return self.band[k]

    def column_sum(self, zp: int):
        total = gmpy2.mpfr(0)
        for z in range(max(self.lo, zp - self.band_radius), min(self.hi, zp + self.band_radius) + 1):
            total += self.band[abs(z - zp)]
        return total

    def matvec(self, m: Sequence) -> list:
        if len(m) != self.size:
            raise ValidationError(f"vector length {len(m)} != matrix size {self.size}")
        R = self.band_radius
        n = self.size
        out = []
        for i in range(n):
            acc = gmpy2.mpfr(0)
            for j in range(max(0, i - R), min(n, i + R + 1)):
                acc += self.band[abs(i - j)] * m[j]
            out.append(acc)
        return out

    def dense(self) -> list:
        return [[self.entry(z, zp) for zp in range(self.lo, self.hi + 1)] for z in range(self.lo, self.hi + 1)]


@dataclass(frozen=True)
class FieldSpec:
    """Discrete random-field distribution ``P(H = values[a]) = probs[a]``."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValidationError("field values and probabilities must be nonempty and of equal length")
        if any(not (0 < p <= 1) for p in self.probs):
            raise ValidationError("field probabilities must lie in (0, 1]")
        tol = 64 * gmpy2.mpfr(2) ** (-min(p.precision for p in self.probs))
        if abs(sum(self.probs, gmpy2.mpfr(0)) - 1) > tol:
            raise ValidationError("field probabilities must sum to 1")
        mean = sum((p * h for p, h in zip(self.probs, self.values)), gmpy2.mpfr(0))
        scale = max([abs(h) for h in self.values] + [gmpy2.mpfr(1)])
        if abs(mean) > tol * scale:
            raise ValidationError("random field must have zero mean")

    @classmethod
    def build(cls, values: Sequence, probs: Sequence) -> "FieldSpec":
        return cls(tuple(real(v) for v in values), tuple(real(p) for p in probs))

    @property
    def is_trivial(self) -> bool:
        return all(h == 0 for h in self.values)

    def pairs(self):
        return list(zip(self.values, self.probs))


@dataclass(frozen=True)
class ChainModel:
    """A chain of ``2L+1`` Curie-Weiss systems coupled by ``window``.

    Numbers are stored at ``precision`` decimal digits; build instances
    with :meth:`build` so that every field shares that precision.
    """

    J: gmpy2.mpfr
    L: int
    window: CouplingWindow
    field_spec: FieldSpec | None = None
    precision: int = field(default_factory=default_digits)

    def __post_init__(self):
        check_digits(self.precision)
        if self.J <= 0:
            raise ValidationError(f"coupling J must be positive, got {self.J}")
        if int(self.L) != self.L or self.L < 1:
            raise ValidationError(f"half-length L must be a positive integer, got {self.L}")
        if 2 * self.L + 1 < 2 * self.window.support_radius + 3:
            raise ValidationError(
                f"chain of {2 * self.L + 1} sites is shorter than one interaction band "
                f"(support radius {self.window.support_radius})"
            )

    @classmethod
    def build(
        cls,
        J,
        L: int,
        w: int = 1,
        kind: str = "triangular",
        table: Sequence | None = None,
        field_values: Sequence | None = None,
        field_probs: Sequence | None = None,
        precision: int | None = None,
    ) -> "ChainModel":
        digits = default_digits() if precision is None else check_digits(precision)
        with working_precision(digits):
            window = make_window(kind, w, table)
            spec = None
            if field_values is not None or field_probs is not None:
                if field_values is None or field_probs is None:
                    raise ValidationError("random field needs both values and probabilities")
                spec = FieldSpec.build(field_values, field_probs)
            return cls(J=real(J), L=int(L), window=window, field_spec=spec, precision=digits)

    @property
    def w(self) -> int:
        return self.window.w

    @property
    def size(self) -> int:
        return 2 * self.L + 1

    @property
    def positions(self) -> range:
        return range(-self.L, self.L + 1)

    def with_precision(self, digits: int) -> "ChainModel":
        """Same model re-rounded to ``digits``; J keeps only the digits it had."""
        if digits == self.precision:
            return self
        with working_precision(digits):
            spec = None
            if self.field_spec is not None:
                spec = FieldSpec(
                    tuple(gmpy2.mpfr(v) for v in self.field_spec.values),
                    tuple(gmpy2.mpfr(p) for p in self.field_spec.probs),
                )
            return replace(
                self,
                J=gmpy2.mpfr(self.J),
                window=self.window.at_precision(digits),
                field_spec=spec,
                precision=digits,
            )

    def fingerprint(self) -> str:
        parts = [f"J={self.J}", f"L={self.L}", self.window.fingerprint(), f"precision={self.precision}"]
        if self.field_spec is not None:
            parts.append("field=" + ";".join(f"{h}:{p}" for h, p in self.field_spec.pairs()))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def build_coupling_matrix(model: ChainModel, extended: bool = False) -> CouplingMatrix:
    """Banded ``D`` over ``-L..L``, or over ``-L-R..L+R`` when ``extended``."""
    with working_precision(model.precision):
        J = model.J
        w = model.window
        scale = J / w.w
        band = [scale * g for g in w.weights]
        band[0] = band[0] - J
        pad = w.support_radius if extended else 0
        return CouplingMatrix(lo=-model.L - pad, hi=model.L + pad, J=J, band=tuple(band))


@dataclass(frozen=True)
class Profile:
    """Magnetisation density on the core positions ``-L..L``.

    ``left`` and ``right`` hold forced values at ``-L-R..-L-1`` and
    ``L+1..L+R`` when the profile came from a forced-boundary solve.
    """

    values: tuple
    left: tuple = ()
    right: tuple = ()

    def __post_init__(self):
        for v in (*self.values, *self.left, *self.right):
            if not -1 <= v <= 1:
                raise ValidationError(f"magnetisation {v} outside [-1, 1]")

    @property
    def L(self) -> int:
        return (len(self.values) - 1) // 2

    @property
    def mean(self):
        return sum(self.values, gmpy2.mpfr(0)) / len(self.values)

    def extended(self) -> list:
        return [*self.left, *self.values, *self.right]

    def at(self, z: int):
        return self.values[z + self.L]

    def mirrored(self) -> "Profile":
        """The profile ``-m_{-z}``, forced parts swapped."""
        return Profile(
            tuple(-v for v in reversed(self.values)),
            tuple(-v for v in reversed(self.right)),
            tuple(-v for v in reversed(self.left)),
        )

    @classmethod
    def constant(cls, value, L: int) -> "Profile":
        return cls(tuple([gmpy2.mpfr(value)] * (2 * L + 1)))


# --- model files -----------------------------------------------------------

MODEL_KEYS = ("J", "L", "w", "window.kind", "window.table", "field.values", "field.probs", "precision")


def parse_model_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of raw strings.

    Blank lines and ``#`` comments are ignored. Lists are comma separated.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def model_from_mapping(cfg: dict, precision: int | None = None) -> ChainModel:
    for key in ("J", "L"):
        if key not in cfg:
            raise ValidationError(f"model file is missing {key!r}")
    try:
        L = int(cfg["L"])
        w = int(cfg.get("w", 1))
        digits = precision if precision is not None else int(cfg.get("precision", default_digits()))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    kind = cfg.get("window.kind", "tabulated" if "window.table" in cfg else "triangular")
    table = _split(cfg["window.table"]) if "window.table" in cfg else None
    fv = _split(cfg["field.values"]) if "field.values" in cfg else None
    fp = _split(cfg["field.probs"]) if "field.probs" in cfg else None
    return ChainModel.build(cfg["J"], L, w, kind, table, fv, fp, digits)


def read_model_file(path, precision: int | None = None) -> ChainModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_mapping(parse_model_text(fh.read()), precision)
