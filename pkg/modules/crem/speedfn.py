"""Speed functions A on [0,1] and their variance profiles s -> t*A(s/t)."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DomainError, MalformedKnots, NotAttained

__all__ = [
    "SpeedForm",
    "SpeedFunction",
    "Violation",
    "ValidationReport",
    "DEFAULT_GRID_N",
    "validate",
    "parse_speed",
    "identity",
]

DEFAULT_GRID_N = 1024
ENDPOINT_TOL = 1e-12
SLOPE_STEP = 1e-4
SLOPE_REL_TOL = 0.05
_DOMAIN_SLACK = 1e-12


class SpeedForm(str, Enum):
    EXP = "exp"
    PWL = "pwl"


@dataclass(frozen=True)
class SpeedFunction:
    """A non-decreasing profile with A(0)=0, A(1)=1.

    ``ExpFamily(a)``: A(x) = (e^{ax} - 1)/(e^a - 1), endpoint slopes in closed form.
    ``PiecewiseLinear``: ordered (x, A(x)) knots spanning [0, 1].
    """

    form: SpeedForm
    a: float = 0.0
    knots: Tuple[Tuple[float, float], ...] = ()
    end_slope_infinite: bool = False
    _xs: Tuple[float, ...] = field(default=(), repr=False, compare=False)
    _ys: Tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.form is SpeedForm.PWL:
            if len(self.knots) < 2:
                raise MalformedKnots("piecewise-linear speed needs at least two knots")
            xs = tuple(float(x) for x, _ in self.knots)
            ys = tuple(float(y) for _, y in self.knots)
            for left, right in zip(xs, xs[1:]):
                if not right > left:
                    raise MalformedKnots(f"knots must be strictly increasing in x; {right} follows {left}")
            if abs(xs[0]) > ENDPOINT_TOL or abs(xs[-1] - 1.0) > ENDPOINT_TOL:
                raise MalformedKnots(f"knots must span [0, 1]; got [{xs[0]}, {xs[-1]}]")
            object.__setattr__(self, "_xs", xs)
            object.__setattr__(self, "_ys", ys)
        elif not math.isfinite(self.a):
            raise DomainError(f"exp family parameter must be finite, got {self.a}")

    # ---------- constructors ----------
    @classmethod
    def exp_family(cls, a: float) -> "SpeedFunction":
        return cls(form=SpeedForm.EXP, a=float(a))

    @classmethod
    def piecewise(cls, knots: Sequence[Tuple[float, float]], *, end_slope_infinite: bool = False) -> "SpeedFunction":
        return cls(
            form=SpeedForm.PWL,
            knots=tuple((float(x), float(y)) for x, y in knots),
            end_slope_infinite=end_slope_infinite,
        )

    # ---------- derived ----------
    @property
    def is_identity(self) -> bool:
        """True for A(x) = x, the standard BBM profile."""
        if self.form is SpeedForm.EXP:
            return abs(self.a) < 1e-12
        return self._xs == self._ys and len(self._xs) == 2

    @property
    def sigma_b_sq(self) -> float:
        """A'(0)."""
        if self.form is SpeedForm.EXP:
            if abs(self.a) < 1e-12:
                return 1.0
            return self.a / math.expm1(self.a)
        return (self._ys[1] - self._ys[0]) / (self._xs[1] - self._xs[0])

    @property
    def sigma_e_sq(self) -> float:
        """A'(1); ``math.inf`` when flagged infinite."""
        if self.end_slope_infinite:
            return math.inf
        if self.form is SpeedForm.EXP:
            if abs(self.a) < 1e-12:
                return 1.0
            return self.a / -math.expm1(-self.a)
        return (self._ys[-1] - self._ys[-2]) / (self._xs[-1] - self._xs[-2])

    @property
    def spec_string(self) -> str:
        if self.form is SpeedForm.EXP:
            return f"exp:{self.a!r}"
        body = ";".join(f"{x!r},{y!r}" for x, y in self.knots)
        return f"pwl:{body}" + ("|inf" if self.end_slope_infinite else "")

    # ---------- evaluation ----------
    def _raw(self, x: float) -> float:
        if self.form is SpeedForm.EXP:
            if abs(self.a) < 1e-12:
                return x
            return math.expm1(self.a * x) / math.expm1(self.a)
        xs, ys = self._xs, self._ys
        i = bisect.bisect_right(xs, x) - 1
        if i >= len(xs) - 1:
            return ys[-1]
        if i < 0:
            return ys[0]
        return ys[i] + (x - xs[i]) * (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])

    def eval(self, x: float) -> float:
        if not (-_DOMAIN_SLACK <= x <= 1.0 + _DOMAIN_SLACK) or math.isnan(x):
            raise DomainError(f"speed function evaluated outside [0, 1]: x={x}")
        return self._raw(min(max(x, 0.0), 1.0))

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.size and (np.nanmin(xs) < -_DOMAIN_SLACK or np.nanmax(xs) > 1.0 + _DOMAIN_SLACK or np.isnan(xs).any()):
            raise DomainError("speed function evaluated outside [0, 1]")
        xs = np.clip(xs, 0.0, 1.0)
        if self.form is SpeedForm.EXP:
            if abs(self.a) < 1e-12:
                return xs.copy()
            return np.expm1(self.a * xs) / math.expm1(self.a)
        return np.interp(xs, self._xs, self._ys)

    def variance_profile(self, s: float, t: float) -> float:
        """Sigma^2(s) = t*A(s/t)."""
        if not t > 0:
            raise DomainError(f"horizon must be > 0, got t={t}")
        if not (-_DOMAIN_SLACK * t <= s <= t * (1.0 + _DOMAIN_SLACK)):
            raise DomainError(f"time s={s} outside [0, {t}]")
        if self.is_identity:
            return min(max(s, 0.0), t)
        return t * self._raw(min(max(s / t, 0.0), 1.0))

    def inverse_variance_profile(self, v: float, t: float, *, tol: float = 1e-10) -> float:
        """Smallest s in [0, t] with t*A(s/t) >= v, found by bisection."""
        if not t > 0:
            raise DomainError(f"horizon must be > 0, got t={t}")
        if v < 0:
            raise DomainError(f"variance must be >= 0, got {v}")
        if v > t * (1.0 + _DOMAIN_SLACK):
            raise NotAttained(f"variance {v} exceeds t={t}")
        if v == 0:
            return 0.0
        lo, hi = 0.0, t
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.variance_profile(mid, t) >= v:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-3 * tol * t:
                break
        return hi


def identity() -> SpeedFunction:
    """A(x) = x (standard BBM)."""
    return SpeedFunction.piecewise([(0.0, 0.0), (1.0, 1.0)])


# ---------- validation ----------
@dataclass(frozen=True)
class Violation:
    condition: str
    x: Optional[float]
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()
    notes: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def conditions(self) -> List[str]:
        return [v.condition for v in self.violations]


def validate(A: SpeedFunction, grid_n: int = DEFAULT_GRID_N, strict: bool = True) -> ValidationReport:
    """Check the weak-correlation conditions on a grid of ``grid_n`` points.

    Non-strict mode skips only the A(x) < x check, for A(x) = x.
    """
    if grid_n < 2:
        raise DomainError(f"grid_n must be >= 2, got {grid_n}")
    if A.form is SpeedForm.PWL:
        xs_check = A._xs
        for left, right in zip(xs_check, xs_check[1:]):
            if not right > left:
                raise MalformedKnots(f"knots must be strictly increasing in x; {right} follows {left}")

    violations: List[Violation] = []
    notes: List[str] = []

    a0, a1 = A._raw(0.0), A._raw(1.0)
    if abs(a0) > ENDPOINT_TOL:
        violations.append(Violation("A(0)=0 fails", 0.0, f"A(0)={a0!r}"))
    if abs(a1 - 1.0) > ENDPOINT_TOL:
        violations.append(Violation("A(1)=1 fails", 1.0, f"A(1)={a1!r}"))

    grid = np.linspace(0.0, 1.0, grid_n)
    if A.form is SpeedForm.PWL:
        grid = np.union1d(grid, np.asarray(A._xs))
    values = A.eval_many(grid)

    steps = np.diff(values)
    if (steps < 0).any():
        i = int(np.argmin(steps))
        violations.append(Violation("A non-decreasing fails", float(grid[i + 1]), f"drop {steps[i]!r}"))

    if strict:
        interior = (grid > 0.0) & (grid < 1.0)
        excess = values[interior] - grid[interior]
        if excess.size and (excess >= 0).any():
            i = int(np.argmax(excess))
            x_bad = float(grid[interior][i])
            violations.append(Violation("A(x)<x fails", x_bad, f"A({x_bad!r})={values[interior][i]!r}"))

    sb = A.sigma_b_sq
    fd = (A._raw(SLOPE_STEP) - A._raw(0.0)) / SLOPE_STEP
    if abs(fd - sb) > SLOPE_REL_TOL * max(sb, 1e-3):
        violations.append(Violation("A'(0) slope mismatch", 0.0, f"finite difference {fd!r} vs sigma_b_sq {sb!r}"))
    se = A.sigma_e_sq
    if math.isfinite(se):
        fd_end = (A._raw(1.0) - A._raw(1.0 - SLOPE_STEP)) / SLOPE_STEP
        if abs(fd_end - se) > SLOPE_REL_TOL * max(se, 1e-3):
            violations.append(Violation("A'(1) slope mismatch", 1.0, f"finite difference {fd_end!r} vs sigma_e_sq {se!r}"))
    else:
        notes.append("sigma_e_sq flagged infinite; second-moment oracles will refuse")

    if A.form is SpeedForm.PWL:
        notes.append(f"piecewise-linear with {len(A.knots)} knots")
    return ValidationReport(violations=tuple(violations), notes=tuple(notes))


def parse_speed(text: str) -> SpeedFunction:
    """Parse ``exp:3.0``, ``pwl:0,0;0.5,0.4;1,1`` (optional ``|inf`` suffix) or ``bbm``."""
    raw = (text or "").strip()
    kind, _, body = raw.partition(":")
    kind = kind.strip().lower()
    if kind in ("bbm", "identity"):
        return identity()
    if kind == "exp":
        try:
            return SpeedFunction.exp_family(float(body))
        except ValueError:
            raise DomainError(f"bad exp speed parameter {body!r}") from None
    if kind == "pwl":
        infinite = False
        if "|" in body:
            body, _, flag = body.partition("|")
            infinite = flag.strip().lower() == "inf"
        knots: List[Tuple[float, float]] = []
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = [p.strip() for p in chunk.split(",")]
            if len(parts) != 2:
                raise MalformedKnots(f"knot {chunk!r} is not an 'x,y' pair")
            try:
                knots.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise MalformedKnots(f"knot {chunk!r} is not numeric") from None
        return SpeedFunction.piecewise(knots, end_slope_infinite=infinite)
    raise DomainError(f"unknown speed spec {text!r}; expected exp:<a>, pwl:<knots> or bbm")
