"""Exact finite-t moments used as ground truth for the Monte Carlo runs.

Pair sums go through the many-to-two weight K*e^{2t-s} ds for a pair whose
lines split at time s, together with the closed-form Gaussian moment of the
pair (``pair_moment_kernel``). The diagonal is the same kernel at d = t.
"""
from __future__ import annotations

import cmath
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

from scipy.stats import norm

from core.errors import DivergenceWarning, DomainError, InfiniteEndSlope

from .partition import PHASE_FACTOR
from .phases import EnvelopeSpec, envelope_U
from .speedfn import SpeedForm, SpeedFunction

log = logging.getLogger("crem.oracles")

__all__ = [
    "QuadratureSpec",
    "first_moment",
    "pair_moment_kernel",
    "second_moment_abs",
    "second_moment_b1_normalized",
    "first_moment_b3",
    "second_moment_pseudo",
    "plateau_abs",
    "envelope_union_bound",
    "integrate_adaptive_simpson",
]

# Substitute u = t - s once A'(1) passes this.
STEEP_END_SLOPE = 10.0
_PANELS = 24


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-9
    max_depth: int = 40

    def __post_init__(self) -> None:
        if not self.rel_tol > 0:
            raise DomainError(f"quadrature rel_tol must be > 0, got {self.rel_tol}")
        if self.max_depth < 1:
            raise DomainError(f"quadrature max_depth must be >= 1, got {self.max_depth}")


# ---------- closed forms ----------
def first_moment(sigma: float, tau: float, rho: float, t: float, phase_factor: int = PHASE_FACTOR) -> complex:
    """E[X_{beta,rho}(t)] = e^{t(1 + (sigma^2 - tau^2)/2)} * e^{i*phase_factor*rho*sigma*tau*t}."""
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    magnitude = math.exp(t * (1.0 + 0.5 * (sigma * sigma - tau * tau)))
    angle = phase_factor * rho * sigma * tau * t
    return complex(magnitude * math.cos(angle), magnitude * math.sin(angle))


def pair_moment_kernel(A: SpeedFunction, sigma: float, tau: float, d: float, t: float) -> float:
    """E[e^{sigma(x_k + x_k') + i tau(y_k - y_k')}] for two leaves split at d.

    Real for every rho: the cross terms in x and y cancel between the two
    leaves. At d = t this is the diagonal value e^{2 sigma^2 t}.
    """
    lam = sigma * sigma + tau * tau
    return math.exp(t * (sigma * sigma - tau * tau) + lam * A.variance_profile(d, t))


def plateau_abs(A: SpeedFunction, sigma: float, tau: float, K: float, *, include_diagonal: bool = True) -> float:
    """Large-t value of E|N|^2: K/((sigma^2 + tau^2) sigma_e^2 - 1), plus 1 for the diagonal."""
    if A.end_slope_infinite:
        raise InfiniteEndSlope("A'(1) is infinite; the large-t second moment is not finite")
    denom = (sigma * sigma + tau * tau) * A.sigma_e_sq - 1.0
    if denom <= 0:
        warnings.warn(DivergenceWarning(f"(sigma^2+tau^2)*sigma_e^2 = {denom + 1.0:.6g} <= 1; E|N|^2 grows with t"), stacklevel=2)
        return math.inf
    return K / denom + (1.0 if include_diagonal else 0.0)


# ---------- quadrature ----------
def integrate_adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float,
    max_depth: int,
) -> Tuple[float, float]:
    """Integrate f over [a, b] to absolute ``tol``; returns (value, error estimate)."""

    def _simpson(fa: float, fm: float, fb: float, h: float) -> float:
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def _adaptive(a: float, b: float, fa: float, fm: float, fb: float, whole: float, depth: int, tol: float) -> Tuple[float, float]:
        m = 0.5 * (a + b)
        h = b - a
        flm = f(0.5 * (a + m))
        frm = f(0.5 * (m + b))
        left = _simpson(fa, flm, fm, 0.5 * h)
        right = _simpson(fm, frm, fb, 0.5 * h)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0, abs(delta) / 15.0
        lv, le = _adaptive(a, m, fa, flm, fm, left, depth + 1, 0.5 * tol)
        rv, re = _adaptive(m, b, fm, frm, fb, right, depth + 1, 0.5 * tol)
        return lv + rv, le + re

    if b == a:
        return 0.0, 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return _adaptive(a, b, fa, fm, fb, _simpson(fa, fm, fb, b - a), 0, tol)


def _panels(a: float, b: float, toward_b: bool) -> List[Tuple[float, float]]:
    """Split [a, b] geometrically so panels shrink toward one end."""
    width = b - a
    cuts = [width * 0.5**k for k in range(1, _PANELS)]
    if toward_b:
        points = [a] + [b - c for c in cuts] + [b]
    else:
        points = [a] + [a + c for c in reversed(cuts)] + [b]
    return [(lo, hi) for lo, hi in zip(points, points[1:]) if hi > lo]


def _integrate(
    f: Callable[[float], float], a: float, b: float, quad: QuadratureSpec, *, toward_b: bool, scale: float = 0.0
) -> float:
    """Panelled adaptive Simpson; the tolerance is relative to max(|coarse estimate|, scale)."""
    panels = _panels(a, b, toward_b)
    coarse = 0.0
    for lo, hi in panels:
        coarse += (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi))
    tol = quad.rel_tol * max(abs(coarse), scale, 1e-300) / len(panels)
    total = err = 0.0
    for lo, hi in panels:
        value, e = integrate_adaptive_simpson(f, lo, hi, tol, quad.max_depth)
        total += value
        err += e
    log.debug("[quadrature] panels=%d value=%r err=%.3g", len(panels), total, err)
    return total


def _linear_segments(A: SpeedFunction) -> Optional[List[Tuple[float, float, float]]]:
    """(x0, x1, slope) per segment when A is piecewise linear, else None."""
    if A.form is SpeedForm.PWL:
        xs, ys = A._xs, A._ys
        return [(xs[i], xs[i + 1], (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])) for i in range(len(xs) - 1)]
    if A.is_identity:
        return [(0.0, 1.0, 1.0)]
    return None


def _exp_integral(h0: float, slope: float, length: float) -> float:
    """Integral of e^{h0 + slope*u} over u in [0, length]."""
    if slope == 0.0:
        return math.exp(h0) * length
    return math.exp(h0) * math.expm1(slope * length) / slope


def _exact_linear(A: SpeedFunction, exponent: Callable[[float], float], lam: float, t: float, sign: float) -> float:
    """Integral over [0, t] of e^{exponent(s)} where exponent = sign*s + lam*t*A(s/t) + const."""
    total = 0.0
    for x0, x1, slope in _linear_segments(A):
        s0, s1 = x0 * t, x1 * t
        total += _exp_integral(exponent(s0), sign + lam * slope, s1 - s0)
    return total


def _end_complement(A: SpeedFunction, x: float) -> float:
    """1 - A(1 - x), kept accurate for small x."""
    if A.form is SpeedForm.EXP and not A.is_identity:
        return math.expm1(-A.a * x) / math.expm1(-A.a)
    return 1.0 - A.eval(1.0 - x)


# ---------- second moments ----------
def _off_diagonal_abs(A: SpeedFunction, lam: float, t: float, quad: QuadratureSpec) -> float:
    """Integral over [0, t] of e^{t - s - lam(t - tA(s/t))} ds."""
    if _linear_segments(A) is not None:
        return _exact_linear(A, lambda s: (t - s) - lam * (t - A.variance_profile(s, t)), lam, t, -1.0)
    if A.sigma_e_sq > STEEP_END_SLOPE:
        return _integrate(lambda u: math.exp(u - lam * t * _end_complement(A, u / t)), 0.0, t, quad, toward_b=False)
    return _integrate(lambda s: math.exp((t - s) - lam * (t - A.variance_profile(s, t))), 0.0, t, quad, toward_b=True)


def second_moment_abs(
    A: SpeedFunction,
    sigma: float,
    tau: float,
    rho: float,
    t: float,
    K: float,
    quad: QuadratureSpec = QuadratureSpec(),
    *,
    include_diagonal: bool = True,
) -> float:
    """E|N_{tau,sigma}(t)|^2 with N = X e^{-t(1/2 + sigma^2)}.

    Equals 1 + K * int_0^t e^{t - s - (sigma^2 + tau^2)(t - tA(s/t))} ds; the
    leading 1 is the diagonal and is dropped with ``include_diagonal=False``.
    ``rho`` does not enter.
    """
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    if A.end_slope_infinite:
        raise InfiniteEndSlope("second_moment_abs needs a finite A'(1)")
    lam = sigma * sigma + tau * tau
    if lam * A.sigma_e_sq <= 1.0:
        warnings.warn(
            DivergenceWarning(f"(sigma^2+tau^2)*sigma_e^2 = {lam * A.sigma_e_sq:.6g} <= 1; E|N|^2 grows with t"),
            stacklevel=2,
        )
    diagonal = 1.0 if include_diagonal else 0.0
    if t == 0:
        return diagonal
    value = diagonal + K * _off_diagonal_abs(A, lam, t, quad)
    log.debug("[oracle] kind=abs sigma=%r tau=%r rho=%r t=%r value=%r", sigma, tau, rho, t, value)
    return value


def first_moment_b3(sigma: float, tau: float, rho: float, t: float, phase_factor: int = PHASE_FACTOR) -> complex:
    """E[N_{tau,sigma}(t)] = e^{-t(sigma^2 + tau^2 - 1)/2} * e^{i*phase_factor*rho*sigma*tau*t}."""
    return first_moment(sigma, tau, rho, t, phase_factor) * math.exp(-t * (0.5 + sigma * sigma))


def _complex_linear(A: SpeedFunction, exponent: Callable[[float], complex], mu: complex, t: float) -> complex:
    """Integral over [0, t] of e^{exponent(s)} where exponent = -s + mu*t*A(s/t) + const."""
    total = 0j
    for x0, x1, slope in _linear_segments(A):
        s0, s1 = x0 * t, x1 * t
        c = -1.0 + mu * slope
        h0 = cmath.exp(exponent(s0))
        total += h0 * (s1 - s0) if c == 0 else h0 * (cmath.exp(c * (s1 - s0)) - 1.0) / c
    return total


def second_moment_pseudo(
    A: SpeedFunction,
    sigma: float,
    tau: float,
    rho: float,
    t: float,
    K: float,
    quad: QuadratureSpec = QuadratureSpec(),
    phase_factor: int = PHASE_FACTOR,
) -> complex:
    """E[N_{tau,sigma}(t)^2], no conjugate.

    Pairs split at s contribute e^{(sigma^2 - tau^2 + 2i*rho*sigma*tau)(t + tA(s/t))};
    after normalization the diagonal is e^{-2 tau^2 t + 4i*rho*sigma*tau*t}. Both
    parts vanish as t grows in B3, which is what makes N isotropic in the limit.
    """
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    turn = 2.0 * phase_factor * rho * sigma * tau
    mu = complex(sigma * sigma - tau * tau, turn)
    lam = sigma * sigma + tau * tau
    diagonal = cmath.exp(complex(-2.0 * tau * tau * t, 2.0 * turn * t))
    if t == 0:
        return diagonal

    def exponent(s: float) -> complex:
        return t * (1.0 - lam) - s + complex(0.0, turn * t) + mu * A.variance_profile(s, t)

    if _linear_segments(A) is not None:
        integral = _complex_linear(A, exponent, mu, t)
    else:
        size = _integrate(lambda s: math.exp(exponent(s).real), 0.0, t, quad, toward_b=False)
        real = _integrate(lambda s: cmath.exp(exponent(s)).real, 0.0, t, quad, toward_b=False, scale=size)
        imag = _integrate(lambda s: cmath.exp(exponent(s)).imag, 0.0, t, quad, toward_b=False, scale=size)
        integral = complex(real, imag)
    value = diagonal + K * integral
    log.debug("[oracle] kind=pseudo sigma=%r tau=%r rho=%r t=%r value=%r", sigma, tau, rho, t, value)
    return value


def second_moment_b1_normalized(
    A: SpeedFunction,
    sigma: float,
    tau: float,
    rho: float,
    t: float,
    K: float,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """E|normalize_b1(X)|^2 = e^{-t(1 - sigma^2 - tau^2)} + K * int_0^t e^{-s + (sigma^2+tau^2) tA(s/t)} ds."""
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    lam = sigma * sigma + tau * tau
    if lam >= 1.0:
        warnings.warn(DivergenceWarning(f"sigma^2+tau^2 = {lam:.6g} >= 1; the B1 second moment grows with t"), stacklevel=2)
    if t == 0:
        return 1.0
    diagonal = math.exp(-t * (1.0 - lam))
    def exponent(s: float) -> float:
        return -s + lam * A.variance_profile(s, t)

    if _linear_segments(A) is not None:
        integral = _exact_linear(A, exponent, lam, t, -1.0)
    else:
        integral = _integrate(lambda s: math.exp(exponent(s)), 0.0, t, quad, toward_b=False)
    value = diagonal + K * integral
    log.debug("[oracle] kind=b1 sigma=%r tau=%r rho=%r t=%r value=%r", sigma, tau, rho, t, value)
    return value


def envelope_union_bound(A: SpeedFunction, gamma: float, C: float, t: float) -> float:
    """min(1, sum_{j=1}^{floor t} e^j * P(x(j) > U(j))) with x(j) ~ N(0, tA(j/t))."""
    spec = EnvelopeSpec(gamma=gamma, C=C)
    total = 0.0
    for j in range(1, int(math.floor(t)) + 1):
        u = envelope_U(float(j), t, A, spec)
        v = A.variance_profile(float(j), t)
        if v <= 0:
            total += math.exp(j) if u < 0 else 0.0
            continue
        total += math.exp(j + float(norm.logsf(u / math.sqrt(v))))
        if total >= 1.0:
            return 1.0
    return min(1.0, total)
