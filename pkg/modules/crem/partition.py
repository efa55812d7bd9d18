"""Overflow-safe complex partition sums and their phase normalizations.

A ``ScaledComplex`` holds ``(mantissa + err) * e^{log_scale}``. Real and
imaginary parts are accumulated with an error-free two-sum, so sums with
heavy cancellation keep their low-order bits.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from core.errors import DomainError

from .branching import OffspringDistribution
from .phases import m_of_t

log = logging.getLogger("crem.sim")

__all__ = [
    "PHASE_FACTOR",
    "ComplexTemperature",
    "ScaledComplex",
    "accumulate",
    "accumulate_many",
    "normalize_b1",
    "normalize_b2",
    "normalize_b3",
    "coupled_martingale",
    "martingale_bbm",
    "note_phase_factor",
]

# Exponent multiplier of i*rho*sigma*tau*t in the B1 normalization. The
# Gaussian characteristic functional gives 1; the printed martingale uses 2.
PHASE_FACTOR = 1

_LN2 = math.log(2.0)
_BAND_HI = 2.0**256
_BAND_LO = 2.0**-256
_EXP_FLOOR = -745.0
_EXP_CEIL = 709.0
_phase_factor_logged = False


def note_phase_factor(phase_factor: int = PHASE_FACTOR) -> None:
    """Log the selected phase factor once per process."""
    global _phase_factor_logged
    if _phase_factor_logged:
        return
    _phase_factor_logged = True
    log.info(
        "[partition] phase_factor=%d (first moment phase e^{i*phase_factor*rho*sigma*tau*t})",
        phase_factor,
    )


@dataclass(frozen=True)
class ComplexTemperature:
    sigma: float
    tau: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and math.isfinite(self.tau)):
            raise DomainError(f"non-finite beta ({self.sigma}, {self.tau})")

    @property
    def beta(self) -> complex:
        return complex(self.sigma, self.tau)


def _two_sum(a: float, b: float) -> tuple[float, float]:
    s = a + b
    bp = s - a
    ap = s - bp
    return s, (a - ap) + (b - bp)


@dataclass(frozen=True)
class ScaledComplex:
    """Value type for sum_k e^{w_k}; zero is ``mantissa == 0``."""

    log_scale: float = 0.0
    mantissa: complex = 0j
    err: complex = 0j

    @classmethod
    def zero(cls) -> "ScaledComplex":
        return cls()

    @property
    def is_zero(self) -> bool:
        return self.mantissa == 0 and self.err == 0

    def _total(self) -> complex:
        return self.mantissa + self.err

    def canonical(self) -> "ScaledComplex":
        """Fold the error term in and rescale so |mantissa| lies in [1, 2)."""
        total = self._total()
        if total == 0:
            return ScaledComplex()
        _, k = math.frexp(abs(total))
        k -= 1
        return ScaledComplex(self.log_scale + k * _LN2, complex(math.ldexp(total.real, -k), math.ldexp(total.imag, -k)), 0j)

    def _renormalized(self) -> "ScaledComplex":
        size = abs(self.mantissa)
        if size == 0 or _BAND_LO <= size <= _BAND_HI:
            return self
        _, k = math.frexp(size)
        k -= 1
        m = complex(math.ldexp(self.mantissa.real, -k), math.ldexp(self.mantissa.imag, -k))
        e = complex(math.ldexp(self.err.real, -k), math.ldexp(self.err.imag, -k))
        return ScaledComplex(self.log_scale + k * _LN2, m, e)

    def add_scaled(self, log_scale: float, value: complex, value_err: complex = 0j) -> "ScaledComplex":
        """Add ``(value + value_err) * e^{log_scale}``."""
        if value == 0 and value_err == 0:
            return self
        if self.is_zero:
            return ScaledComplex(log_scale, value, value_err)._renormalized()
        base, m, e = self.log_scale, self.mantissa, self.err
        shift = log_scale - base
        if shift > 0:
            # rescale to the larger term so the running value never overflows
            factor = math.exp(-shift) if -shift > _EXP_FLOOR else 0.0
            base, m, e = log_scale, m * factor, e * factor
            shift = 0.0
        factor = math.exp(shift) if shift > _EXP_FLOOR else 0.0
        v, ve = value * factor, value_err * factor
        re, re_err = _two_sum(m.real, v.real)
        im, im_err = _two_sum(m.imag, v.imag)
        err = complex(e.real + ve.real + re_err, e.imag + ve.imag + im_err)
        return ScaledComplex(base, complex(re, im), err)._renormalized()

    def merge(self, other: "ScaledComplex") -> "ScaledComplex":
        return self.add_scaled(other.log_scale, other.mantissa, other.err)

    def log_abs(self) -> float:
        """log|value|; -inf for an exact zero."""
        total = self._total()
        if total == 0:
            return -math.inf
        return self.log_scale + math.log(abs(total))

    def arg(self) -> float:
        return cmath.phase(self._total())

    def scaled_value(self, log_shift: float = 0.0, phase: float = 0.0) -> complex:
        """value * e^{log_shift + i*phase}; underflow returns exact 0."""
        total = self._total()
        if total == 0:
            return 0j
        exponent = self.log_scale + log_shift
        log_mag = exponent + math.log(abs(total))
        if log_mag < _EXP_FLOOR:
            return 0j
        rotated = total * cmath.exp(1j * phase) if phase else total
        if _EXP_FLOOR < exponent < _EXP_CEIL:
            return rotated * math.exp(exponent)
        if log_mag > _EXP_CEIL:
            raise OverflowError(f"scaled value e^{log_mag:.1f} exceeds double range")
        return rotated / abs(total) * math.exp(log_mag)

    def value(self) -> complex:
        return self.scaled_value()


def accumulate(acc: ScaledComplex, exponent: complex) -> ScaledComplex:
    """acc + e^{exponent}."""
    w = complex(exponent)
    return acc.add_scaled(w.real, cmath.exp(1j * w.imag) if w.imag else 1.0 + 0j)


def accumulate_many(acc: ScaledComplex, exponents: np.ndarray) -> ScaledComplex:
    """acc + sum_k e^{exponents[k]}, one chunk at a time.

    The chunk is shifted by its largest real part and summed with
    ``math.fsum`` on each component, which is exactly rounded.
    """
    w = np.asarray(exponents)
    if w.size == 0:
        return acc
    real = w.real
    shift = float(real.max())
    terms = np.exp(w - shift) if np.iscomplexobj(w) else np.exp(real - shift).astype(complex)
    chunk = complex(math.fsum(terms.real.tolist()), math.fsum(terms.imag.tolist()))
    return acc.add_scaled(shift, chunk)


def normalize_b1(X: ScaledComplex, sigma: float, tau: float, rho: float, t: float, phase_factor: int = PHASE_FACTOR) -> complex:
    """X * e^{-t(1 + (sigma^2 - tau^2)/2) - i*phase_factor*rho*sigma*tau*t}."""
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    return X.scaled_value(-t * (1.0 + 0.5 * (sigma * sigma - tau * tau)), -phase_factor * rho * sigma * tau * t)


def normalize_b2(X: ScaledComplex, sigma: float, t: float) -> complex:
    """X * e^{-sigma*m(t)}."""
    if sigma == 0:
        return X.value()
    return X.scaled_value(-sigma * m_of_t(t))


def normalize_b3(X: ScaledComplex, sigma: float, t: float) -> complex:
    """N_{tau,sigma}(t) = X * e^{-t(1/2 + sigma^2)}."""
    return X.scaled_value(-t * (0.5 + sigma * sigma))


def coupled_martingale(X: ScaledComplex, sigma: float, sigma_b_sq: float, t: float) -> float:
    """M_{2 sigma sigma_b, 0}(t) from sum_k e^{2 sigma x_tilde_k}."""
    return X.scaled_value(-t * (1.0 + 2.0 * sigma * sigma * sigma_b_sq)).real


def martingale_bbm(
    sigma: float,
    tau: float,
    rho: float,
    t: float,
    dist: OffspringDistribution,
    rng: Tuple[np.random.Generator, ...],
    *,
    phase_factor: int = PHASE_FACTOR,
    cap: int | None = None,
) -> complex:
    """One draw of the standard-BBM martingale M_{sigma,tau}(t).

    ``rng`` is the tuple returned by ``core.rng.replica_streams``.
    """
    from .field_simulator import GridSpec, run_replica
    from .speedfn import identity

    if t == 0:
        return 1.0 + 0j
    kwargs = {} if cap is None else {"cap": cap}
    out = run_replica(identity(), dist, t, rho, GridSpec.default(t), streams=rng, betas=((sigma, tau),), **kwargs)
    return normalize_b1(out.sums[0], sigma, tau, rho, t, phase_factor)


def sum_scaled(values: Iterable[ScaledComplex]) -> ScaledComplex:
    acc = ScaledComplex()
    for v in values:
        acc = acc.merge(v)
    return acc
