"""Estimators and checks applied to merged replica outputs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import kstest

from core.errors import DegenerateDesign, TooFewSamples

__all__ = [
    "MomentSummary",
    "IsotropyReport",
    "RatioEstimate",
    "SlopeFit",
    "summarize",
    "isotropy_tests",
    "gaussianity_ratio",
    "mean_ratio",
    "slope_fit",
    "tail_index_hill",
    "z_score",
    "successive_ratios",
]

MIXED_MOMENTS: Tuple[Tuple[int, int], ...] = ((1, 0), (2, 0), (2, 1), (3, 1))
MIN_ISOTROPY_SAMPLES = 100


@dataclass(frozen=True)
class MomentSummary:
    n: int
    mean: complex
    abs2_mean: float
    abs4_mean: float
    stderr_mean: float
    stderr_abs2: float


@dataclass(frozen=True)
class IsotropyReport:
    ks_phase_p: float
    mixed_moment_z: Dict[Tuple[int, int], float]

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"a": a, "b": b, "z": z} for (a, b), z in self.mixed_moment_z.items()],
            columns=["a", "b", "z"],
        )

    @property
    def max_abs_z(self) -> float:
        return max(abs(z) for z in self.mixed_moment_z.values())


@dataclass(frozen=True)
class RatioEstimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    resid: float  # root mean square residual


def _as_complex(samples: Iterable[complex], minimum: int, what: str) -> np.ndarray:
    z = np.asarray(list(samples), dtype=complex)
    if z.size < minimum:
        raise TooFewSamples(f"{what} needs at least {minimum} samples, got {z.size}")
    return z


def _jackknife(estimator: Callable[..., np.ndarray], *columns: np.ndarray) -> Tuple[float, float]:
    """Estimate and jackknife stderr of a smooth function of sample means.

    ``estimator`` receives one mean per column and must accept arrays, so the
    n leave-one-out values are computed in one call.
    """
    n = columns[0].shape[0]
    full = float(estimator(*(c.mean() for c in columns)))
    loo = [(c.sum() - c) / (n - 1) for c in columns]
    values = np.asarray(estimator(*loo), dtype=float)
    spread = values - values.mean()
    return full, math.sqrt((n - 1) / n * float(np.dot(spread, spread)))


def summarize(samples: Iterable[complex]) -> MomentSummary:
    z = _as_complex(samples, 2, "summarize")
    n = z.size
    abs2 = z.real**2 + z.imag**2
    mean = complex(z.mean())
    dev = z - mean
    stderr_mean = math.sqrt(float(np.sum(dev.real**2 + dev.imag**2)) / (n * (n - 1)))
    abs2_mean, stderr_abs2 = _jackknife(lambda m: m, abs2)
    return MomentSummary(
        n=n,
        mean=mean,
        abs2_mean=abs2_mean,
        abs4_mean=float(np.mean(abs2 * abs2)),
        stderr_mean=stderr_mean,
        stderr_abs2=stderr_abs2,
    )


def isotropy_tests(
    samples: Iterable[complex],
    center: complex = 0j,
    targets: Optional[Mapping[Tuple[int, int], complex]] = None,
) -> IsotropyReport:
    """KS p-value of arg/(2 pi) against uniform, plus mixed-moment z-scores.

    Both run on ``samples - center``. For a rotation-invariant law
    E[N^a conj(N)^b] = 0 whenever a != b; ``targets`` replaces that 0 where
    the exact finite-sample moment is known.
    """
    z = _as_complex(samples, MIN_ISOTROPY_SAMPLES, "isotropy_tests") - center
    n = z.size
    targets = targets or {}
    phase = np.mod(np.angle(z) / (2.0 * math.pi), 1.0)
    ks_p = float(kstest(phase, "uniform", method="asymp").pvalue)
    scores: Dict[Tuple[int, int], float] = {}
    conj = np.conj(z)
    for a, b in MIXED_MOMENTS:
        w = z**a * conj**b
        mean = w.mean()
        dev = w - mean
        se = math.sqrt(float(np.sum(dev.real**2 + dev.imag**2)) / (n * (n - 1)))
        gap = abs(mean - targets.get((a, b), 0j))
        scores[(a, b)] = gap / se if se > 0 else (0.0 if gap == 0 else math.inf)
    return IsotropyReport(ks_phase_p=ks_p, mixed_moment_z=scores)


def gaussianity_ratio(samples: Iterable[complex], center: complex = 0j) -> RatioEstimate:
    """E|N - center|^4 / (E|N - center|^2)^2; 2 for an isotropic complex Gaussian."""
    z = _as_complex(samples, MIN_ISOTROPY_SAMPLES, "gaussianity_ratio") - center
    abs2 = z.real**2 + z.imag**2
    value, stderr = _jackknife(lambda m4, m2: m4 / (m2 * m2), abs2 * abs2, abs2)
    return RatioEstimate(value, stderr)


def mean_ratio(numerator: Sequence[float], denominator: Sequence[float]) -> RatioEstimate:
    """mean(numerator)/mean(denominator) over paired samples, jackknife stderr."""
    num = np.asarray(numerator, dtype=float)
    den = np.asarray(denominator, dtype=float)
    if num.size < 2 or num.size != den.size:
        raise TooFewSamples(f"mean_ratio needs >= 2 paired samples, got {num.size} and {den.size}")
    value, stderr = _jackknife(lambda a, b: a / b, num, den)
    return RatioEstimate(value, stderr)


def slope_fit(pairs: Iterable[Tuple[float, float]]) -> SlopeFit:
    """Least squares of value against t."""
    data = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    ts, values = data[:, 0], data[:, 1]
    if np.unique(ts).size < 3:
        raise DegenerateDesign(f"slope_fit needs at least 3 distinct t, got {np.unique(ts).size}")
    slope, intercept = np.polyfit(ts, values, 1)
    residual = values - (slope * ts + intercept)
    return SlopeFit(float(slope), float(intercept), float(math.sqrt(np.mean(residual**2))))


def tail_index_hill(values: Iterable[float], k: int | None = None) -> float:
    """Hill estimate of the tail index from the k largest magnitudes. Exploratory."""
    x = np.sort(np.abs(np.asarray(list(values), dtype=float)))[::-1]
    x = x[x > 0]
    if k is None:
        k = max(10, int(math.sqrt(x.size)))
    if x.size <= k:
        raise TooFewSamples(f"tail_index_hill needs more than k={k} non-zero samples, got {x.size}")
    logs = np.log(x[:k]) - math.log(x[k])
    return float(k / np.sum(logs))


def z_score(estimate: float, stderr: float, target: float) -> float:
    if stderr <= 0:
        return 0.0 if estimate == target else math.copysign(math.inf, estimate - target)
    return (estimate - target) / stderr


def successive_ratios(values: Sequence[float]) -> list[float]:
    return [b / a if a else math.inf for a, b in zip(values, values[1:])]
