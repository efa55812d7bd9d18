"""Phase classification, limiting log-partition values, centerings and envelopes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

from core.errors import DomainError

from .speedfn import SpeedFunction

log = logging.getLogger("crem.sim")

__all__ = [
    "Phase",
    "PhaseLabel",
    "EnvelopeSpec",
    "classify",
    "boundary_distance",
    "limit_b1",
    "limit_b2",
    "limit_b3",
    "m_of_t",
    "m_A",
    "envelope_U",
]

SQRT2 = math.sqrt(2.0)
_INV_SQRT2 = 1.0 / SQRT2


class Phase(str, Enum):
    B1 = "B1"
    B2 = "B2"
    B3 = "B3"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class PhaseLabel:
    label: Phase
    predicted_limit: float
    region: Phase  # strict-inequality region, also set on the boundary


@dataclass(frozen=True)
class EnvelopeSpec:
    gamma: float
    C: float

    def __post_init__(self) -> None:
        if not (0 < self.gamma < 1):
            raise DomainError(f"envelope gamma must lie in (0, 1), got {self.gamma}")
        if not self.C > 0:
            raise DomainError(f"envelope C must be > 0, got {self.C}")
        if self.gamma >= 0.5:
            log.warning("[envelope] gamma=%s >= 1/2; the envelope lemma expects gamma < 1/2", self.gamma)


def limit_b1(sigma: float, tau: float) -> float:
    return 1.0 + 0.5 * (sigma * sigma - tau * tau)


def limit_b2(sigma: float, _tau: float = 0.0) -> float:
    return SQRT2 * abs(sigma)


def limit_b3(sigma: float, _tau: float = 0.0) -> float:
    return 0.5 + sigma * sigma


_LIMITS = {Phase.B1: limit_b1, Phase.B2: limit_b2, Phase.B3: limit_b3}


def _segment_distance(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> float:
    dx, dy = bx - ax, by - ay
    u = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    u = min(1.0, max(0.0, u))
    return math.hypot(px - (ax + u * dx), py - (ay + u * dy))


def boundary_distance(sigma: float, tau: float) -> float:
    """Euclidean distance from (sigma, tau) to the phase boundaries."""
    a, b = abs(sigma), abs(tau)
    # B1|B2: |sigma|+|tau| = sqrt2 with |sigma| >= 1/sqrt2
    d_line = _segment_distance(a, b, _INV_SQRT2, _INV_SQRT2, SQRT2, 0.0)
    # B1|B3: sigma^2+tau^2 = 1 with |sigma| <= 1/sqrt2
    angle = math.atan2(b, a)
    if math.pi / 4 <= angle <= math.pi / 2:
        d_arc = abs(math.hypot(a, b) - 1.0)
    else:
        d_arc = min(math.hypot(a - _INV_SQRT2, b - _INV_SQRT2), math.hypot(a, b - 1.0))
    # B2|B3: |sigma| = 1/sqrt2 with |tau| >= 1/sqrt2
    if b >= _INV_SQRT2:
        d_ray = abs(a - _INV_SQRT2)
    else:
        d_ray = math.hypot(a - _INV_SQRT2, b - _INV_SQRT2)
    return min(d_line, d_arc, d_ray)


def _region(sigma: float, tau: float) -> Phase:
    a2 = sigma * sigma
    if 2 * a2 > 1 and abs(sigma) + abs(tau) > SQRT2:
        return Phase.B2
    if 2 * a2 < 1 and a2 + tau * tau > 1:
        return Phase.B3
    return Phase.B1


def classify(sigma: float, tau: float, tol: float = 1e-9) -> PhaseLabel:
    region = _region(sigma, tau)
    limit = _LIMITS[region](sigma, tau)
    label = Phase.BOUNDARY if boundary_distance(sigma, tau) <= tol else region
    return PhaseLabel(label=label, predicted_limit=limit, region=region)


def m_of_t(t: float) -> float:
    """Centering of the maximum: sqrt2*t - log(t)/(2*sqrt2)."""
    if not t > 0:
        raise DomainError(f"m(t) needs t > 0, got {t}")
    return SQRT2 * t - math.log(t) / (2.0 * SQRT2)


def m_A(s: float, t: float, A: SpeedFunction) -> float:
    """Time-s centering under profile A; 0 at s = 0."""
    if not t > 0 or s < 0 or s > t * (1.0 + 1e-12):
        raise DomainError(f"m_A needs 0 <= s <= t and t > 0, got s={s}, t={t}")
    if s == 0:
        return 0.0
    v = A.variance_profile(s, t)
    return math.sqrt(2.0 * s * v) - math.sqrt(v) / (2.0 * math.sqrt(2.0 * s)) * math.log(s)


def envelope_U(s: float, t: float, A: SpeedFunction, spec: EnvelopeSpec) -> float:
    """m_A(s) + (max(C, min(t*A(s/t), t - t*A(s/t))))^gamma."""
    v = A.variance_profile(s, t)
    clamp = max(spec.C, min(v, t - v))
    return m_A(s, t, A) + clamp**spec.gamma
