"""Continuous-time Galton-Watson trees, streamed depth-first.

Particles branch at rate 1 into k >= 1 children with probability p_k; the
offspring mean is fixed at 2 so that E[n(t)] = e^t. The tree is never
materialized: ``traverse`` keeps a stack proportional to the current depth.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Protocol, Sequence, Tuple, Union

import numpy as np

from core.config import DEFAULT_POPULATION_CAP
from core.errors import DomainError, PopulationOverflow
from core.rng import DrawBuffer

log = logging.getLogger("crem.sim")

__all__ = [
    "OffspringDistribution",
    "EventKind",
    "TreeEvent",
    "TreeVisitor",
    "EventRecorder",
    "binary",
    "parse_offspring",
    "traverse",
]

_SUM_TOL = 1e-12
_MEAN_TOL = 1e-12


@dataclass(frozen=True)
class OffspringDistribution:
    """(p_1, ..., p_max); support starts at one child, so no particle dies."""

    probabilities: Tuple[float, ...]
    K: float = field(init=False)
    _cdf: Tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probabilities)
        if not probs:
            raise DomainError("offspring distribution needs at least one probability")
        if any(p < 0 for p in probs):
            raise DomainError(f"offspring probabilities must be >= 0, got {probs}")
        total = sum(probs)
        if abs(total - 1.0) > _SUM_TOL:
            raise DomainError(f"offspring probabilities sum to {total!r}, expected 1")
        mean = sum(k * p for k, p in enumerate(probs, start=1))
        if abs(mean - 2.0) > _MEAN_TOL:
            raise DomainError(f"offspring mean is {mean!r}; only mean 2 is supported")
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "K", float(sum(k * (k - 1) * p for k, p in enumerate(probs, start=1))))
        object.__setattr__(self, "_cdf", tuple(np.cumsum(probs).tolist()))

    @property
    def mean(self) -> float:
        return float(sum(k * p for k, p in enumerate(self.probabilities, start=1)))

    @property
    def p_max(self) -> int:
        return len(self.probabilities)

    @property
    def is_binary(self) -> bool:
        return self.probabilities[1:2] == (1.0,) and not any(self.probabilities[:1] + self.probabilities[2:])

    @property
    def spec_string(self) -> str:
        if self.is_binary:
            return "binary"
        return ",".join(repr(p) for p in self.probabilities)

    def sample(self, draws: DrawBuffer) -> int:
        if self.is_binary:
            return 2
        u = draws.uniform()
        return min(bisect.bisect_right(self._cdf, u), self.p_max - 1) + 1


def binary() -> OffspringDistribution:
    """p_2 = 1: mean 2, K = 2."""
    return OffspringDistribution((0.0, 1.0))


def parse_offspring(text: str) -> OffspringDistribution:
    """``binary`` or comma-separated (p_1, p_2, ...)."""
    raw = (text or "").strip().lower()
    if raw in ("binary", "2"):
        return binary()
    try:
        probs = tuple(float(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise DomainError(f"bad offspring spec {text!r}; expected 'binary' or 'p1,p2,...'") from None
    return OffspringDistribution(probs)


class EventKind(str, Enum):
    BRANCH = "branch"
    LEAF = "leaf"


@dataclass(frozen=True, slots=True)
class TreeEvent:
    kind: EventKind
    time: float
    path_depth: int
    children: int = 0


class TreeVisitor(Protocol):
    def on_branch(self, time: float, children: int, depth: int) -> None: ...

    def on_leaf(self, time: float, depth: int) -> None: ...


class EventRecorder:
    """Visitor that keeps every event; for tests and small trees only."""

    def __init__(self) -> None:
        self.events: List[TreeEvent] = []

    def on_branch(self, time: float, children: int, depth: int) -> None:
        self.events.append(TreeEvent(EventKind.BRANCH, time, depth, children))

    def on_leaf(self, time: float, depth: int) -> None:
        self.events.append(TreeEvent(EventKind.LEAF, time, depth))


def traverse(
    dist: OffspringDistribution,
    t: float,
    rng: Union[np.random.Generator, DrawBuffer],
    visitor: TreeVisitor,
    cap: int = DEFAULT_POPULATION_CAP,
) -> int:
    """Emit Branch/Leaf events depth-first and return n(t).

    Branch times follow exponential(1) waits; every leaf sits at time t.
    """
    if not t > 0:
        raise DomainError(f"horizon must be > 0, got t={t}")
    draws = rng if isinstance(rng, DrawBuffer) else DrawBuffer(rng)
    exponential = draws.exponential
    on_branch, on_leaf = visitor.on_branch, visitor.on_leaf

    stack: List[Tuple[float, int]] = [(0.0, 0)]
    pop, push = stack.pop, stack.append
    leaves = 0
    while stack:
        start, depth = pop()
        when = start + exponential()
        if when >= t:
            leaves += 1
            if leaves > cap:
                raise PopulationOverflow(leaves, cap)
            on_leaf(t, depth)
            continue
        children = dist.sample(draws)
        on_branch(when, children, depth)
        for _ in range(children):
            push((when, depth + 1))
    return leaves


def leaf_count_only(dist: OffspringDistribution, t: float, rng: Union[np.random.Generator, DrawBuffer], cap: int = DEFAULT_POPULATION_CAP) -> int:
    """n(t) without a visitor."""
    return traverse(dist, t, rng, _NullVisitor(), cap)


class _NullVisitor:
    def on_branch(self, time: float, children: int, depth: int) -> None:
        pass

    def on_leaf(self, time: float, depth: int) -> None:
        pass


def event_stream(dist: OffspringDistribution, t: float, rng: Union[np.random.Generator, DrawBuffer], cap: int = DEFAULT_POPULATION_CAP) -> Sequence[TreeEvent]:
    recorder = EventRecorder()
    traverse(dist, t, rng, recorder, cap)
    return recorder.events


def is_well_parenthesized(events: Sequence[TreeEvent]) -> bool:
    """Every Branch(c) is followed by exactly c complete subtrees."""
    pending: List[int] = [1]
    for event in events:
        if not pending:
            return False
        pending[-1] -= 1
        if event.kind is EventKind.BRANCH:
            pending.append(event.children)
        while pending and pending[-1] == 0:
            pending.pop()
    return not pending


def branch_gaps(events: Sequence[TreeEvent], t: float) -> List[Tuple[float, float]]:
    """(wait, t - start) for every edge that ends in a branch.

    A wait is only observed when it is shorter than t - start, so each gap is
    exponential(1) truncated at its own horizon.
    """
    gaps: List[Tuple[float, float]] = []
    frames: List[List[float]] = []  # [branch_time, remaining children]
    start = 0.0
    for event in events:
        if event.kind is EventKind.BRANCH:
            gaps.append((event.time - start, t - start))
            frames.append([event.time, event.children])
        while frames and frames[-1][1] == 0:
            frames.pop()
        if frames:
            frames[-1][1] -= 1
            start = frames[-1][0]
    return gaps
