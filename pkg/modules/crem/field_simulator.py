"""Correlated Gaussian fields along a streamed tree.

Each path carries (s, x, x_tilde, z). Increments are taken at every grid
point and branch time: x moves with variance t*A(s1/t) - t*A(s0/t), x_tilde
with sigma_b^2*(s1 - s0) driven by the same normal, z is an independent
copy of x. The imaginary driver is y = rho*x + sqrt(1 - rho^2)*z.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config import DEFAULT_POPULATION_CAP
from core.errors import DegenerateTree, DomainError, PopulationOverflow
from core.rng import STREAM_FIELD, STREAM_SAMPLER, STREAM_TREE, DrawBuffer, replica_streams

from .branching import OffspringDistribution, traverse
from .partition import ScaledComplex, accumulate_many
from .phases import EnvelopeSpec, envelope_U, m_of_t
from .speedfn import SpeedFunction

log = logging.getLogger("crem.sim")

__all__ = [
    "PathState",
    "GridSpec",
    "SnapshotSpec",
    "ExtremalSnapshot",
    "LeafSample",
    "ReplicaOutput",
    "run_replica",
    "run_replicas",
    "CovarianceEstimate",
    "leaf_covariance_estimate",
    "summarize_covariance",
    "summarize_crossings",
    "EnvelopeEstimate",
    "envelope_crossing_probability",
    "envelope_crossing_probabilities",
]

CHUNK = 8192


@dataclass(frozen=True, slots=True)
class PathState:
    s: float
    v: float  # t*A(s/t)
    x: float
    x_tilde: float
    z: float

    def y(self, rho: float) -> float:
        return rho * self.x + math.sqrt(1.0 - rho * rho) * self.z


@dataclass(frozen=True)
class GridSpec:
    step: float

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise DomainError(f"grid step must be > 0, got {self.step}")

    @classmethod
    def default(cls, t: float) -> "GridSpec":
        """0.05*t capped at 0.25."""
        return cls(min(0.05 * t, 0.25))

    def times(self, t: float) -> Tuple[List[float], List[bool]]:
        """Grid points in (0, t) joined with the integers below t, and an is-integer mask."""
        if self.step > t:
            raise DomainError(f"grid step {self.step} exceeds horizon {t}")
        points = {round(k * self.step, 12) for k in range(1, int(math.floor(t / self.step)) + 1)}
        points.update(float(j) for j in range(1, int(math.floor(t)) + 1))
        ordered = sorted(p for p in points if 0.0 < p < t)
        return ordered, [float(p).is_integer() for p in ordered]


@dataclass(frozen=True)
class SnapshotSpec:
    B: float
    w: Optional[float] = None

    def window(self, t: float) -> float:
        return self.w if self.w is not None else math.sqrt(t)


@dataclass(frozen=True)
class ExtremalSnapshot:
    """Leaves within B of m(t); clusters group leaves whose split time exceeds t - w."""

    points: Tuple[float, ...]
    cluster_ids: Tuple[int, ...]
    B: float
    w: float

    @property
    def clusters(self) -> List[List[int]]:
        groups: dict[int, List[int]] = {}
        for idx, cid in enumerate(self.cluster_ids):
            groups.setdefault(cid, []).append(idx)
        return [groups[k] for k in sorted(groups)]

    @property
    def cluster_count(self) -> int:
        return len(set(self.cluster_ids))


@dataclass(frozen=True)
class LeafSample:
    """One uniform leaf and one uniform pair of distinct leaves from a replica."""

    x: float
    y: float
    pair: Optional[Tuple[float, float, float, float, float]]  # x_i, x_j, y_i, y_j, split time d


@dataclass(frozen=True)
class ReplicaOutput:
    replica_index: int
    n_t: int
    max_x: float
    max_x_minus_m: float
    sums: Tuple[ScaledComplex, ...] = ()
    coupled: Tuple[ScaledComplex, ...] = ()
    envelope_crossed: Tuple[bool, ...] = ()  # one flag per envelope, in the order given
    envelope_crossed_integer: Tuple[bool, ...] = ()
    snapshot: Optional[ExtremalSnapshot] = None
    sample: Optional[LeafSample] = None
    overflowed: bool = False

    @classmethod
    def overflow(cls, replica_index: int, leaves: int) -> "ReplicaOutput":
        return cls(replica_index=replica_index, n_t=leaves, max_x=math.nan, max_x_minus_m=math.nan, overflowed=True)


# ---------- sinks ----------
class _ChunkedSums:
    """Sum_k e^{c_j * u_k} style accumulators, flushed one chunk at a time."""

    def __init__(self, exponents: Callable[[np.ndarray, np.ndarray], List[np.ndarray]], count: int) -> None:
        self._exponents = exponents
        self._acc = [ScaledComplex() for _ in range(count)]
        self._a: List[float] = []
        self._b: List[float] = []

    def add(self, a: float, b: float) -> None:
        self._a.append(a)
        self._b.append(b)
        if len(self._a) >= CHUNK:
            self.flush()

    def flush(self) -> None:
        if not self._a:
            return
        a = np.asarray(self._a)
        b = np.asarray(self._b)
        for j, w in enumerate(self._exponents(a, b)):
            self._acc[j] = accumulate_many(self._acc[j], w)
        self._a.clear()
        self._b.clear()

    def result(self) -> Tuple[ScaledComplex, ...]:
        self.flush()
        return tuple(self._acc)


def _partition_sums(betas: Sequence[Tuple[float, float]], rho: float) -> _ChunkedSums:
    c = math.sqrt(1.0 - rho * rho)

    def exponents(x: np.ndarray, z: np.ndarray) -> List[np.ndarray]:
        y = rho * x + c * z
        out = []
        for sigma, tau in betas:
            if tau == 0:
                out.append(sigma * x)
            else:
                out.append(sigma * x + 1j * (tau * y))
        return out

    return _ChunkedSums(exponents, len(betas))


def _coupled_sums(sigmas: Sequence[float]) -> _ChunkedSums:
    def exponents(x_tilde: np.ndarray, _unused: np.ndarray) -> List[np.ndarray]:
        return [2.0 * sigma * x_tilde for sigma in sigmas]

    return _ChunkedSums(exponents, len(sigmas))


class _SnapshotCollector:
    """Leaves above threshold in DFS order.

    The split time of two DFS-ordered leaves is the minimum of the consecutive
    splits between them, so a running minimum since the last selected leaf
    decides whether a new leaf joins the open cluster.
    """

    def __init__(self, threshold: float, m_t: float, split_limit: float) -> None:
        self.threshold = threshold
        self.m_t = m_t
        self.split_limit = split_limit
        self.points: List[float] = []
        self.cluster_ids: List[int] = []
        self._min_split = math.inf
        self._clusters = 0

    def add(self, x: float, split: float) -> None:
        if split < self._min_split:
            self._min_split = split
        if x < self.threshold:
            return
        if not self.points or self._min_split <= self.split_limit:
            self._clusters += 1
        self.points.append(x - self.m_t)
        self.cluster_ids.append(self._clusters - 1)
        self._min_split = math.inf


class _LeafSampler:
    """Reservoir of one leaf and of one unordered pair, with split times tracked."""

    def __init__(self, draws: DrawBuffer, rho: float) -> None:
        self._draws = draws
        self._rho_c = (rho, math.sqrt(1.0 - rho * rho))
        self._n = 0
        self._single: Optional[Tuple[float, float]] = None
        self._slots: List[Optional[Tuple[float, float]]] = [None, None]
        self._min_since = [math.inf, math.inf]
        self._pair_d = math.nan

    def add(self, x: float, z: float, split: float) -> None:
        self._n += 1
        n = self._n
        rho, c = self._rho_c
        leaf = (x, rho * x + c * z)
        for j in (0, 1):
            if self._slots[j] is not None and split < self._min_since[j]:
                self._min_since[j] = split
        uniform = self._draws.uniform
        if n == 1 or uniform() < 1.0 / n:
            self._single = leaf
        if n <= 2:
            j = n - 1
        elif uniform() < 2.0 / n:
            j = 0 if uniform() < 0.5 else 1
        else:
            return
        other = 1 - j
        if self._slots[other] is not None:
            self._pair_d = self._min_since[other]
        self._slots[j] = leaf
        self._min_since[j] = math.inf

    def result(self) -> Optional[LeafSample]:
        if self._single is None:
            return None
        pair = None
        a, b = self._slots
        if a is not None and b is not None:
            pair = (a[0], b[0], a[1], b[1], self._pair_d)
        return LeafSample(x=self._single[0], y=self._single[1], pair=pair)


class _FieldWalker:
    """Tree visitor that moves the path state and feeds every leaf to the sinks.

    Crossings are tracked per envelope, so several envelope constants share
    one walk of the tree and one set of field draws.
    """

    def __init__(
        self,
        A: SpeedFunction,
        t: float,
        grid: GridSpec,
        draws: DrawBuffer,
        envelopes: Sequence[EnvelopeSpec] = (),
    ) -> None:
        self.A = A
        self.t = t
        self.draws = draws
        self.sigma_b = math.sqrt(A.sigma_b_sq)
        self.grid, self.grid_is_int = grid.times(t)
        self.grid_v = [A.variance_profile(g, t) for g in self.grid]
        self.envelopes = tuple(envelopes)
        self.grid_u = [[envelope_U(g, t, A, spec) for g in self.grid] for spec in self.envelopes]
        self.t_is_int = float(t).is_integer()
        self.crossed = [False] * len(self.envelopes)
        self.crossed_integer = [False] * len(self.envelopes)
        self.current = PathState(0.0, 0.0, 0.0, 0.0, 0.0)
        self.frames: List[List] = []  # [PathState at branch, remaining children]
        self.split = -math.inf
        self.leaf_handlers: List[Callable[[PathState, float], None]] = []

    def _check_grid(self, x: float, i: int) -> None:
        for k, bounds in enumerate(self.grid_u):
            if x > bounds[i]:
                self.crossed[k] = True
                if self.grid_is_int[i]:
                    self.crossed_integer[k] = True

    def _check_event(self, x: float, s1: float) -> None:
        at_integer_end = s1 == self.t and self.t_is_int
        for k, spec in enumerate(self.envelopes):
            if x > envelope_U(s1, self.t, self.A, spec):
                self.crossed[k] = True
                if at_integer_end:
                    self.crossed_integer[k] = True

    def _advance(self, state: PathState, s1: float, v1: float) -> PathState:
        s, v, x, xt, z = state.s, state.v, state.x, state.x_tilde, state.z
        normal = self.draws.normal
        sigma_b = self.sigma_b
        grid, grid_v = self.grid, self.grid_v
        lo = bisect.bisect_right(grid, s)
        hi = bisect.bisect_left(grid, s1)
        watch = bool(self.envelopes)
        for i in range(lo, hi):
            g, vg = grid[i], grid_v[i]
            xi = normal()
            zeta = normal()
            sd = math.sqrt(vg - v) if vg > v else 0.0
            x += sd * xi
            xt += sigma_b * math.sqrt(g - s) * xi
            z += sd * zeta
            s, v = g, vg
            if watch:
                self._check_grid(x, i)
        if s1 > s:
            xi = normal()
            zeta = normal()
            sd = math.sqrt(v1 - v) if v1 > v else 0.0
            x += sd * xi
            xt += sigma_b * math.sqrt(s1 - s) * xi
            z += sd * zeta
            if watch:
                self._check_event(x, s1)
        return PathState(s1, v1, x, xt, z)

    def on_branch(self, time: float, children: int, depth: int) -> None:
        state = self._advance(self.current, time, self.A.variance_profile(time, self.t))
        self.frames.append([state, children - 1])
        self.current = state

    def on_leaf(self, time: float, depth: int) -> None:
        state = self._advance(self.current, self.t, self.t)
        for handler in self.leaf_handlers:
            handler(state, self.split)
        frames = self.frames
        while frames and frames[-1][1] == 0:
            frames.pop()
        if frames:
            frames[-1][1] -= 1
            self.current = frames[-1][0]
            self.split = self.current.s


def run_replica(
    A: SpeedFunction,
    dist: OffspringDistribution,
    t: float,
    rho: float,
    grid: GridSpec,
    envelopes: Sequence[EnvelopeSpec] = (),
    snapshot: Optional[SnapshotSpec] = None,
    *,
    streams: Tuple[np.random.Generator, ...],
    betas: Sequence[Tuple[float, float]] = (),
    coupled_sigmas: Sequence[float] = (),
    sample_leaves: bool = False,
    cap: int = DEFAULT_POPULATION_CAP,
    replica_index: int = 0,
) -> ReplicaOutput:
    """One pass over one tree; every declared sink sees every leaf once.

    ``streams`` comes from ``core.rng.replica_streams``. Raises
    PopulationOverflow when n(t) exceeds ``cap``.
    """
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [-1, 1], got {rho}")
    tree_draws = DrawBuffer(streams[STREAM_TREE])
    walker = _FieldWalker(A, t, grid, DrawBuffer(streams[STREAM_FIELD]), envelopes)
    m_t = m_of_t(t)

    partition = _partition_sums(betas, rho) if betas else None
    coupled = _coupled_sums(coupled_sigmas) if coupled_sigmas else None
    sampler = _LeafSampler(DrawBuffer(streams[STREAM_SAMPLER]), rho) if sample_leaves else None
    collector = None
    if snapshot is not None:
        collector = _SnapshotCollector(m_t - snapshot.B, m_t, t - snapshot.window(t))

    best = [-math.inf]

    def on_leaf(state: PathState, split: float) -> None:
        if state.x > best[0]:
            best[0] = state.x
        if partition is not None:
            partition.add(state.x, state.z)
        if coupled is not None:
            coupled.add(state.x_tilde, 0.0)
        if sampler is not None:
            sampler.add(state.x, state.z, split)
        if collector is not None:
            collector.add(state.x, split)

    walker.leaf_handlers.append(on_leaf)
    n_t = traverse(dist, t, tree_draws, walker, cap)

    snap = None
    if collector is not None:
        snap = ExtremalSnapshot(tuple(collector.points), tuple(collector.cluster_ids), snapshot.B, snapshot.window(t))
    return ReplicaOutput(
        replica_index=replica_index,
        n_t=n_t,
        max_x=best[0],
        max_x_minus_m=best[0] - m_t,
        sums=partition.result() if partition is not None else (),
        coupled=coupled.result() if coupled is not None else (),
        envelope_crossed=tuple(walker.crossed),
        envelope_crossed_integer=tuple(walker.crossed_integer),
        snapshot=snap,
        sample=sampler.result() if sampler is not None else None,
    )


def run_replicas(seed: int, replicas: int, **kwargs) -> List[ReplicaOutput]:
    """Sequential replicas keyed by (seed, index); overflowed replicas are recorded."""
    outputs: List[ReplicaOutput] = []
    for index in range(replicas):
        try:
            outputs.append(run_replica(streams=replica_streams(seed, index), replica_index=index, **kwargs))
        except PopulationOverflow as exc:
            log.warning("[replica] index=%d overflow leaves=%d cap=%d", index, exc.leaves, exc.cap)
            outputs.append(ReplicaOutput.overflow(index, exc.leaves))
    return outputs


# ---------- estimators built on replicas ----------
@dataclass(frozen=True)
class CovarianceEstimate:
    var_x: float
    var_x_se: float
    cov_xy: float
    cov_xy_se: float
    table: pd.DataFrame = field(repr=False)
    degenerate: int = 0
    overflowed: int = 0


def leaf_covariance_estimate(
    A: SpeedFunction,
    dist: OffspringDistribution,
    t: float,
    rho: float,
    replicas: int,
    seed: int,
    *,
    bins: int = 20,
    grid: Optional[GridSpec] = None,
    cap: int = DEFAULT_POPULATION_CAP,
) -> CovarianceEstimate:
    """Var x(t), Cov(x, y) and binned Cov(x_i, x_j) against split time d."""
    if replicas < 100:
        raise DomainError(f"leaf_covariance_estimate needs replicas >= 100, got {replicas}")
    outputs = run_replicas(
        seed, replicas, A=A, dist=dist, t=t, rho=rho, grid=grid or GridSpec.default(t), sample_leaves=True, cap=cap
    )
    return summarize_covariance(A, t, outputs, bins=bins)


def summarize_covariance(A: SpeedFunction, t: float, outputs: Sequence[ReplicaOutput], *, bins: int = 20) -> CovarianceEstimate:
    """Fold replica leaf samples into the covariance estimate, in replica order."""
    replicas = len(outputs)
    singles, pairs = [], []
    degenerate = overflowed = 0
    for out in outputs:
        if out.overflowed:
            overflowed += 1
            continue
        singles.append((out.sample.x, out.sample.y))
        if out.sample.pair is None:
            degenerate += 1
            continue
        pairs.append(out.sample.pair)
    if degenerate:
        log.warning("[covariance] degenerate=%d replicas=%d reason=single-leaf", degenerate, replicas)
    if not pairs:
        raise DegenerateTree(f"all {len(singles)} replicas had a single leaf; no pair covariance")

    xs = np.array([s[0] for s in singles])
    ys = np.array([s[1] for s in singles])
    n = len(xs)
    sq, xy = xs * xs, xs * ys
    var_x, var_x_se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n))
    cov_xy, cov_xy_se = float(xy.mean()), float(xy.std(ddof=1) / math.sqrt(n))

    frame = pd.DataFrame(pairs, columns=["x_i", "x_j", "y_i", "y_j", "d"])
    frame["product"] = frame["x_i"] * frame["x_j"]
    frame["predicted"] = [A.variance_profile(d, t) for d in frame["d"]]
    edges = np.linspace(0.0, t, bins + 1)
    frame["bin"] = np.clip(np.searchsorted(edges, frame["d"], side="right") - 1, 0, bins - 1)
    grouped = frame.groupby("bin")
    table = pd.DataFrame(
        {
            "d_lo": edges[:-1],
            "d_hi": edges[1:],
        }
    )
    table["n"] = grouped.size().reindex(range(bins), fill_value=0).to_numpy()
    table["cov"] = grouped["product"].mean().reindex(range(bins)).to_numpy()
    table["se"] = (grouped["product"].std(ddof=1) / np.sqrt(grouped.size())).reindex(range(bins)).to_numpy()
    table["predicted"] = grouped["predicted"].mean().reindex(range(bins)).to_numpy()
    return CovarianceEstimate(var_x, var_x_se, cov_xy, cov_xy_se, table, degenerate, overflowed)


@dataclass(frozen=True)
class EnvelopeEstimate:
    p_hat: float
    stderr: float
    p_hat_integer: float
    stderr_integer: float
    replicas: int
    overflowed: int = 0


def envelope_crossing_probabilities(
    A: SpeedFunction,
    dist: OffspringDistribution,
    t: float,
    gamma: float,
    constants: Sequence[float],
    grid: GridSpec,
    replicas: int,
    seed: int,
    *,
    cap: int = DEFAULT_POPULATION_CAP,
) -> List[EnvelopeEstimate]:
    """Crossing estimates for every C in ``constants`` from one walk per replica.

    The envelope draws no randomness, so all constants see the same trees and
    fields and the estimates are pathwise non-increasing in C.
    """
    specs = [EnvelopeSpec(gamma=gamma, C=C) for C in constants]
    outputs = run_replicas(seed, replicas, A=A, dist=dist, t=t, rho=0.0, grid=grid, envelopes=specs, cap=cap)
    kept = [o for o in outputs if not o.overflowed]
    if not kept:
        raise PopulationOverflow(outputs[0].n_t if outputs else 0, cap)
    overflowed = len(outputs) - len(kept)
    return [summarize_crossings(kept, overflowed, which=k) for k in range(len(specs))]


def envelope_crossing_probability(
    A: SpeedFunction,
    dist: OffspringDistribution,
    t: float,
    gamma: float,
    C: float,
    grid: GridSpec,
    replicas: int,
    seed: int,
    *,
    cap: int = DEFAULT_POPULATION_CAP,
) -> EnvelopeEstimate:
    """Fraction of replicas where some particle exceeds U_{A,gamma} on grid or branch times."""
    return envelope_crossing_probabilities(A, dist, t, gamma, (C,), grid, replicas, seed, cap=cap)[0]


def summarize_crossings(outputs: Sequence[ReplicaOutput], overflowed: int = 0, *, which: int = 0) -> EnvelopeEstimate:
    """Crossing frequency of envelope number ``which`` over non-overflowed outputs."""
    n = len(outputs)
    hits = np.array([o.envelope_crossed[which] for o in outputs], dtype=float)
    hits_int = np.array([o.envelope_crossed_integer[which] for o in outputs], dtype=float)
    p, p_int = float(hits.mean()), float(hits_int.mean())
    return EnvelopeEstimate(
        p_hat=p,
        stderr=math.sqrt(p * (1 - p) / n),
        p_hat_integer=p_int,
        stderr_integer=math.sqrt(p_int * (1 - p_int) / n),
        replicas=n,
        overflowed=overflowed,
    )
