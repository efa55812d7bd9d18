"""Counter-based random streams keyed by (seed, replica_index)."""
from __future__ import annotations

from typing import Tuple

import numpy as np

__all__ = ["replica_streams", "DrawBuffer", "STREAM_TREE", "STREAM_FIELD", "STREAM_SAMPLER"]

STREAM_TREE = 0
STREAM_FIELD = 1
STREAM_SAMPLER = 2
_N_STREAMS = 3

_BLOCK = 4096


def replica_streams(seed: int, replica_index: int) -> Tuple[np.random.Generator, ...]:
    """Return independent Philox generators for one replica.

    The tree, the field and the leaf sampler each get their own stream, so
    adding a sink never changes the sampled tree.
    """
    root = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(replica_index),))
    return tuple(np.random.Generator(np.random.Philox(child)) for child in root.spawn(_N_STREAMS))


class DrawBuffer:
    """Block-buffered scalar draws from a numpy Generator.

    Draw order is fixed by the caller's consumption order, so a buffered
    stream is as reproducible as scalar calls and far cheaper per draw.
    """

    __slots__ = ("_rng", "_normals", "_n_pos", "_exps", "_e_pos", "_uniforms", "_u_pos")

    def __init__(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._normals: list[float] = []
        self._n_pos = 0
        self._exps: list[float] = []
        self._e_pos = 0
        self._uniforms: list[float] = []
        self._u_pos = 0

    @property
    def generator(self) -> np.random.Generator:
        return self._rng

    def normal(self) -> float:
        if self._n_pos >= len(self._normals):
            self._normals = self._rng.standard_normal(_BLOCK).tolist()
            self._n_pos = 0
        value = self._normals[self._n_pos]
        self._n_pos += 1
        return value

    def exponential(self) -> float:
        if self._e_pos >= len(self._exps):
            self._exps = self._rng.standard_exponential(_BLOCK).tolist()
            self._e_pos = 0
        value = self._exps[self._e_pos]
        self._e_pos += 1
        return value

    def uniform(self) -> float:
        if self._u_pos >= len(self._uniforms):
            self._uniforms = self._rng.random(_BLOCK).tolist()
            self._u_pos = 0
        value = self._uniforms[self._u_pos]
        self._u_pos += 1
        return value
