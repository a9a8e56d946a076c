"""Windowed on-line time warping.

For each incoming target frame the tracker computes distances to a window of
``c`` reference frames centred on the previous score position ``sp`` and
updates the accumulated cost

    D[i] = d[i] + min(D_prev[i - 1], D_prev[i], D[i - 1])

with every cell outside the previous window treated as +inf. The reported
position is the argmin of D after dividing each cell by its path length from
the start position (reference offset plus iteration count).

The ``D[i - 1]`` term makes each row a sequential scan, so the row update runs
in a compiled kernel; distances to the window are one matrix-vector product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, InputFormatError, TrackingLost
from .features import FrameSequence

logger = logging.getLogger(__name__)

_EPS_NORM = 1e-12


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``; a zero vector on either side gives 1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputFormatError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _EPS_NORM or nb < _EPS_NORM:
        return 1.0
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


class CosineDistance:
    """Cosine distance with optional coordinate mask and positive scale.

    ``prepare`` unit-normalises the (masked) reference rows once so that a step
    costs one matrix-vector product over the window.
    """

    def __init__(self, mask=None, scale: float = 1.0, dtype=np.float32):
        if scale <= 0:
            raise ConfigError(f"distance scale must be positive, got {scale}")
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self.scale = float(scale)
        # float32 rows halve the memory traffic of the per-step matrix-vector product
        self.dtype = np.dtype(dtype)

    def scaled(self, k: float) -> "CosineDistance":
        return CosineDistance(self.mask, self.scale * k, self.dtype)

    def _select(self, x):
        return x if self.mask is None else x[..., self.mask]

    def prepare(self, frames: np.ndarray):
        """Returns ``(unit_rows, valid)``; rows with ~zero norm are flagged invalid."""
        x = self._select(np.asarray(frames, dtype=np.float64))
        norms = np.linalg.norm(x, axis=-1)
        valid = norms >= _EPS_NORM
        unit = np.divide(x, norms[..., None], out=np.zeros_like(x), where=valid[..., None])
        return np.ascontiguousarray(unit, dtype=self.dtype), valid

    def to_window(self, frame, prepared, lo: int, hi: int) -> np.ndarray:
        unit, valid = prepared
        q = self._select(np.asarray(frame, dtype=np.float64))
        nq = np.linalg.norm(q)
        if nq < _EPS_NORM:
            return np.full(hi - lo, self.scale)
        d = 1.0 - (unit[lo:hi] @ (q / nq).astype(self.dtype)).astype(np.float64)
        np.clip(d, 0.0, 2.0, out=d)
        d[~valid[lo:hi]] = 1.0
        if self.scale != 1.0:
            d *= self.scale
        return d

    def __call__(self, a, b) -> float:
        if self.mask is not None:
            a, b = np.asarray(a)[self.mask], np.asarray(b)[self.mask]
        return self.scale * cosine_distance(a, b)


@njit(cache=True)
def _row_update(d, prev, p_lo, lo, start_pos, iteration):
    """One row of the recurrence over window ``[lo, lo + len(d))``.

    ``prev`` is the previous row starting at reference index ``p_lo``.
    Returns the new row, the argmin offset of the normalised costs (first on
    ties) and that normalised cost; the offset is -1 if no cell is finite.
    """
    n = d.size
    D = np.empty(n)
    p_hi = p_lo + prev.size
    left = np.inf
    best = np.inf
    best_j = -1
    for j in range(n):
        i = lo + j
        m = left
        if p_lo <= i - 1 < p_hi and prev[i - 1 - p_lo] < m:
            m = prev[i - 1 - p_lo]
        if p_lo <= i < p_hi and prev[i - p_lo] < m:
            m = prev[i - p_lo]
        v = d[j] + m  # inf + x stays inf
        D[j] = v
        left = v
        if v < np.inf:
            denom = (i - start_pos) + iteration
            if denom < 1:
                denom = 1
            c = v / denom
            if c < best:
                best = c
                best_j = j
    return D, best_j, best


@dataclass(frozen=True)
class ScorePosition:
    ref_frame: int
    ref_time: float
    normalized_cost: float


def normalized_cost(D_value: float, window_index: int, start_pos: int, iteration: int) -> float:
    """Divide an accumulated cost by its path length, floored at 1."""
    return D_value / max(1, (window_index - start_pos) + iteration)


class TrackerState:
    """Accumulated-cost window and position of one on-line time warper.

    ``D`` covers reference frames ``[lo, lo + len(D))``; between steps it plays
    the role of ``D_prev``.
    """

    def __init__(self, reference: FrameSequence, start_pos: int = 0, c: int = 4000,
                 distance=None):
        n = reference.n_frames
        if n == 0:
            raise InputFormatError("reference sequence is empty")
        if c < 2 or c % 2:
            raise ConfigError(f"window length c must be even and >= 2, got {c}")
        if c > 2 * n:
            logger.warning("window c=%d exceeds twice the reference length; clamped to %d", c, 2 * n)
            c = 2 * n
        self.reference = reference
        self.c = c
        self.distance = distance if distance is not None else CosineDistance()
        self._prepared = self.distance.prepare(reference.frames)
        self.reset(start_pos)

    def reset(self, pos: int) -> None:
        pos = int(pos)
        if not 0 <= pos < self.reference.n_frames:
            raise ConfigError(f"position {pos} outside reference [0, {self.reference.n_frames})")
        self.sp = pos
        self.start_pos = pos
        self.iteration = 0
        self.lo, hi = self.window(pos)
        self.D = np.full(hi - self.lo, np.inf)
        self.D[pos - self.lo] = 0.0

    def window(self, sp: int) -> tuple[int, int]:
        half = self.c // 2
        return max(0, sp - half), min(self.reference.n_frames, sp + half)

    @property
    def n_frames(self) -> int:
        return self.reference.n_frames

    def position(self, frame: int | None = None, cost: float = 0.0) -> ScorePosition:
        frame = self.sp if frame is None else frame
        return ScorePosition(frame, float(self.reference.time_of(frame)), cost)

    def step(self, target_frame) -> ScorePosition:
        target_frame = np.asarray(target_frame)
        if target_frame.shape != (self.reference.dim,):
            raise InputFormatError(
                f"target frame shape {target_frame.shape} != reference dim ({self.reference.dim},)"
            )
        lo, hi = self.window(self.sp)
        d = self.distance.to_window(target_frame, self._prepared, lo, hi)

        D, j, cost = _row_update(d, self.D, self.lo, lo, self.start_pos, self.iteration)
        if j < 0:
            raise TrackingLost(f"no finite accumulated cost in window [{lo}, {hi}) at iteration {self.iteration}")
        self.D, self.lo = D, lo
        self.sp = lo + int(j)
        self.iteration += 1
        return self.position(self.sp, float(cost))

    def finite_cells(self) -> dict:
        """Debug snapshot: window range plus finite cells only."""
        idx = np.flatnonzero(np.isfinite(self.D))
        return {
            "lo": self.lo, "hi": self.lo + self.D.size, "sp": self.sp,
            "start_pos": self.start_pos, "iteration": self.iteration,
            "cells": {int(self.lo + i): float(self.D[i]) for i in idx},
        }


def init_tracker(reference: FrameSequence, start_pos: int = 0, c: int = 4000, dist=None) -> TrackerState:
    return TrackerState(reference, start_pos, c, dist)


def step(state: TrackerState, target_frame) -> tuple[TrackerState, ScorePosition]:
    pos = state.step(target_frame)
    return state, pos


def reinitialize_at(state: TrackerState, pos: int) -> TrackerState:
    """+inf everywhere and 0 at ``pos``; normalisation restarts from ``pos``."""
    state.reset(pos)
    return state
