"""Synthetic desk-scale event scenes.

A bright pattern (bar, dot, or a pair of bars) sweeps horizontally across
the sensor, wrapping around. When its leading edge enters a pixel column
the scene emits positive events there; when its trailing edge leaves a
column, negative events. Event multiplicity per (edge crossing, row) is
Poisson; optional uniform background noise is sprinkled on top. Everything
is deterministic per seed.

These streams stand in for real recordings: dense enough to window into
training sequences, simple enough that tests can predict where edges are at
any timestamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .events import EventStream
from .rng import make_rng

PATTERNS = ("moving_bar", "moving_dot", "two_bars")


@dataclass(frozen=True)
class ToySceneSpec:
    width: int = 32
    height: int = 32
    pattern: str = "moving_bar"
    velocity: float = 1.0  # pixels per millisecond, horizontal
    duration_us: int = 60_000
    events_per_edge_crossing: float = 2.0
    noise_rate: float = 0.0  # events per pixel per second
    seed: int = 0

    def validate(self) -> "ToySceneSpec":
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if self.velocity <= 0:
            raise ConfigError(f"velocity must be > 0, got {self.velocity}")
        if self.duration_us < 0:
            raise ConfigError(f"duration must be >= 0, got {self.duration_us}")
        if self.width < 4 or self.height < 4:
            raise ConfigError(f"scene too small: {self.width}x{self.height}")
        return self


@dataclass(frozen=True)
class EdgeTrack:
    """One moving vertical edge: wrapped position x0 + v*t_ms, emitting
    events of one polarity on the given row span."""

    x0: float
    polarity: int
    row_lo: int
    row_hi: int
    velocity: float = 1.0

    def position(self, t_us: float, width: int) -> float:
        return (self.x0 + 1e-3 * t_us * self.velocity) % width


def scene_layout(spec: ToySceneSpec) -> list:
    """The edge tracks implied by a scene spec (the motion model itself)."""
    spec.validate()
    w, h = spec.width, spec.height
    v = spec.velocity
    if spec.pattern == "moving_bar":
        bar = max(2, w // 8)
        return [EdgeTrack(float(bar), +1, 0, h, v),
                EdgeTrack(0.0, -1, 0, h, v)]
    if spec.pattern == "moving_dot":
        dot = max(2, h // 8)
        lo = (h - dot) // 2
        return [EdgeTrack(1.0, +1, lo, lo + dot, v),
                EdgeTrack(0.0, -1, lo, lo + dot, v)]
    # two_bars: a second bar half a frame behind
    bar = max(2, w // 8)
    half = w / 2.0
    return [EdgeTrack(float(bar), +1, 0, h, v),
            EdgeTrack(0.0, -1, 0, h, v),
            EdgeTrack(float(bar) + half, +1, 0, h, v),
            EdgeTrack(half, -1, 0, h, v)]


def synth_toy_stream(spec: ToySceneSpec) -> EventStream:
    spec.validate()
    w, h = spec.width, spec.height
    if spec.duration_us == 0:
        return EventStream.empty(w, h)
    dur_ms = spec.duration_us / 1000.0
    rng = make_rng(spec.seed, "toy")
    xs_all, ys_all, ts_all, ps_all = [], [], [], []

    for edge in scene_layout(spec):
        # integer positions the edge sweeps past on the unwrapped axis
        first = math.ceil(edge.x0)
        last = math.floor(edge.x0 + spec.velocity * dur_ms)
        if last < first:
            continue
        ks = np.arange(first, last + 1, dtype=np.float64)
        t_us = np.round((ks - edge.x0) / spec.velocity * 1000.0).astype(np.int64)
        keep = (t_us >= 0) & (t_us <= spec.duration_us)
        ks, t_us = ks[keep], t_us[keep]
        cols = (ks.astype(np.int64)) % w
        rows = np.arange(edge.row_lo, edge.row_hi, dtype=np.int64)
        counts = rng.poisson(spec.events_per_edge_crossing,
                             size=(len(ks), len(rows)))
        total = int(counts.sum())
        if total == 0:
            continue
        flat = counts.reshape(-1)
        rep_cols = np.repeat(np.repeat(cols, len(rows)), flat)
        rep_rows = np.repeat(np.tile(rows, len(ks)), flat)
        rep_ts = np.repeat(np.repeat(t_us, len(rows)), flat)
        xs_all.append(rep_cols)
        ys_all.append(rep_rows)
        ts_all.append(rep_ts)
        ps_all.append(np.full(total, edge.polarity, dtype=np.int8))

    if spec.noise_rate > 0 and spec.duration_us > 0:
        lam = spec.noise_rate * w * h * spec.duration_us * 1e-6
        n = int(rng.poisson(lam))
        if n:
            xs_all.append(rng.integers(0, w, size=n).astype(np.int64))
            ys_all.append(rng.integers(0, h, size=n).astype(np.int64))
            ts_all.append(rng.integers(0, spec.duration_us + 1, size=n)
                          .astype(np.int64))
            ps_all.append((2 * rng.integers(0, 2, size=n) - 1).astype(np.int8))

    if not xs_all:
        return EventStream.empty(w, h)
    xs = np.concatenate(xs_all)
    ys = np.concatenate(ys_all)
    ts = np.concatenate(ts_all)
    ps = np.concatenate(ps_all)
    order = np.argsort(ts, kind="stable")
    return EventStream(xs[order], ys[order], ts[order], ps[order], w, h)
