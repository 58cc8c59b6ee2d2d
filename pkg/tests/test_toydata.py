"""Synthetic scenes: layout geometry, event placement, count scaling."""

import numpy as np
import pytest

from evsr.errors import ConfigError
from evsr.toydata import (PATTERNS, EdgeTrack, ToySceneSpec, scene_layout,
                          synth_toy_stream)


def spec(**kw):
    base = dict(width=32, height=32, pattern="moving_bar", velocity=1.0,
                duration_us=50_000, events_per_edge_crossing=2.0,
                noise_rate=0.0, seed=0)
    base.update(kw)
    return ToySceneSpec(**base)


# -- spec and layout ----------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ConfigError):
        spec(velocity=0.0).validate()
    with pytest.raises(ConfigError):
        spec(velocity=-1.0).validate()
    with pytest.raises(ConfigError):
        spec(duration_us=-5).validate()
    with pytest.raises(ConfigError):
        spec(width=2).validate()
    with pytest.raises(ConfigError):
        spec(pattern="spiral").validate()
    spec().validate()


def test_patterns_tuple():
    assert PATTERNS == ("moving_bar", "moving_dot", "two_bars")


def test_moving_bar_layout():
    tracks = scene_layout(spec())
    assert len(tracks) == 2
    lead = next(t for t in tracks if t.polarity == 1)
    trail = next(t for t in tracks if t.polarity == -1)
    assert lead.x0 == max(2, 32 // 8)  # bar width ahead of the trailing edge
    assert trail.x0 == 0.0
    for t in tracks:
        assert (t.row_lo, t.row_hi) == (0, 32)  # full-height edges


def test_moving_dot_layout():
    tracks = scene_layout(spec(pattern="moving_dot"))
    dot = max(2, 32 // 8)
    lo = (32 - dot) // 2
    for t in tracks:
        assert (t.row_lo, t.row_hi) == (lo, lo + dot)


def test_two_bars_layout():
    tracks = scene_layout(spec(pattern="two_bars"))
    assert len(tracks) == 4
    assert sum(1 for t in tracks if t.polarity == 1) == 2
    xs = sorted(t.x0 for t in tracks)
    assert xs[2] - xs[0] == pytest.approx(16.0)  # second pair half a frame on


def test_track_position_wraps():
    tr = EdgeTrack(x0=30.0, polarity=1, row_lo=0, row_hi=4, velocity=1.0)
    assert tr.position(0, 32) == 30.0
    assert tr.position(1000, 32) == 31.0
    assert tr.position(3000, 32) == pytest.approx(1.0)  # wrapped around


# -- synthesis ------------------------------------------------------------


def test_stream_is_valid_and_deterministic():
    a = synth_toy_stream(spec(seed=5))
    b = synth_toy_stream(spec(seed=5))
    a.with_columns(validate=True)
    assert len(a) > 0
    assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ts, b.ts)
    assert np.array_equal(a.ps, b.ps)
    c = synth_toy_stream(spec(seed=6))
    assert len(a) != len(c) or not np.array_equal(a.xs, c.xs)


def test_zero_duration_gives_empty_stream():
    s = synth_toy_stream(spec(duration_us=0))
    assert len(s) == 0
    assert s.width == 32 and s.height == 32


def test_timestamps_inside_duration():
    s = synth_toy_stream(spec(seed=7))
    assert s.t_first >= 0 and s.t_last <= 50_000


def nearest_track_distance(stream, tracks, i):
    """Circular distance from event i to the same-polarity track positions
    whose row band contains it."""
    best = np.inf
    for tr in tracks:
        if tr.polarity != stream.ps[i]:
            continue
        if not (tr.row_lo <= stream.ys[i] < tr.row_hi):
            continue
        pos = tr.position(int(stream.ts[i]), stream.width)
        d = abs(float(stream.xs[i]) - pos)
        best = min(best, min(d, stream.width - d))
    return best


@pytest.mark.parametrize("pattern", PATTERNS)
def test_every_event_sits_on_a_matching_edge(pattern):
    sc = spec(pattern=pattern, velocity=1.4, seed=8)
    stream = synth_toy_stream(sc)
    tracks = scene_layout(sc)
    assert len(stream) > 100
    for i in range(len(stream)):
        assert nearest_track_distance(stream, tracks, i) < 0.01, i


def test_event_count_scales_with_crossing_rate():
    n2 = len(synth_toy_stream(spec(events_per_edge_crossing=2.0, seed=9)))
    n4 = len(synth_toy_stream(spec(events_per_edge_crossing=4.0, seed=9)))
    assert n2 > 1000
    assert n4 / n2 == pytest.approx(2.0, rel=0.1)


def test_velocity_changes_crossing_count():
    slow = len(synth_toy_stream(spec(velocity=0.5, seed=10)))
    fast = len(synth_toy_stream(spec(velocity=2.0, seed=10)))
    # four times the speed sweeps four times the columns
    assert fast / slow == pytest.approx(4.0, rel=0.15)


def test_noise_rate_adds_off_edge_events():
    sc = spec(noise_rate=5.0, seed=11)  # events per pixel-second
    stream = synth_toy_stream(sc)
    tracks = scene_layout(sc)
    strays = sum(1 for i in range(len(stream))
                 if nearest_track_distance(stream, tracks, i) >= 0.01)
    lam = 5.0 * 32 * 32 * 0.05
    assert abs(strays - lam) < 5 * np.sqrt(lam) + 5
    # stray coordinates cover the frame, not just the edge bands
    ys = [stream.ys[i] for i in range(len(stream))
          if nearest_track_distance(stream, tracks, i) >= 0.01]
    assert min(ys) < 8 and max(ys) > 24
