"""Event-stream augmentations.

Eight transforms plus a ``selected_da`` ensemble that picks one of the four
methods found to help training (polarity flip, random flip, drop by time,
random drop or add noise) uniformly at random. Static translation and
random resized crop are implemented for completeness but are not in the
ensemble pool: the first destabilizes training and the second hurts
super-resolution quality.

Every transform is a pure function of (stream, spec): the RNG is built
locally from spec.seed with a per-method label, so identical inputs give
bit-identical outputs. Augmentation happens on the high-resolution stream;
the low-resolution counterpart is re-derived afterwards so the input/target
pair stays aligned.

Random draws happen in a fixed, documented order per method (see each
docstring) so tests can replay them. Geometric choices (flip axes, offsets,
rectangles) are one draw per call, never per event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .events import EventStream
from .rng import derive_seed, make_rng

METHODS = (
    "polarity_flip",
    "random_flip",
    "drop_by_time",
    "random_drop",
    "drop_by_area",
    "random_drop_or_add_noise",
    "static_translation",
    "random_resized_crop",
    "selected_da",
    "none",
)

# the four methods selected_da draws from
SELECTED_POOL = (
    "polarity_flip",
    "random_flip",
    "drop_by_time",
    "random_drop_or_add_noise",
)

_RATIO_KEYS = ("ratio", "ratio_max", "drop_prob", "noise_ratio", "area_ratio",
               "scale_min", "p_horizontal", "p_vertical")


@dataclass(frozen=True)
class AugmentSpec:
    """Which augmentation to run, with what parameters, from what seed.

    params is a flat mapping of method-specific knobs; unset keys fall back
    to documented defaults. Tests may pin otherwise-random choices through
    params (e.g. ``horizontal``, ``dx``, ``rect``).
    """

    method: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown augmentation method {self.method!r}")
        for key in _RATIO_KEYS:
            if key in self.params:
                v = float(self.params[key])
                if not (0.0 <= v <= 1.0):
                    raise ConfigError(f"augment param {key}={v} outside [0, 1]")

    def get(self, key, default):
        return self.params.get(key, default)


def _keep(stream: EventStream, mask) -> EventStream:
    return stream.with_columns(
        xs=stream.xs[mask], ys=stream.ys[mask],
        ts=stream.ts[mask], ps=stream.ps[mask],
        validate=False,
    )


def polarity_flip(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Negate every polarity. No randomness; an involution."""
    return stream.with_columns(ps=-stream.ps, validate=False)


def random_flip(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Mirror coordinates horizontally and/or vertically.

    Draw order: horizontal? then vertical?, each with probability 0.5
    (params p_horizontal / p_vertical). Booleans ``horizontal`` and
    ``vertical`` in params pin the choices.
    """
    rng = make_rng(spec.seed, "augment.random_flip")
    p_h = float(spec.get("p_horizontal", 0.5))
    p_v = float(spec.get("p_vertical", 0.5))
    do_h = bool(spec.params["horizontal"]) if "horizontal" in spec.params \
        else bool(rng.random() < p_h)
    do_v = bool(spec.params["vertical"]) if "vertical" in spec.params \
        else bool(rng.random() < p_v)
    xs = stream.width - 1 - stream.xs if do_h else stream.xs
    ys = stream.height - 1 - stream.ys if do_v else stream.ys
    return stream.with_columns(xs=xs, ys=ys, validate=False)


def drop_by_time(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Remove all events inside one contiguous time interval.

    Draw order: ratio ~ U[0, ratio_max] (unless pinned via ``ratio``), then
    interval start ~ U[t_first, t_last - duration]. The interval is
    half-open [start, start + duration).
    """
    if len(stream) == 0:
        return stream
    rng = make_rng(spec.seed, "augment.drop_by_time")
    r_max = float(spec.get("ratio_max", 0.2))
    ratio = float(spec.params["ratio"]) if "ratio" in spec.params \
        else float(rng.uniform(0.0, r_max))
    if not (0.0 <= ratio <= 1.0):
        raise ConfigError(f"drop_by_time ratio {ratio} outside [0, 1]")
    span = stream.t_last - stream.t_first
    dur = ratio * span
    if dur <= 0:
        return stream
    begin = float(rng.uniform(stream.t_first, stream.t_last - dur))
    inside = (stream.ts >= begin) & (stream.ts < begin + dur)
    return _keep(stream, ~inside)


def random_drop(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Drop each event independently with probability drop_prob."""
    rng = make_rng(spec.seed, "augment.random_drop")
    q = float(spec.get("drop_prob", 0.1))
    keep = rng.random(len(stream)) >= q
    return _keep(stream, keep)


def _draw_rect(rng, width, height, area_ratio, aspect_lo, aspect_hi):
    """Seeded rectangle of relative area area_ratio. Draws: aspect, x0, y0."""
    aspect = float(rng.uniform(aspect_lo, aspect_hi))
    area = area_ratio * width * height
    w = int(round(math.sqrt(area * aspect)))
    h = int(round(math.sqrt(area / aspect)))
    w = max(1, min(width, w))
    h = max(1, min(height, h))
    x0 = int(rng.integers(0, width - w + 1))
    y0 = int(rng.integers(0, height - h + 1))
    return x0, y0, w, h


def drop_by_area(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Remove all events inside a seeded rectangle of relative area
    area_ratio (aspect drawn in [0.5, 2], position uniform).

    Draw order: aspect, x0, y0. Param ``rect`` = (x0, y0, w, h) pins the
    rectangle.
    """
    rng = make_rng(spec.seed, "augment.drop_by_area")
    if "rect" in spec.params:
        x0, y0, w, h = (int(v) for v in spec.params["rect"])
    else:
        a = float(spec.get("area_ratio", 0.05))
        if a <= 0:
            return stream
        x0, y0, w, h = _draw_rect(rng, stream.width, stream.height, a, 0.5, 2.0)
    _check_rect(x0, y0, w, h, stream.width, stream.height)
    inside = ((stream.xs >= x0) & (stream.xs < x0 + w)
              & (stream.ys >= y0) & (stream.ys < y0 + h))
    return _keep(stream, ~inside)


def random_drop_or_add_noise(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Random drop plus insertion of floor(noise_ratio * N) uniform noise
    events; output re-sorted by timestamp (stable, survivors first).

    Draw order: per-event keep mask, then noise xs, ys, ts, ps.
    """
    rng = make_rng(spec.seed, "augment.random_drop_or_add_noise")
    q = float(spec.get("drop_prob", 0.1))
    nu = float(spec.get("noise_ratio", 0.05))
    n = len(stream)
    if n == 0:
        return stream
    keep = rng.random(n) >= q
    kept = _keep(stream, keep)
    k = int(nu * n)
    if k == 0:
        return kept
    nx = rng.integers(0, stream.width, size=k).astype(np.int32)
    ny = rng.integers(0, stream.height, size=k).astype(np.int32)
    nt = rng.integers(stream.t_first, stream.t_last + 1, size=k).astype(np.int64)
    npol = (2 * rng.integers(0, 2, size=k) - 1).astype(np.int8)
    ts = np.concatenate([kept.ts, nt])
    order = np.argsort(ts, kind="stable")
    return stream.with_columns(
        xs=np.concatenate([kept.xs, nx])[order],
        ys=np.concatenate([kept.ys, ny])[order],
        ts=ts[order],
        ps=np.concatenate([kept.ps, npol])[order],
        validate=False,
    )


def static_translation(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Shift every coordinate by one integer offset (dx, dy), dropping
    events pushed out of bounds.

    Offsets are drawn uniformly in [-W//4, W//4] x [-H//4, H//4] (draw
    order: dx then dy) unless pinned via params dx/dy.
    """
    rng = make_rng(spec.seed, "augment.static_translation")
    mx, my = stream.width // 4, stream.height // 4
    dx = int(spec.params["dx"]) if "dx" in spec.params else int(rng.integers(-mx, mx + 1))
    dy = int(spec.params["dy"]) if "dy" in spec.params else int(rng.integers(-my, my + 1))
    if abs(dx) > mx or abs(dy) > my:
        raise ConfigError(f"translation ({dx},{dy}) exceeds quarter-frame bound")
    xs = stream.xs + dx
    ys = stream.ys + dy
    ok = (xs >= 0) & (xs < stream.width) & (ys >= 0) & (ys < stream.height)
    return stream.with_columns(xs=xs[ok], ys=ys[ok], ts=stream.ts[ok],
                               ps=stream.ps[ok], validate=False)


def random_resized_crop(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Keep events inside a seeded crop rectangle and stretch their
    coordinates back to the full sensor: x <- floor((x - x0) * W / w_crop).

    Draw order: scale ~ U[scale_min, 1], aspect ~ U[3/4, 4/3], x0, y0.
    Param ``rect`` pins the rectangle.
    """
    rng = make_rng(spec.seed, "augment.random_resized_crop")
    if "rect" in spec.params:
        x0, y0, w, h = (int(v) for v in spec.params["rect"])
    else:
        s_min = float(spec.get("scale_min", 0.7))
        s = float(rng.uniform(s_min, 1.0))
        x0, y0, w, h = _draw_rect(rng, stream.width, stream.height, s, 0.75, 4.0 / 3.0)
    _check_rect(x0, y0, w, h, stream.width, stream.height)
    inside = ((stream.xs >= x0) & (stream.xs < x0 + w)
              & (stream.ys >= y0) & (stream.ys < y0 + h))
    xs = (stream.xs[inside] - x0).astype(np.int64) * stream.width // w
    ys = (stream.ys[inside] - y0).astype(np.int64) * stream.height // h
    np.clip(xs, 0, stream.width - 1, out=xs)
    np.clip(ys, 0, stream.height - 1, out=ys)
    return stream.with_columns(xs=xs, ys=ys, ts=stream.ts[inside],
                               ps=stream.ps[inside], validate=False)


def _check_rect(x0, y0, w, h, width, height):
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
        raise ConfigError(f"rectangle ({x0},{y0},{w},{h}) outside {width}x{height} frame")


def selected_da(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Apply one of the four pool methods, chosen uniformly from the seed,
    with that method's default parameters."""
    rng = make_rng(spec.seed, "augment.selected_da")
    name = SELECTED_POOL[int(rng.integers(0, len(SELECTED_POOL)))]
    inner_seed = derive_seed(spec.seed, "augment.selected_da.inner")
    return _DISPATCH[name](stream, AugmentSpec(method=name, seed=inner_seed))


_DISPATCH = {
    "polarity_flip": polarity_flip,
    "random_flip": random_flip,
    "drop_by_time": drop_by_time,
    "random_drop": random_drop,
    "drop_by_area": drop_by_area,
    "random_drop_or_add_noise": random_drop_or_add_noise,
    "static_translation": static_translation,
    "random_resized_crop": random_resized_crop,
    "selected_da": selected_da,
    "none": lambda stream, spec: stream,
}


def augment(stream: EventStream, spec: AugmentSpec) -> EventStream:
    """Dispatch on spec.method. ``none`` is the identity."""
    return _DISPATCH[spec.method](stream, spec)
