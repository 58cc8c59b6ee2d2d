"""Event streams and their 2-D count-image representations.

An event is a brightness-change spike (x, y, t, p) with integer-microsecond
timestamp and polarity +1/-1. Streams are stored column-wise as numpy arrays
for speed; per-item ``Event`` objects are materialized only on access.

The three planes the network consumes are all per-pixel occurrence counts:
a positive count image, a negative count image, and the event frame that
counts every event regardless of polarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

POLARITY_TAGS = ("positive", "negative", "all")


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 or -1


class EventStream:
    """Time-ordered events plus sensor geometry.

    Invariants: timestamps non-decreasing, coordinates inside
    [0, width) x [0, height), polarity in {+1, -1}.
    """

    __slots__ = ("xs", "ys", "ts", "ps", "width", "height")

    def __init__(self, xs, ys, ts, ps, width: int, height: int, validate: bool = True):
        self.xs = np.ascontiguousarray(xs, dtype=np.int32)
        self.ys = np.ascontiguousarray(ys, dtype=np.int32)
        self.ts = np.ascontiguousarray(ts, dtype=np.int64)
        self.ps = np.ascontiguousarray(ps, dtype=np.int8)
        self.width = int(width)
        self.height = int(height)
        if validate:
            self.validate()

    def validate(self) -> None:
        n = len(self.ts)
        if not (len(self.xs) == len(self.ys) == len(self.ps) == n):
            raise DataError("event columns have mismatched lengths")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"bad sensor geometry {self.width}x{self.height}")
        if n == 0:
            return
        if np.any(self.ts[1:] < self.ts[:-1]):
            raise DataError("timestamps not sorted non-decreasing")
        if np.any(self.ts < 0):
            raise DataError("negative timestamp")
        if np.any((self.xs < 0) | (self.xs >= self.width)):
            raise DataError("event x out of [0, width)")
        if np.any((self.ys < 0) | (self.ys >= self.height)):
            raise DataError("event y out of [0, height)")
        if np.any(np.abs(self.ps) != 1):
            raise DataError("polarity must be +1 or -1")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, validate=False)

    @classmethod
    def from_events(cls, events, width: int, height: int) -> "EventStream":
        xs = [e.x for e in events]
        ys = [e.y for e in events]
        ts = [e.t for e in events]
        ps = [e.p for e in events]
        return cls(xs, ys, ts, ps, width, height)

    def __len__(self) -> int:
        return len(self.ts)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.xs[i]), int(self.ys[i]), int(self.ts[i]), int(self.ps[i]))

    @property
    def events(self) -> list:
        return [self[i] for i in range(len(self))]

    @property
    def num_events(self) -> int:
        return len(self.ts)

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.ps > 0))

    @property
    def num_negative(self) -> int:
        return int(np.count_nonzero(self.ps < 0))

    @property
    def t_first(self) -> int:
        if len(self.ts) == 0:
            raise DataError("empty stream has no time span")
        return int(self.ts[0])

    @property
    def t_last(self) -> int:
        if len(self.ts) == 0:
            raise DataError("empty stream has no time span")
        return int(self.ts[-1])

    def slice(self, start: int, stop: int) -> "EventStream":
        """Sub-stream of events [start, stop), same geometry."""
        return EventStream(
            self.xs[start:stop], self.ys[start:stop],
            self.ts[start:stop], self.ps[start:stop],
            self.width, self.height, validate=False,
        )

    def with_columns(self, xs=None, ys=None, ts=None, ps=None, width=None,
                     height=None, validate=True) -> "EventStream":
        return EventStream(
            self.xs if xs is None else xs,
            self.ys if ys is None else ys,
            self.ts if ts is None else ts,
            self.ps if ps is None else ps,
            self.width if width is None else width,
            self.height if height is None else height,
            validate=validate,
        )


@dataclass
class EventCountImage:
    """Per-pixel event-occurrence counts over one time window.

    ``counts`` is an H x W int64 grid; the sum of all cells equals the number
    of events stacked into it, and every cell is non-negative.
    """

    counts: np.ndarray
    polarity_tag: str

    def __post_init__(self):
        if self.polarity_tag not in POLARITY_TAGS:
            raise ConfigError(f"unknown polarity tag {self.polarity_tag!r}")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise DataError("count image must be 2-D")

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class WindowPolicy:
    """How a stream is cut into windows: fixed event count or fixed duration."""

    kind: str  # "fixed_count" | "fixed_duration"
    count: int = 0
    duration_us: int = 0

    @staticmethod
    def fixed_count(count: int) -> "WindowPolicy":
        return WindowPolicy(kind="fixed_count", count=count)

    @staticmethod
    def fixed_duration(duration_us: int) -> "WindowPolicy":
        return WindowPolicy(kind="fixed_duration", duration_us=duration_us)

    def validate(self) -> None:
        if self.kind == "fixed_count":
            if self.count <= 0:
                raise ConfigError(f"window event count must be > 0, got {self.count}")
        elif self.kind == "fixed_duration":
            if self.duration_us <= 0:
                raise ConfigError(f"window duration must be > 0, got {self.duration_us}")
        else:
            raise ConfigError(f"unknown window policy kind {self.kind!r}")


@dataclass(frozen=True)
class Window:
    """One window: its time span and the event index range [start, stop).

    Windows partition [t_first, t_last] contiguously. For fixed-count
    policies membership is by event index (exactly ``count`` events per
    window except possibly the last); the time bounds are descriptive.
    The final window's t_end is t_last and is inclusive; earlier windows
    end exclusively at the next window's t_start.
    """

    t_start: int
    t_end: int
    start: int
    stop: int


@dataclass(frozen=True)
class SequenceWindow:
    """One time slice of a training pair: LR input planes and HR targets."""

    lr_pos: EventCountImage
    lr_neg: EventCountImage
    lr_frame: EventCountImage
    hr_pos: EventCountImage
    hr_neg: EventCountImage
    t_start: int
    t_end: int

    def __post_init__(self):
        hh, hw = self.hr_pos.counts.shape
        lh, lw = self.lr_pos.counts.shape
        if hh % lh != 0 or hw % lw != 0 or hh // lh != hw // lw:
            raise DataError(f"HR {hh}x{hw} is not an integer multiple of LR {lh}x{lw}")

    @property
    def scale(self) -> int:
        return self.hr_pos.counts.shape[0] // self.lr_pos.counts.shape[0]


def split_by_polarity(stream: EventStream):
    """Partition a stream into (positive, negative) sub-streams, order kept."""
    pos = stream.ps > 0
    neg = ~pos
    mk = lambda m: EventStream(stream.xs[m], stream.ys[m], stream.ts[m], stream.ps[m],
                               stream.width, stream.height, validate=False)
    return mk(pos), mk(neg)


def stack_count_image(stream: EventStream, polarity_tag: str = "all") -> EventCountImage:
    """Histogram events onto the pixel grid, selecting by polarity tag."""
    if polarity_tag not in POLARITY_TAGS:
        raise ConfigError(f"unknown polarity tag {polarity_tag!r}")
    if polarity_tag == "positive":
        m = stream.ps > 0
    elif polarity_tag == "negative":
        m = stream.ps < 0
    else:
        m = slice(None)
    flat = stream.ys[m].astype(np.int64) * stream.width + stream.xs[m]
    counts = np.bincount(flat, minlength=stream.height * stream.width)
    return EventCountImage(counts.reshape(stream.height, stream.width), polarity_tag)


def make_event_frame(stream: EventStream) -> EventCountImage:
    """Count image over all events regardless of polarity."""
    return stack_count_image(stream, "all")


def make_signed_frame(stream: EventStream) -> np.ndarray:
    """Signed accumulation (positive minus negative counts).

    Offered as an alternative representation; the network and all acceptance
    checks use the unsigned frame from :func:`make_event_frame`.
    """
    pos = stack_count_image(stream, "positive").counts
    neg = stack_count_image(stream, "negative").counts
    return pos - neg


def partition_windows(stream: EventStream, policy: WindowPolicy) -> list:
    """Cut a stream into contiguous windows covering [t_first, t_last]."""
    policy.validate()
    n = len(stream)
    if n == 0:
        return []
    t0, t1 = stream.t_first, stream.t_last
    windows = []
    if policy.kind == "fixed_count":
        k = policy.count
        n_win = (n + k - 1) // k
        for i in range(n_win):
            start, stop = i * k, min((i + 1) * k, n)
            t_start = int(stream.ts[start]) if i > 0 else t0
            t_end = int(stream.ts[(i + 1) * k]) if (i + 1) * k < n else t1
            windows.append(Window(t_start=t_start, t_end=t_end, start=start, stop=stop))
    else:
        dt = policy.duration_us
        span = t1 - t0
        n_win = max(1, -(-span // dt))  # ceil
        bounds = [t0 + i * dt for i in range(n_win)] + [t1]
        # event index of the first event at or past each boundary; last window
        # is inclusive of t_last so every event lands in exactly one window
        idx = np.searchsorted(stream.ts, bounds[:-1], side="left")
        idx = np.append(idx, n)
        for i in range(n_win):
            windows.append(Window(t_start=int(bounds[i]), t_end=int(bounds[i + 1]),
                                  start=int(idx[i]), stop=int(idx[i + 1])))
    return windows


def downsample_stream(stream: EventStream, factor: int) -> EventStream:
    """Coordinate relocation to a factor-x smaller grid.

    Coordinates are floor-divided; timestamps, polarities and the event count
    are unchanged, so colliding events are all kept.
    """
    factor = int(factor)
    if factor < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {factor}")
    if stream.width % factor != 0 or stream.height % factor != 0:
        raise DataError(
            f"factor {factor} does not divide sensor {stream.width}x{stream.height}")
    if factor == 1:
        return stream
    return stream.with_columns(
        xs=stream.xs // factor, ys=stream.ys // factor,
        width=stream.width // factor, height=stream.height // factor,
        validate=False,
    )


def window_pair(sub: EventStream, factor: int, t_start: int, t_end: int) -> SequenceWindow:
    """Build one LR/HR training slice from an HR sub-stream."""
    hr_pos = stack_count_image(sub, "positive")
    hr_neg = stack_count_image(sub, "negative")
    lr = downsample_stream(sub, factor)
    return SequenceWindow(
        lr_pos=stack_count_image(lr, "positive"),
        lr_neg=stack_count_image(lr, "negative"),
        lr_frame=make_event_frame(lr),
        hr_pos=hr_pos, hr_neg=hr_neg,
        t_start=t_start, t_end=t_end,
    )


def build_sequence(stream: EventStream, factor: int, policy: WindowPolicy,
                   sequence_length: int) -> list:
    """Window an HR stream and emit training sequences.

    Each window yields a SequenceWindow whose LR planes are re-derived from
    the same window's events, so input and target stay aligned. Windows are
    grouped into sequences of ``sequence_length``; a shorter trailing group
    is dropped.
    """
    if sequence_length < 1:
        raise ConfigError(f"sequence length must be >= 1, got {sequence_length}")
    windows = partition_windows(stream, policy)
    slices = [window_pair(stream.slice(w.start, w.stop), factor, w.t_start, w.t_end)
              for w in windows]
    n_seq = len(slices) // sequence_length
    return [slices[i * sequence_length:(i + 1) * sequence_length] for i in range(n_seq)]
