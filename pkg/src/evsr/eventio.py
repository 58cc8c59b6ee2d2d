"""Reading and writing event streams and count images.

Two stream formats:

* text: a ``# evs <width> <height>`` header line, then one ``t x y p``
  line per event (microseconds, ints, p is +1/-1). Blank lines and lines
  starting with ``#`` after the header are skipped.
* binary: magic ``EVS1``, u32 width, u32 height, u64 event count, then
  packed little-endian records of (u64 t, u16 x, u16 y, i8 p), 13 bytes each.

Count images dump as plain-text PGM (P2) for eyeballing, or as a small
binary: magic ``ECI1``, u32 height, u32 width, u8 polarity tag code
(0=all, 1=positive, 2=negative), then H*W u32 counts little-endian,
row-major.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataError
from .events import EventCountImage, EventStream

STREAM_MAGIC = b"EVS1"
ECI_MAGIC = b"ECI1"

_RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

TAG_TO_CODE = {"all": 0, "positive": 1, "negative": 2}
CODE_TO_TAG = {v: k for k, v in TAG_TO_CODE.items()}


def write_events_text(path, stream: EventStream) -> None:
    with open(path, "w") as f:
        f.write(f"# evs {stream.width} {stream.height}\n")
        for i in range(len(stream)):
            f.write(f"{stream.ts[i]} {stream.xs[i]} {stream.ys[i]} {stream.ps[i]}\n")


def read_events_text(path) -> EventStream:
    if not os.path.exists(path):
        raise DataError(f"event file not found: {path}")
    with open(path) as f:
        header = f.readline()
        parts = header.split()
        if len(parts) != 4 or parts[0] != "#" or parts[1] != "evs":
            raise DataError(f"bad event text header: {header.strip()!r}")
        try:
            width, height = int(parts[2]), int(parts[3])
        except ValueError:
            raise DataError(f"bad geometry in header: {header.strip()!r}")
        ts, xs, ys, ps = [], [], [], []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split()
            if len(cols) != 4:
                raise DataError(f"line {lineno}: expected 't x y p', got {line!r}")
            try:
                ts.append(int(cols[0]))
                xs.append(int(cols[1]))
                ys.append(int(cols[2]))
                ps.append(int(cols[3]))
            except ValueError:
                raise DataError(f"line {lineno}: non-integer field in {line!r}")
    try:
        return EventStream(xs, ys, ts, ps, width, height)
    except DataError as e:
        raise DataError(f"{path}: {e}")


def write_events_binary(path, stream: EventStream) -> None:
    rec = np.empty(len(stream), dtype=_RECORD_DTYPE)
    rec["t"] = stream.ts
    rec["x"] = stream.xs
    rec["y"] = stream.ys
    rec["p"] = stream.ps
    with open(path, "wb") as f:
        f.write(STREAM_MAGIC)
        f.write(struct.pack("<IIQ", stream.width, stream.height, len(stream)))
        f.write(rec.tobytes())


def read_events_binary(path) -> EventStream:
    if not os.path.exists(path):
        raise DataError(f"event file not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != STREAM_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {STREAM_MAGIC!r}")
        head = f.read(16)
        if len(head) != 16:
            raise DataError(f"{path}: truncated header")
        width, height, count = struct.unpack("<IIQ", head)
        payload = f.read()
    expect = count * _RECORD_DTYPE.itemsize
    if len(payload) != expect:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, expected {expect} for {count} events")
    rec = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    try:
        return EventStream(rec["x"].astype(np.int32), rec["y"].astype(np.int32),
                           rec["t"].astype(np.int64), rec["p"], width, height)
    except DataError as e:
        raise DataError(f"{path}: {e}")


def read_events(path) -> EventStream:
    """Sniff the format: binary magic wins, otherwise text."""
    if not os.path.exists(path):
        raise DataError(f"event file not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == STREAM_MAGIC:
        return read_events_binary(path)
    return read_events_text(path)


def write_count_image_pgm(path, image: EventCountImage) -> None:
    """Plain PGM (P2). Counts are written as-is; maxval is the grid max."""
    counts = image.counts
    maxval = max(1, int(counts.max()) if counts.size else 1)
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"# polarity {image.polarity_tag}\n")
        f.write(f"{image.width} {image.height}\n{maxval}\n")
        for row in counts:
            f.write(" ".join(str(int(v)) for v in row) + "\n")


def write_count_image_binary(path, image: EventCountImage) -> None:
    counts = image.counts
    if counts.size and int(counts.max()) > 0xFFFFFFFF:
        raise DataError("count exceeds u32 range")
    with open(path, "wb") as f:
        f.write(ECI_MAGIC)
        f.write(struct.pack("<IIB", image.height, image.width,
                            TAG_TO_CODE[image.polarity_tag]))
        f.write(counts.astype("<u4").tobytes())


def read_count_image_binary(path) -> EventCountImage:
    if not os.path.exists(path):
        raise DataError(f"count image not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ECI_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {ECI_MAGIC!r}")
        head = f.read(9)
        if len(head) != 9:
            raise DataError(f"{path}: truncated header")
        height, width, code = struct.unpack("<IIB", head)
        if code not in CODE_TO_TAG:
            raise DataError(f"{path}: unknown polarity code {code}")
        payload = f.read()
    expect = height * width * 4
    if len(payload) != expect:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    counts = np.frombuffer(payload, dtype="<u4").astype(np.int64).reshape(height, width)
    return EventCountImage(counts, CODE_TO_TAG[code])
