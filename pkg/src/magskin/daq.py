"""Acquisition layer: 73-byte wire frames, log files, replay, bounded streams and baseline zeroing.

Frame layout (little-endian)::

    0   2  magic 0xAA 0x55
    2   1  version (1)
    3   4  seq, u32
    7   4  timestamp_us, u32 (wraps after ~71.6 min)
    11 60  15 x float32 uT
    71  2  CRC-16/CCITT-FALSE over bytes 2..70
"""
from __future__ import annotations

import binascii
import collections
import csv
import io
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import BadCrc, BadMagic, BadVersion, CorruptLog, FrameError, InvalidParams, Truncated
from .magnetics import N_CHANNELS, N_SENSORS, SensorReading

MAGIC = b"\xaa\x55"
FRAME_VERSION = 1
FRAME_LEN = 73
_BODY = struct.Struct(f"<BII{N_CHANNELS}f")  # version .. payload, 69 bytes
_CRC = struct.Struct("<H")
U32 = 1 << 32
F32_MAX = float(np.finfo(np.float32).max)

LOG_TAG = b"MSKLOG\x00\x00"
LOG_VERSION = 1
_LOG_HEADER = struct.Struct("<8sHI")

CSV_HEADER = ("timestamp_us",) + tuple(f"s{s}_{a}" for s in range(N_SENSORS) for a in "xyz")


def crc16_ccitt_false(data: bytes) -> int:
    # crc_hqx is the non-reflected 0x1021 CRC; seeding with 0xFFFF gives CCITT-FALSE.
    return binascii.crc_hqx(data, 0xFFFF)


def encode_frame(reading: SensorReading, seq: int) -> bytes:
    """Pack ``reading`` into one frame. Values are rounded to float32; the timestamp wraps mod 2**32."""
    if not 0 <= seq < U32:
        raise InvalidParams(f"seq {seq} does not fit in 32 bits")
    if np.any(np.abs(reading.values) > F32_MAX):
        raise InvalidParams("reading exceeds float32 range")
    body = _BODY.pack(FRAME_VERSION, seq, int(reading.timestamp_us) % U32, *reading.values.tolist())
    return MAGIC + body + _CRC.pack(crc16_ccitt_false(body))


def decode_frame(data: bytes) -> tuple[SensorReading, int]:
    """Validate and unpack the first 73 bytes of ``data``.

    Checks run in order: length, magic, CRC, version, so a corrupted version
    byte surfaces as a CRC failure.
    """
    if len(data) < FRAME_LEN:
        raise Truncated(f"need {FRAME_LEN} bytes, got {len(data)}")
    frame = bytes(data[:FRAME_LEN])
    if frame[:2] != MAGIC:
        raise BadMagic(f"bad magic {frame[:2].hex()}")
    body = frame[2:71]
    if crc16_ccitt_false(body) != _CRC.unpack_from(frame, 71)[0]:
        raise BadCrc("checksum mismatch")
    version, seq, ts, *values = _BODY.unpack(body)
    if version != FRAME_VERSION:
        raise BadVersion(f"unsupported frame version {version}")
    return SensorReading(ts, np.array(values, dtype=np.float64)), seq


def iter_frames(data: bytes, resync: bool = False) -> Iterator[tuple[SensorReading, int]]:
    """Decode back-to-back frames. With ``resync`` a bad frame is skipped by scanning for the next magic."""
    pos = 0
    n = len(data)
    while pos < n:
        try:
            yield decode_frame(data[pos:pos + FRAME_LEN])
            pos += FRAME_LEN
        except FrameError:
            if not resync:
                raise
            nxt = data.find(MAGIC, pos + 1)
            if nxt < 0:
                return
            pos = nxt


def unwrap_timestamps(raw: Iterable[int]) -> list[int]:
    """Undo 32-bit wrap assuming consecutive deltas are below 2**31 us in magnitude."""
    out: list[int] = []
    for t in raw:
        if not out:
            out.append(int(t))
            prev = int(t)
            continue
        delta = (int(t) - prev) % U32
        if delta >= U32 // 2:
            delta -= U32
        out.append(out[-1] + delta)
        prev = int(t)
    return out


# ---------------------------------------------------------------- log files

def encode_log(frames: Iterable[bytes]) -> bytes:
    frames = list(frames)
    return _LOG_HEADER.pack(LOG_TAG, LOG_VERSION, len(frames)) + b"".join(frames)


def write_log(path, readings: Iterable[SensorReading], first_seq: int = 0) -> int:
    """Write readings with consecutive sequence numbers; returns the frame count."""
    frames = [encode_frame(r, first_seq + k) for k, r in enumerate(readings)]
    with open(path, "wb") as fh:
        fh.write(encode_log(frames))
    return len(frames)


@dataclass(frozen=True)
class LogFile:
    version: int
    frames: tuple[bytes, ...]

    def __len__(self):
        return len(self.frames)

    def decoded(self) -> list[tuple[SensorReading, int]]:
        return [decode_frame(f) for f in self.frames]


def parse_log(blob: bytes) -> LogFile:
    if len(blob) < _LOG_HEADER.size:
        raise CorruptLog("file shorter than log header")
    tag, version, count = _LOG_HEADER.unpack_from(blob)
    if tag != LOG_TAG:
        raise CorruptLog(f"bad log tag {tag!r}")
    if version != LOG_VERSION:
        raise CorruptLog(f"unsupported log version {version}")
    body = blob[_LOG_HEADER.size:]
    if len(body) != count * FRAME_LEN:
        raise CorruptLog(f"header says {count} frames but body holds {len(body) / FRAME_LEN:g}")
    frames = tuple(body[k * FRAME_LEN:(k + 1) * FRAME_LEN] for k in range(count))
    last = -1
    for k, f in enumerate(frames):
        try:
            _, seq = decode_frame(f)
        except FrameError as e:
            raise CorruptLog(f"frame {k}: {e}") from e
        if seq <= last:
            raise CorruptLog(f"frame {k}: seq {seq} not above {last}")
        last = seq
    return LogFile(version, frames)


def read_log(path) -> LogFile:
    with open(path, "rb") as fh:
        return parse_log(fh.read())


def replay(log: LogFile, realtime: bool = False, clock: Callable[[], float] = time.monotonic,
           sleep: Callable[[float], None] = time.sleep) -> Iterator[tuple[SensorReading, int]]:
    """Yield decoded frames in file order; ``realtime`` paces them by their recorded timestamp deltas."""
    decoded = log.decoded()
    if not decoded:
        return
    ts = unwrap_timestamps(r.timestamp_us for r, _ in decoded)
    start = clock()
    for (reading, seq), t in zip(decoded, ts):
        if realtime:
            wait = start + (t - ts[0]) * 1e-6 - clock()
            if wait > 0:
                sleep(wait)
        yield reading, seq


# ---------------------------------------------------------------- streaming

class FrameStream:
    """Bounded single-producer/single-consumer queue. When full, the oldest item is dropped and counted."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise InvalidParams("capacity must be >= 1")
        self.capacity = capacity
        self._items: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self._closed = False
        self.dropped = 0
        self.delivered = 0

    def put(self, item) -> None:
        with self._cond:
            if self._closed:
                raise InvalidParams("stream is closed")
            if len(self._items) >= self.capacity:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)
            self._cond.notify()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def get(self, timeout: float | None = None):
        """Next item, or ``None`` once the stream is closed and drained (or on timeout)."""
        with self._cond:
            if not self._cond.wait_for(lambda: self._items or self._closed, timeout):
                return None
            if self._items:
                self.delivered += 1
                return self._items.popleft()
            return None

    def __iter__(self):
        while True:
            item = self.get()
            if item is None:
                return
            yield item


def pump(source: Iterable, stream: FrameStream) -> threading.Thread:
    """Feed ``source`` into ``stream`` from a background thread, closing it at the end."""
    def run():
        try:
            for item in source:
                stream.put(item)
        finally:
            stream.close()

    th = threading.Thread(target=run, daemon=True)
    th.start()
    return th


class BaselineState:
    """Running per-channel mean over the first ``window`` frames, then subtraction."""

    def __init__(self, window: int = 100):
        if window < 1:
            raise InvalidParams("baseline window must be >= 1")
        self.window = window
        self.count = 0
        self.mean = np.zeros(N_CHANNELS)

    @property
    def armed(self) -> bool:
        return self.count >= self.window

    def update(self, reading: SensorReading) -> tuple[SensorReading, bool]:
        """Returns the output reading and whether it is baseline-subtracted."""
        if not self.armed:
            self.count += 1
            self.mean = self.mean + (reading.values - self.mean) / self.count
            return reading, False
        return SensorReading(reading.timestamp_us, reading.values - self.mean), True


def baseline_subtract(stream: Iterable[SensorReading], T: int = 100) -> Iterator[tuple[SensorReading, bool]]:
    state = BaselineState(T)
    for r in stream:
        yield state.update(r)


# ---------------------------------------------------------------- CSV

def to_csv(readings: Iterable[SensorReading]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in readings:
        w.writerow([int(r.timestamp_us)] + [f"{v:.9g}" for v in r.values])
    return buf.getvalue()
