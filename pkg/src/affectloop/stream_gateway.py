"""Wire-level ingestion of EEG sample streams and emission of prediction
messages to consumers.

Ingestion is newline-delimited JSON over TCP feeding a bounded frame queue;
feedback goes out as identical JSON payload bytes over UDP datagrams and an
in-process broadcast hub that the WebSocket endpoint drains. Every dropped
or skipped input is observable in counters.
"""

from __future__ import annotations

import json
import math
import socket
import threading
import time
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .signal_core import N_CHANNELS, EegFrame, read_replay_csv

PREDICTION_SCHEMA_VERSION = 1
DEFAULT_QUEUE_SIZE = 4096
WS_CLIENT_QUEUE_SIZE = 64


@dataclass(frozen=True)
class SampleMessage:
    """One wire sample: timestamp plus 32 channel values in uV."""

    t: float
    ch: tuple[float, ...]

    def __post_init__(self):
        if len(self.ch) != N_CHANNELS:
            raise ValueError(f"need {N_CHANNELS} channels, got {len(self.ch)}")
        vals = tuple(float(v) for v in self.ch)
        if not all(math.isfinite(v) for v in vals) or not math.isfinite(self.t):
            raise ValueError("non-finite sample values")
        object.__setattr__(self, "ch", vals)


@dataclass(frozen=True)
class PredictionMessage:
    """Classifier output broadcast to the UI; class codes -1/0/+1."""

    t: float
    arousal: int
    valence: int
    arousal_scores: tuple[float, float, float]
    valence_scores: tuple[float, float, float]
    session_phase: str

    def __post_init__(self):
        if self.arousal not in (-1, 0, 1) or self.valence not in (-1, 0, 1):
            raise ValueError("class codes must be -1, 0, or +1")
        for name in ("arousal_scores", "valence_scores"):
            scores = tuple(float(v) for v in getattr(self, name))
            if len(scores) != 3 or not all(math.isfinite(v) for v in scores):
                raise ValueError(f"{name} must be 3 finite values")
            object.__setattr__(self, name, scores)
        if not math.isfinite(self.t):
            raise ValueError("non-finite timestamp")


def encode_sample(msg: SampleMessage) -> str:
    return json.dumps({"t": msg.t, "ch": list(msg.ch)}, separators=(",", ":"))


def decode_sample(line: str) -> SampleMessage:
    """Parse one ingest line; unknown fields are ignored."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("sample message must be a JSON object")
    if "t" not in doc or "ch" not in doc:
        raise ValueError("sample message needs 't' and 'ch'")
    t, ch = doc["t"], doc["ch"]
    if not isinstance(t, (int, float)) or isinstance(t, bool):
        raise ValueError("'t' must be a number")
    if not isinstance(ch, list) or len(ch) != N_CHANNELS:
        raise ValueError(f"'ch' must be a list of {N_CHANNELS} numbers")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in ch):
        raise ValueError("'ch' must contain numbers only")
    return SampleMessage(float(t), tuple(float(v) for v in ch))


def encode_prediction(msg: PredictionMessage) -> bytes:
    doc = {
        "v": PREDICTION_SCHEMA_VERSION,
        "t": msg.t,
        "arousal": msg.arousal,
        "valence": msg.valence,
        "arousal_scores": list(msg.arousal_scores),
        "valence_scores": list(msg.valence_scores),
        "session_phase": msg.session_phase,
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()


def decode_prediction(payload: bytes | str) -> PredictionMessage:
    """Inverse of encode_prediction; unknown fields are ignored."""
    doc = json.loads(payload)
    if not isinstance(doc, dict):
        raise ValueError("prediction message must be a JSON object")
    if doc.get("v") != PREDICTION_SCHEMA_VERSION:
        raise ValueError(f"unsupported prediction version: {doc.get('v')!r}")
    return PredictionMessage(
        t=float(doc["t"]),
        arousal=int(doc["arousal"]),
        valence=int(doc["valence"]),
        arousal_scores=tuple(float(v) for v in doc["arousal_scores"]),
        valence_scores=tuple(float(v) for v in doc["valence_scores"]),
        session_phase=str(doc["session_phase"]),
    )


@dataclass
class IngestCounters:
    received: int = 0
    delivered: int = 0
    malformed: int = 0
    dropped_overflow: int = 0
    dropped_out_of_order: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_overflow + self.dropped_out_of_order

    def snapshot(self) -> dict:
        return {
            "received": self.received,
            "delivered": self.delivered,
            "malformed": self.malformed,
            "dropped": self.dropped,
            "dropped_overflow": self.dropped_overflow,
            "dropped_out_of_order": self.dropped_out_of_order,
        }


class LineIngestor:
    """Turns raw ingest lines into an ordered, bounded queue of EegFrames.

    Once the queue is drained, received = delivered + dropped + malformed.
    Thread-safe: producers call feed_line, one consumer calls take.
    """

    def __init__(self, max_queue: int = DEFAULT_QUEUE_SIZE):
        if max_queue < 1:
            raise ValueError("max_queue must be >= 1")
        self.max_queue = max_queue
        self.counters = IngestCounters()
        self._queue: deque[EegFrame] = deque()
        self._lock = threading.Lock()
        self._last_t = -math.inf

    def feed_line(self, line: str) -> None:
        line = line.strip()
        if not line:
            return
        with self._lock:
            self.counters.received += 1
            try:
                msg = decode_sample(line)
            except ValueError:
                self.counters.malformed += 1
                return
            if msg.t <= self._last_t:
                self.counters.dropped_out_of_order += 1
                return
            self._last_t = msg.t
            if len(self._queue) >= self.max_queue:
                self._queue.popleft()
                self.counters.dropped_overflow += 1
            self._queue.append(EegFrame(msg.t, np.array(msg.ch)))

    def take(self, max_n: int | None = None) -> list[EegFrame]:
        """Remove and return up to max_n queued frames (all if None)."""
        out = []
        with self._lock:
            while self._queue and (max_n is None or len(out) < max_n):
                out.append(self._queue.popleft())
            self.counters.delivered += len(out)
        return out

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._queue)


class IngestServer:
    """TCP listener feeding a LineIngestor with newline-delimited JSON."""

    def __init__(self, ingestor: LineIngestor, host: str = "127.0.0.1",
                 port: int = 0):
        self.ingestor = ingestor
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self.host, self.port = self._sock.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop,
                                        name="ingest-accept", daemon=True)
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,),
                             name="ingest-conn", daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        buf = b""
        with conn:
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except OSError:
                    return
                if not chunk:
                    return
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    self.ingestor.feed_line(line.decode(errors="replace"))

    def close(self) -> None:
        self._stop.set()
        self._sock.close()
        self._thread.join(timeout=2.0)


class UdpSink:
    """Fire-and-forget UDP datagrams; send errors are counted, never raised."""

    def __init__(self, host: str, port: int):
        self.address = (host, port)
        self.sent = 0
        self.errors = 0
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, payload: bytes) -> None:
        try:
            self._sock.sendto(payload, self.address)
            self.sent += 1
        except OSError:
            self.errors += 1

    def close(self) -> None:
        self._sock.close()


class Subscription:
    """One consumer's bounded payload queue; oldest dropped when behind."""

    def __init__(self, max_queue: int):
        self._queue: deque[bytes] = deque()
        self._max = max_queue
        self._cond = threading.Condition()
        self.dropped = 0
        self.closed = False

    def _push(self, payload: bytes) -> None:
        with self._cond:
            if len(self._queue) >= self._max:
                self._queue.popleft()
                self.dropped += 1
            self._queue.append(payload)
            self._cond.notify()

    def get(self, timeout: float | None = None) -> bytes | None:
        with self._cond:
            if not self._queue:
                self._cond.wait(timeout)
            if not self._queue:
                return None
            return self._queue.popleft()

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify()


class BroadcastHub:
    """Fan-out of payload bytes to any number of subscribers."""

    def __init__(self, client_queue_size: int = WS_CLIENT_QUEUE_SIZE):
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()
        self._client_queue_size = client_queue_size

    def subscribe(self) -> Subscription:
        sub = Subscription(self._client_queue_size)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.close()
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def send(self, payload: bytes) -> None:
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub._push(payload)

    @property
    def n_subscribers(self) -> int:
        with self._lock:
            return len(self._subs)


def emit_prediction(msg: PredictionMessage, sinks: Sequence) -> bytes:
    """Encode once and hand identical payload bytes to every sink."""
    payload = encode_prediction(msg)
    if not sinks:
        warnings.warn("no prediction sinks configured; message discarded")
        return payload
    for sink in sinks:
        sink.send(payload)
    return payload


class ReplayStream:
    """Frames from a replay CSV, paced by the recorded timestamps.

    rate scales playback speed; math.inf replays as fast as possible.
    Malformed rows are skipped and counted in .skipped.
    """

    def __init__(self, path: str, rate: float = math.inf):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.times, self.samples, self.skipped = read_replay_csv(path)

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[EegFrame]:
        if len(self.times) == 0:
            return
        if math.isinf(self.rate):
            for t, row in zip(self.times, self.samples):
                yield EegFrame(float(t), row)
            return
        wall_start = time.monotonic()
        t0 = float(self.times[0])
        for t, row in zip(self.times, self.samples):
            target = wall_start + (float(t) - t0) / self.rate
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            yield EegFrame(float(t), row)


def replay_file(path: str, rate: float = math.inf) -> ReplayStream:
    return ReplayStream(path, rate)
