"""Ingestion: replayable sources, field extraction, and duplicate filtering.

Sources yield RawRecords (one JSON object per line). extract() maps raw JSON
to a RecordEnvelope; dedup() drops exact duplicates of normalized text inside
a bounded FIFO fingerprint window. Malformed input is skipped and counted,
never fatal — streaming sources are noisy.
"""

from __future__ import annotations

import json
import re
import socket
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .hashing import fnv1a64, fnv1a64_hex
from .types import RecordEnvelope

FULL_SPEED = float("inf")

_WS_RE = re.compile(r"\s+")


class SourceError(Exception):
    """Fatal source failure (unreadable file, bind failure)."""


class ExtractionError(Exception):
    """Payload is not a valid JSON object."""


class EmptyTextError(Exception):
    """Extracted text is empty or whitespace-only; record is dropped."""


@dataclass(frozen=True)
class RawRecord:
    source_id: str
    arrival_time: int  # epoch ms, non-decreasing per source
    payload: bytes


@dataclass
class IngestStats:
    """Conservation counters: records_in = envelopes_out + parse_skipped
    + empty_dropped + dup_dropped for every run."""

    records_in: int = 0
    parse_skipped: int = 0
    empty_dropped: int = 0
    dup_dropped: int = 0
    noise_flagged: int = 0
    envelopes_out: int = 0

    def reconciles(self) -> bool:
        return self.records_in == (
            self.envelopes_out + self.parse_skipped + self.empty_dropped + self.dup_dropped
        )


def open_replay_source(
    path: str | Path,
    speedup: float = FULL_SPEED,
    source_id: Optional[str] = None,
    stats: Optional[IngestStats] = None,
) -> Iterator[RawRecord]:
    """Replay a JSON-lines file as a stream of RawRecords.

    Inter-record delays are the recorded timestamp gaps divided by speedup;
    speedup=inf (--full-speed) sleeps never. Lines that are not valid JSON
    objects are skipped and counted in stats.parse_skipped.
    """
    if speedup <= 0:
        raise ValueError("speedup must be > 0")
    path = Path(path)
    if not path.is_file():
        # raised before the generator starts, so callers fail fast
        raise SourceError(f"cannot read source file: {path}")
    sid = source_id if source_id is not None else str(path)
    stats = stats if stats is not None else IngestStats()

    def _replay() -> Iterator[RawRecord]:
        prev_ts: Optional[int] = None
        last_arrival = 0
        with path.open("rb") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                stats.records_in += 1
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("not a JSON object")
                except (ValueError, UnicodeDecodeError):
                    stats.parse_skipped += 1
                    continue
                ts = obj.get("timestamp")
                recorded = ts if isinstance(ts, int) else None
                if recorded is not None and prev_ts is not None and speedup != FULL_SPEED:
                    gap_s = max(0, recorded - prev_ts) / 1000.0 / speedup
                    if gap_s > 0:
                        time.sleep(gap_s)
                if recorded is not None:
                    prev_ts = recorded
                arrival = recorded if recorded is not None else int(time.time() * 1000)
                last_arrival = max(last_arrival, arrival)
                yield RawRecord(source_id=sid, arrival_time=last_arrival, payload=line)

    return _replay()


def open_tcp_source(
    port: int,
    host: str = "127.0.0.1",
    source_id: Optional[str] = None,
    stats: Optional[IngestStats] = None,
    accept_timeout: Optional[float] = None,
) -> Iterator[RawRecord]:
    """Accept one connection and stream its JSON lines until the peer closes.

    Same line format as the file source; malformed lines are skipped and
    counted. The listening socket is bound before the first record is
    requested so callers can connect immediately after the generator starts.
    """
    stats = stats if stats is not None else IngestStats()
    sid = source_id if source_id is not None else f"tcp:{port}"
    try:
        # bound before the generator starts, so a caller can connect as
        # soon as this call returns
        server = socket.create_server((host, port))
    except OSError as exc:
        raise SourceError(f"cannot bind tcp source on {host}:{port}: {exc}") from exc

    def _stream() -> Iterator[RawRecord]:
        with server:
            if accept_timeout is not None:
                server.settimeout(accept_timeout)
            try:
                conn, _ = server.accept()
            except socket.timeout as exc:
                raise SourceError(f"no connection on {host}:{port}") from exc
            last_arrival = 0
            with conn, conn.makefile("rb") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    stats.records_in += 1
                    try:
                        obj = json.loads(line)
                        if not isinstance(obj, dict):
                            raise ValueError("not a JSON object")
                    except (ValueError, UnicodeDecodeError):
                        stats.parse_skipped += 1
                        continue
                    ts = obj.get("timestamp")
                    arrival = ts if isinstance(ts, int) else int(time.time() * 1000)
                    last_arrival = max(last_arrival, arrival)
                    yield RawRecord(source_id=sid, arrival_time=last_arrival, payload=line)

    return _stream()


def extract(raw: RawRecord) -> RecordEnvelope:
    """Map raw JSON fields onto an envelope.

    id -> doc_id (missing: hash of the payload), timestamp -> event_time
    (missing: arrival_time), text -> text, user -> author, label -> label.
    """
    try:
        obj = json.loads(raw.payload)
        if not isinstance(obj, dict):
            raise ValueError("not a JSON object")
    except (ValueError, UnicodeDecodeError) as exc:
        raise ExtractionError(f"invalid JSON payload: {exc}") from exc

    text = obj.get("text")
    if not isinstance(text, str) or not text.strip():
        raise EmptyTextError("record has empty text")

    doc_id = obj.get("id")
    if doc_id is None:
        doc_id = fnv1a64_hex(raw.payload)
    else:
        doc_id = str(doc_id)
    event_time = obj.get("timestamp")
    if not isinstance(event_time, int):
        event_time = raw.arrival_time
    author = obj.get("user")
    label = obj.get("label")
    return RecordEnvelope(
        doc_id=doc_id,
        event_time=event_time,
        text=text,
        author=author if isinstance(author, str) else None,
        label=label if isinstance(label, str) else None,
    )


class DedupState:
    """Bounded FIFO set of 64-bit text fingerprints (one-pass memory bound)."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.seen: OrderedDict[int, None] = OrderedDict()
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.seen)


def text_fingerprint(text: str) -> int:
    """64-bit hash of the lowercased, whitespace-collapsed text."""
    return fnv1a64(_WS_RE.sub(" ", text.lower()).strip())


def dedup(env: RecordEnvelope, state: DedupState) -> bool:
    """True = keep (fingerprint inserted), False = drop (already seen)."""
    fp = text_fingerprint(env.text)
    if fp in state.seen:
        return False
    state.seen[fp] = None
    if len(state.seen) > state.capacity:
        state.seen.popitem(last=False)  # oldest-first eviction
        state.evictions += 1
    return True


def noise_filter(env: RecordEnvelope, stats: IngestStats) -> Optional[RecordEnvelope]:
    """Pass-through slot for a noise/fake-news detector.

    No detection method is wired in; a real detector would return None for
    rejected records and bump stats.noise_flagged.
    """
    return env
