"""Schema-free append-only document archive with time-range scans.

Envelopes are stored verbatim as JSON lines:

    <data_dir>/archive/segment-<n>.jsonl
    <data_dir>/archive/segment-<n>.manifest.json
        {"min_time": ms, "max_time": ms, "record_count": n, "sealed": bool}

Segments roll at 128 MiB or 6 hours of event-time span. Scans read only
segments whose [min_time, max_time] intersects the query range; the sidecar
manifests make pruning possible without opening segment files.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

from .types import RecordEnvelope

SEGMENT_BYTES = 128 * 1024 * 1024
SEGMENT_SPAN_MS = 6 * 60 * 60 * 1000


class ArchiveError(Exception):
    """IO failure while appending; callers apply backpressure, never drop."""


@dataclass
class ArchiveSegment:
    path: Path
    min_time: int
    max_time: int
    record_count: int
    sealed: bool

    @property
    def manifest_path(self) -> Path:
        return self.path.with_name(self.path.name.replace(".jsonl", ".manifest.json"))

    def write_manifest(self) -> None:
        body = {
            "min_time": self.min_time,
            "max_time": self.max_time,
            "record_count": self.record_count,
            "sealed": self.sealed,
        }
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
        tmp.replace(self.manifest_path)

    @classmethod
    def from_manifest(cls, path: Path) -> "ArchiveSegment":
        body = json.loads(path.read_text(encoding="utf-8"))
        seg_path = path.with_name(path.name.replace(".manifest.json", ".jsonl"))
        return cls(
            path=seg_path,
            min_time=body["min_time"],
            max_time=body["max_time"],
            record_count=body["record_count"],
            sealed=body["sealed"],
        )


class Archive:
    """Single writer, many concurrent readers; whole records only."""

    def __init__(
        self,
        data_dir: str | Path,
        segment_bytes: int = SEGMENT_BYTES,
        segment_span_ms: int = SEGMENT_SPAN_MS,
    ):
        self.root = Path(data_dir) / "archive"
        self.root.mkdir(parents=True, exist_ok=True)
        self.segment_bytes = segment_bytes
        self.segment_span_ms = segment_span_ms
        self._lock = threading.Lock()
        self.segments: list[ArchiveSegment] = []
        self.corrupt_skipped = 0
        self.files_opened = 0  # scan instrumentation: pruning tests read this
        self._writer = None
        self._recover()

    def _recover(self) -> None:
        manifests = sorted(
            self.root.glob("segment-*.manifest.json"),
            key=lambda p: int(p.name.split("-")[1].split(".")[0]),
        )
        known = {m.name.replace(".manifest.json", ".jsonl") for m in manifests}
        self.segments = [ArchiveSegment.from_manifest(m) for m in manifests]
        # a segment written but not yet manifested (crash) is rebuilt by scanning
        for seg_path in sorted(self.root.glob("segment-*.jsonl")):
            if seg_path.name in known:
                continue
            seg = self._rebuild_manifest(seg_path)
            self.segments.append(seg)
        self.segments.sort(key=lambda s: int(s.path.name.split("-")[1].split(".")[0]))

    def _rebuild_manifest(self, seg_path: Path) -> ArchiveSegment:
        min_t, max_t, count = None, None, 0
        with seg_path.open("rb") as fh:
            for line in fh:
                try:
                    env = RecordEnvelope.from_json(line)
                except (ValueError, KeyError):
                    self.corrupt_skipped += 1
                    continue
                count += 1
                min_t = env.event_time if min_t is None else min(min_t, env.event_time)
                max_t = env.event_time if max_t is None else max(max_t, env.event_time)
        seg = ArchiveSegment(
            path=seg_path,
            min_time=min_t if min_t is not None else 0,
            max_time=max_t if max_t is not None else 0,
            record_count=count,
            sealed=False,
        )
        seg.write_manifest()
        return seg

    def _next_segment_number(self) -> int:
        numbers = [int(s.path.name.split("-")[1].split(".")[0]) for s in self.segments]
        return max(numbers) + 1 if numbers else 0

    def _open_segment(self) -> ArchiveSegment:
        n = self._next_segment_number()
        seg = ArchiveSegment(
            path=self.root / f"segment-{n}.jsonl",
            min_time=0,
            max_time=0,
            record_count=0,
            sealed=False,
        )
        seg.path.touch()
        self.segments.append(seg)
        return seg

    def _active(self) -> ArchiveSegment:
        if not self.segments or self.segments[-1].sealed:
            return self._open_segment()
        return self.segments[-1]

    def append(self, env: RecordEnvelope) -> ArchiveSegment:
        """Serialize the envelope verbatim; rolls the segment as configured."""
        with self._lock:
            seg = self._active()
            size = seg.path.stat().st_size
            span = seg.max_time - seg.min_time if seg.record_count else 0
            if seg.record_count and (size >= self.segment_bytes or span >= self.segment_span_ms):
                self._seal_locked(seg)
                seg = self._open_segment()
            try:
                if self._writer is None or self._writer.name != str(seg.path):
                    if self._writer is not None:
                        self._writer.close()
                    self._writer = seg.path.open("a", encoding="utf-8")
                self._writer.write(env.to_json() + "\n")
                self._writer.flush()  # readers never see a partial record
            except OSError as exc:
                raise ArchiveError(f"append failed: {exc}") from exc
            if seg.record_count == 0:
                seg.min_time = seg.max_time = env.event_time
            else:
                seg.min_time = min(seg.min_time, env.event_time)
                seg.max_time = max(seg.max_time, env.event_time)
            seg.record_count += 1
            return seg

    def _seal_locked(self, seg: ArchiveSegment) -> None:
        seg.sealed = True
        seg.write_manifest()

    def flush(self) -> None:
        """Persist the active segment's manifest; called at batch boundaries."""
        with self._lock:
            if self.segments and not self.segments[-1].sealed:
                self.segments[-1].write_manifest()

    def close(self) -> None:
        with self._lock:
            if self._writer is not None:
                self._writer.close()
                self._writer = None
            if self.segments and not self.segments[-1].sealed:
                self.segments[-1].write_manifest()

    def record_count(self) -> int:
        with self._lock:
            return sum(s.record_count for s in self.segments)

    def scan(
        self,
        start: int = 0,
        end: Optional[int] = None,
        predicate: Optional[Callable[[RecordEnvelope], bool]] = None,
        contains: Optional[str] = None,
    ) -> Iterator[RecordEnvelope]:
        """Envelopes with event_time in [start, end], in append order.

        `contains` is a case-insensitive text filter; `predicate` an arbitrary
        one. Segments wholly outside the range are not opened. Corrupt records
        are skipped and counted in corrupt_skipped.
        """
        if end is None:
            end = 2**63 - 1
        if start > end:
            raise ValueError("start must be <= end")
        needle = contains.lower() if contains is not None else None
        with self._lock:
            segments = list(self.segments)
        for seg in segments:
            if seg.record_count == 0 or seg.max_time < start or seg.min_time > end:
                continue
            self.files_opened += 1
            with seg.path.open("rb") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        env = RecordEnvelope.from_json(line)
                    except (ValueError, KeyError):
                        self.corrupt_skipped += 1
                        continue
                    if not (start <= env.event_time <= end):
                        continue
                    if needle is not None and needle not in env.text.lower():
                        continue
                    if predicate is not None and not predicate(env):
                        continue
                    yield env
