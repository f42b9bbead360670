"""Embedded partitioned append-only message log with consumer groups.

Publish/subscribe distribution between pipeline levels, at-least-once
delivery with explicit commits. Layout on disk:

    <data_dir>/mqlog/<topic>/<partition>/segment-<base_offset>.log
    <data_dir>/mqlog/<topic>/meta.json            {"partitions": N}
    <data_dir>/mqlog/groups/<group_id>.json       {topic: {partition: next_offset}}

Records are length-prefixed: [u32 length][u64 offset][u64 event_time][payload],
little-endian. Segments roll at 64 MiB. A sparse in-memory offset index
(one entry per 4096 records, rebuilt by scanning on open) accelerates seeks.

Partition assignment is fnv1a64(key) mod partitions. Appends are visible to
readers immediately (unbuffered writes); flush() additionally fsyncs, which
callers invoke at micro-batch boundaries.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .hashing import fnv1a64

SEGMENT_BYTES = 64 * 1024 * 1024
SPARSE_INDEX_EVERY = 4096
_HEADER = struct.Struct("<IQQ")  # payload length, offset, event_time


class TopicExists(Exception):
    pass


class UnknownTopic(Exception):
    pass


class InvalidCommit(Exception):
    pass


@dataclass(frozen=True)
class LogPosition:
    topic: str
    partition: int
    offset: int


class _Segment:
    """One append-only segment file; base_offset is its first record's offset."""

    def __init__(self, path: Path, base_offset: int):
        self.path = path
        self.base_offset = base_offset
        self.size = path.stat().st_size if path.exists() else 0
        self.count = 0
        # (offset, byte position) every SPARSE_INDEX_EVERY records
        self.sparse: list[tuple[int, int]] = []

    def scan(self) -> int:
        """Rebuild count and sparse index by walking record headers.

        Returns the next offset after this segment. A trailing partial record
        (crash mid-write) is truncated away.
        """
        pos = 0
        offset = self.base_offset
        with self.path.open("rb") as fh:
            size = self.path.stat().st_size
            while pos + _HEADER.size <= size:
                header = fh.read(_HEADER.size)
                if len(header) < _HEADER.size:
                    break
                length, _, _ = _HEADER.unpack(header)
                if pos + _HEADER.size + length > size:
                    break  # torn tail
                if self.count % SPARSE_INDEX_EVERY == 0:
                    self.sparse.append((offset, pos))
                fh.seek(length, os.SEEK_CUR)
                pos += _HEADER.size + length
                offset += 1
                self.count += 1
        if pos < self.path.stat().st_size:
            with self.path.open("r+b") as fh:
                fh.truncate(pos)
        self.size = pos
        return offset

    def locate(self, offset: int) -> int:
        """Byte position to start scanning from for the given offset."""
        pos = 0
        for off, byte_pos in self.sparse:
            if off <= offset:
                pos = byte_pos
            else:
                break
        return pos


class _Partition:
    def __init__(self, dirpath: Path, topic: str, number: int, segment_bytes: int = SEGMENT_BYTES):
        self.dirpath = dirpath
        self.topic = topic
        self.number = number
        self.segment_bytes = segment_bytes
        self.lock = threading.Lock()
        self.segments: list[_Segment] = []
        self.high_watermark = 0
        self._writer: Optional[object] = None
        self._recover()

    def _recover(self) -> None:
        self.dirpath.mkdir(parents=True, exist_ok=True)
        paths = sorted(
            self.dirpath.glob("segment-*.log"),
            key=lambda p: int(p.stem.split("-")[1]),
        )
        next_offset = 0
        for path in paths:
            seg = _Segment(path, base_offset=int(path.stem.split("-")[1]))
            next_offset = seg.scan()
            self.segments.append(seg)
        self.high_watermark = next_offset
        if not self.segments:
            self._roll(base_offset=0)

    def _roll(self, base_offset: int) -> None:
        if self._writer is not None:
            self._writer.close()
            self._writer = None
        path = self.dirpath / f"segment-{base_offset}.log"
        path.touch(exist_ok=True)
        self.segments.append(_Segment(path, base_offset))

    def _writer_fh(self):
        if self._writer is None:
            # buffering=0: appends become visible to independent readers at once
            self._writer = open(self.segments[-1].path, "ab", buffering=0)
        return self._writer

    def append(self, payload: bytes, event_time: int) -> int:
        with self.lock:
            seg = self.segments[-1]
            if seg.size >= self.segment_bytes:
                self._roll(base_offset=self.high_watermark)
                seg = self.segments[-1]
            offset = self.high_watermark
            record = _HEADER.pack(len(payload), offset, event_time) + payload
            if seg.count % SPARSE_INDEX_EVERY == 0:
                seg.sparse.append((offset, seg.size))
            self._writer_fh().write(record)
            seg.size += len(record)
            seg.count += 1
            self.high_watermark = offset + 1
            return offset

    def read_from(self, offset: int, max_records: int) -> list[tuple[int, int, bytes]]:
        """Records as (offset, event_time, payload), starting at `offset`."""
        with self.lock:
            watermark = self.high_watermark
            segments = list(self.segments)
        if offset >= watermark or max_records <= 0:
            return []
        out: list[tuple[int, int, bytes]] = []
        for seg_i, seg in enumerate(segments):
            seg_end = (
                segments[seg_i + 1].base_offset if seg_i + 1 < len(segments) else watermark
            )
            if seg_end <= offset or len(out) >= max_records:
                continue
            with seg.path.open("rb") as fh:
                pos = seg.locate(max(offset, seg.base_offset))
                fh.seek(pos)
                while len(out) < max_records:
                    header = fh.read(_HEADER.size)
                    if len(header) < _HEADER.size:
                        break
                    length, rec_offset, event_time = _HEADER.unpack(header)
                    payload = fh.read(length)
                    if len(payload) < length:
                        break
                    if rec_offset >= watermark:
                        break
                    if rec_offset >= offset:
                        out.append((rec_offset, event_time, payload))
        return out

    def flush(self) -> None:
        with self.lock:
            if self._writer is not None:
                os.fsync(self._writer.fileno())

    def close(self) -> None:
        with self.lock:
            if self._writer is not None:
                self._writer.flush()
                os.fsync(self._writer.fileno())
                self._writer.close()
                self._writer = None


class ConsumerGroup:
    """A named reader; committed offsets are the next offset to deliver."""

    def __init__(self, group_id: str, log: "MessageLog"):
        self.group_id = group_id
        self._log = log
        self._lock = threading.Lock()
        self._path = log.groups_dir / f"{group_id}.json"
        self.committed: dict[str, dict[int, int]] = {}
        if self._path.exists():
            raw = json.loads(self._path.read_text(encoding="utf-8"))
            self.committed = {
                topic: {int(p): off for p, off in parts.items()}
                for topic, parts in raw.items()
            }

    def position(self, topic: str, partition: int) -> int:
        with self._lock:
            return self.committed.get(topic, {}).get(partition, 0)

    def _persist(self) -> None:
        tmp = self._path.with_suffix(".tmp")
        body = {
            topic: {str(p): off for p, off in sorted(parts.items())}
            for topic, parts in sorted(self.committed.items())
        }
        tmp.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
        tmp.replace(self._path)

    def commit(self, positions: list[LogPosition]) -> None:
        """Mark positions processed; the next poll starts after them. Durable."""
        with self._lock:
            for pos in positions:
                watermark = self._log.high_watermark(pos.topic, pos.partition)
                if pos.offset >= watermark:
                    raise InvalidCommit(
                        f"offset {pos.offset} beyond watermark {watermark} "
                        f"({pos.topic}/{pos.partition})"
                    )
                parts = self.committed.setdefault(pos.topic, {})
                parts[pos.partition] = max(parts.get(pos.partition, 0), pos.offset + 1)
            self._persist()


class MessageLog:
    """Topic registry plus produce/consume entry points."""

    def __init__(self, data_dir: str | Path, segment_bytes: int = SEGMENT_BYTES):
        self.root = Path(data_dir) / "mqlog"
        self.groups_dir = self.root / "groups"
        self.groups_dir.mkdir(parents=True, exist_ok=True)
        self.segment_bytes = segment_bytes
        self._lock = threading.Lock()
        self._topics: dict[str, list[_Partition]] = {}
        self._groups: dict[str, ConsumerGroup] = {}
        self._recover()

    def _recover(self) -> None:
        for topic_dir in sorted(self.root.iterdir()) if self.root.exists() else []:
            if not topic_dir.is_dir() or topic_dir.name == "groups":
                continue
            meta_path = topic_dir / "meta.json"
            if meta_path.exists():
                n = json.loads(meta_path.read_text(encoding="utf-8"))["partitions"]
            else:
                n = sum(1 for d in topic_dir.iterdir() if d.is_dir() and d.name.isdigit())
            self._topics[topic_dir.name] = [
                _Partition(topic_dir / str(i), topic_dir.name, i, self.segment_bytes)
                for i in range(n)
            ]

    # -- topics --------------------------------------------------------

    def create_topic(self, name: str, partitions: int) -> None:
        if partitions < 1:
            raise ValueError("partitions must be >= 1")
        with self._lock:
            if name in self._topics:
                raise TopicExists(name)
            topic_dir = self.root / name
            topic_dir.mkdir(parents=True, exist_ok=True)
            (topic_dir / "meta.json").write_text(
                json.dumps({"partitions": partitions}) + "\n", encoding="utf-8"
            )
            self._topics[name] = [
                _Partition(topic_dir / str(i), name, i, self.segment_bytes)
                for i in range(partitions)
            ]

    def ensure_topic(self, name: str, partitions: int) -> None:
        try:
            self.create_topic(name, partitions)
        except TopicExists:
            pass

    def topics(self) -> dict[str, int]:
        with self._lock:
            return {name: len(parts) for name, parts in sorted(self._topics.items())}

    def _partitions(self, topic: str) -> list[_Partition]:
        parts = self._topics.get(topic)
        if parts is None:
            raise UnknownTopic(topic)
        return parts

    def partition_for_key(self, topic: str, key: str) -> int:
        return fnv1a64(key) % len(self._partitions(topic))

    def high_watermark(self, topic: str, partition: int) -> int:
        return self._partitions(topic)[partition].high_watermark

    def partition_count(self, topic: str) -> int:
        return len(self._partitions(topic))

    # -- produce -------------------------------------------------------

    def append(self, topic: str, key: str, payload: bytes, event_time: int = 0) -> LogPosition:
        parts = self._partitions(topic)
        partition = fnv1a64(key) % len(parts)
        offset = parts[partition].append(payload, event_time)
        return LogPosition(topic=topic, partition=partition, offset=offset)

    def flush(self, topic: Optional[str] = None) -> None:
        """fsync pending appends; called at micro-batch boundaries."""
        with self._lock:
            topics = [topic] if topic else list(self._topics)
        for name in topics:
            for part in self._partitions(name):
                part.flush()

    # -- consume -------------------------------------------------------

    def group(self, group_id: str) -> ConsumerGroup:
        with self._lock:
            if group_id not in self._groups:
                self._groups[group_id] = ConsumerGroup(group_id, self)
            return self._groups[group_id]

    _POLL_CHUNK = 512

    def poll_with_times(
        self, group: ConsumerGroup, topic: str, max_records: int
    ) -> list[tuple[LogPosition, int, bytes]]:
        """Up to max_records starting at the group's committed positions,
        round-robin across partitions in chunks. Does not advance offsets.
        Each element is (position, event_time, payload)."""
        parts = self._partitions(topic)
        out: list[tuple[LogPosition, int, bytes]] = []
        cursors = {p.number: group.position(topic, p.number) for p in parts}
        exhausted: set[int] = set()
        while len(out) < max_records and len(exhausted) < len(parts):
            for part in parts:
                remaining = max_records - len(out)
                if remaining <= 0:
                    break
                if part.number in exhausted:
                    continue
                batch = part.read_from(cursors[part.number], min(remaining, self._POLL_CHUNK))
                if not batch:
                    exhausted.add(part.number)
                    continue
                for offset, event_time, payload in batch:
                    out.append((LogPosition(topic, part.number, offset), event_time, payload))
                cursors[part.number] = batch[-1][0] + 1
        return out

    def poll(
        self, group: ConsumerGroup, topic: str, max_records: int
    ) -> list[tuple[LogPosition, bytes]]:
        return [(pos, payload) for pos, _, payload in self.poll_with_times(group, topic, max_records)]

    def read_topic(self, topic: str, chunk: int = 2048):
        """Iterate every record of a topic from offset 0, partition by
        partition, without consumer-group bookkeeping (read-only queries).
        Yields (LogPosition, event_time, payload)."""
        for part in self._partitions(topic):
            offset = 0
            while True:
                batch = part.read_from(offset, chunk)
                if not batch:
                    break
                for rec_offset, event_time, payload in batch:
                    yield LogPosition(topic, part.number, rec_offset), event_time, payload
                offset = batch[-1][0] + 1

    def lag(self, group: ConsumerGroup, topic: str) -> int:
        """Records appended but not yet committed by the group."""
        total = 0
        for part in self._partitions(topic):
            total += part.high_watermark - group.position(topic, part.number)
        return total

    def close(self) -> None:
        with self._lock:
            for parts in self._topics.values():
                for part in parts:
                    part.close()
