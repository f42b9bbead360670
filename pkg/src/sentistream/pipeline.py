"""Wiring between pipeline stages.

run_ingest drives source → log while two consumer groups tee the input topic
into the archive and the search index on background threads. Everything is
drained to the high watermark before the summary is returned, so counters
reconcile exactly at exit.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .archive import Archive
from .index import InvertedIndex
from .ingest import (
    DedupState,
    EmptyTextError,
    ExtractionError,
    IngestStats,
    RawRecord,
    dedup,
    extract,
    noise_filter,
)
from .mqlog import MessageLog
from .types import LabeledRecord, RecordEnvelope

ARCHIVE_GROUP = "archiver"
INDEX_GROUP = "indexer"
LABELED_INDEX_GROUP = "indexer-labeled"


@dataclass
class IngestSummary:
    stats: IngestStats
    appended: int
    archived: int
    indexed: int
    snapshot: Optional[str] = None

    def to_text(self) -> str:
        s = self.stats
        lines = [
            f"records_in      {s.records_in}",
            f"parse_skipped   {s.parse_skipped}",
            f"empty_dropped   {s.empty_dropped}",
            f"dup_dropped     {s.dup_dropped}",
            f"noise_flagged   {s.noise_flagged}",
            f"envelopes_out   {s.envelopes_out}",
            f"appended        {self.appended}",
            f"archived        {self.archived}",
            f"indexed         {self.indexed}",
            f"reconciles      {'yes' if s.reconciles() else 'NO'}",
        ]
        if self.snapshot:
            lines.append(f"snapshot        {self.snapshot}")
        return "\n".join(lines)


class _ConsumerThread(threading.Thread):
    """Poll-handle-commit loop that exits once stop is set and lag is zero."""

    def __init__(
        self,
        log: MessageLog,
        group_id: str,
        topic: str,
        handle: Callable[[bytes], None],
        stop: threading.Event,
        max_records: int = 1024,
        idle_s: float = 0.01,
    ):
        super().__init__(name=f"consumer-{group_id}", daemon=True)
        self.log = log
        self.group_id = group_id
        self.topic = topic
        self.handle = handle
        self.stop_event = stop
        self.max_records = max_records
        self.idle_s = idle_s
        self.handled = 0
        self.error: Optional[BaseException] = None

    def run(self) -> None:
        try:
            group = self.log.group(self.group_id)
            while True:
                batch = self.log.poll(group, self.topic, self.max_records)
                if batch:
                    for _, payload in batch:
                        self.handle(payload)
                    group.commit([pos for pos, _ in batch])
                    self.handled += len(batch)
                    continue
                if self.stop_event.is_set() and self.log.lag(group, self.topic) == 0:
                    return
                time.sleep(self.idle_s)
        except BaseException as exc:  # surfaced by run_ingest after join
            self.error = exc


def run_ingest(
    log: MessageLog,
    archive: Archive,
    index: InvertedIndex,
    topic: str,
    raw_records: Iterable[RawRecord],
    stats: Optional[IngestStats] = None,
    dedup_capacity: int = 100_000,
    snapshot_dir: Optional[str | Path] = None,
) -> IngestSummary:
    """Consume a source to exhaustion and return reconciled counters.

    Input topic fan-out: an archiver group appends every envelope to the
    archive and an indexer group makes it searchable. Both run concurrently
    with the producer and are drained before return.
    """
    stats = stats if stats is not None else IngestStats()
    window = DedupState(capacity=dedup_capacity)
    stop = threading.Event()

    def handle_archive(payload: bytes) -> None:
        archive.append(RecordEnvelope.from_json(payload))

    def handle_index(payload: bytes) -> None:
        index.index_document(RecordEnvelope.from_json(payload))

    archiver = _ConsumerThread(log, ARCHIVE_GROUP, topic, handle_archive, stop)
    indexer = _ConsumerThread(log, INDEX_GROUP, topic, handle_index, stop)
    archiver.start()
    indexer.start()

    appended = 0
    try:
        for raw in raw_records:
            try:
                env = extract(raw)
            except ExtractionError:
                stats.parse_skipped += 1
                continue
            except EmptyTextError:
                stats.empty_dropped += 1
                continue
            filtered = noise_filter(env, stats)
            if filtered is None:
                continue
            if not dedup(filtered, window):
                stats.dup_dropped += 1
                continue
            log.append(topic, filtered.doc_id, filtered.to_bytes(), filtered.event_time)
            stats.envelopes_out += 1
            appended += 1
    finally:
        log.flush(topic)
        stop.set()
        archiver.join(timeout=60.0)
        indexer.join(timeout=60.0)

    for thread in (archiver, indexer):
        if thread.error is not None:
            raise thread.error
        if thread.is_alive():
            raise RuntimeError(f"{thread.name} failed to drain {topic}")

    archive.flush()
    snapshot_path: Optional[str] = None
    if snapshot_dir is not None:
        snapshot_path = str(index.snapshot(snapshot_dir))
    return IngestSummary(
        stats=stats,
        appended=appended,
        archived=archiver.handled,
        indexed=indexer.handled,
        snapshot=snapshot_path,
    )


def start_labeled_indexer(
    log: MessageLog,
    index: InvertedIndex,
    topic: str,
    stop: threading.Event,
    group_id: str = LABELED_INDEX_GROUP,
) -> _ConsumerThread:
    """Background consumer that folds scored records into the index.

    Re-indexing a doc_id replaces the previous entry, so at-least-once
    redelivery of a batch is idempotent here.
    """

    def handle(payload: bytes) -> None:
        index.index_document(LabeledRecord.from_json(payload))

    thread = _ConsumerThread(log, group_id, topic, handle, stop)
    thread.start()
    return thread


def rebuild_index_from_archive(archive: Archive) -> InvertedIndex:
    """Recovery path: reconstruct the search index by scanning the archive."""
    index = InvertedIndex()
    for env in archive.scan():
        index.index_document(env)
    return index
