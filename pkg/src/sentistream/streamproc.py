"""Micro-batch stream processor: poll, score, emit, commit on a timer.

Every interval the loop polls up to max_batch records from the input topic,
scores each with the loaded model, appends LabeledRecords to the output
topic, and commits input offsets only after the output append is flushed
(at-least-once end to end; downstream consumers dedup by doc_id).

Per-batch metrics are appended as JSON lines to
<data_dir>/metrics/streamproc.jsonl.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .lstm import LstmModel, forward
from .mqlog import MessageLog
from .textprep import Vocabulary, encode, tokenize
from .types import NEGATIVE, POSITIVE, LabeledRecord, RecordEnvelope

BACKOFF_BASE_S = 0.1
BACKOFF_CAP_S = 5.0


class ConfigMismatchError(Exception):
    """Model/vocabulary pairing is wrong; refused at startup, never mid-stream."""


@dataclass
class MicroBatchConfig:
    input_topic: str
    output_topic: str
    group_id: str = "scorer"
    interval_ms: int = 1000
    max_batch: int = 4096

    def __post_init__(self) -> None:
        if self.interval_ms < 10:
            raise ValueError("interval_ms must be >= 10")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


@dataclass(frozen=True)
class BatchMetrics:
    batch_id: int
    records: int
    poll_ms: float
    score_ms: float
    emit_ms: float
    total_ms: float
    lag: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "batch_id": self.batch_id,
                "records": self.records,
                "poll_ms": self.poll_ms,
                "score_ms": self.score_ms,
                "emit_ms": self.emit_ms,
                "total_ms": self.total_ms,
                "lag": self.lag,
            }
        )


@dataclass(frozen=True)
class MetricsSummary:
    batches: int
    records: int
    p99_total_ms: float
    max_lag: int


def check_vocab_hash(vocab: Vocabulary, meta_path: str | Path) -> None:
    """Fail fast if the configured vocabulary is not the one the model saw."""
    meta_path = Path(meta_path)
    if not meta_path.exists():
        raise ConfigMismatchError(f"model metadata missing: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    expected = meta.get("vocab_hash")
    actual = vocab.content_hash()
    if expected != actual:
        raise ConfigMismatchError(
            f"vocabulary hash mismatch: model trained with {expected}, configured {actual}"
        )


def score_batch(
    model: LstmModel,
    vocab: Vocabulary,
    batch: Sequence[RecordEnvelope],
    batch_id: int = 0,
    scored_at: Optional[int] = None,
) -> list[LabeledRecord]:
    """One LabeledRecord per input, order preserved.

    Scoring is tokenize -> encode -> forward per record, so the probability
    is exactly what a direct forward() call yields.
    """
    now = scored_at if scored_at is not None else int(time.time() * 1000)
    out: list[LabeledRecord] = []
    for env in batch:
        seq = encode(tokenize(env.text), vocab, model.hyper.seq_len)
        p, _ = forward(model, seq)
        out.append(
            LabeledRecord(
                doc_id=env.doc_id,
                event_time=env.event_time,
                text=env.text,
                author=env.author,
                predicted_label=POSITIVE if p >= 0.5 else NEGATIVE,
                probability=p,
                scored_at=now,
                batch_id=batch_id,
            )
        )
    return out


class StreamProcessor:
    """Owns one consumer group on the input topic; one loop per instance."""

    def __init__(
        self,
        log: MessageLog,
        model: LstmModel,
        vocab: Vocabulary,
        config: MicroBatchConfig,
        data_dir: str | Path,
        post_emit_hook: Optional[Callable[[int], None]] = None,
    ):
        self.log = log
        self.model = model
        self.vocab = vocab
        self.config = config
        self.metrics_path = Path(data_dir) / "metrics" / "streamproc.jsonl"
        self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
        self.group = log.group(config.group_id)
        self.next_batch_id = self._recover_batch_id()
        self.batches_run = 0
        self.records_scored = 0
        self._totals: list[float] = []
        self._max_lag = 0
        # fault-injection seam: raised exceptions simulate a crash between
        # output emit and input commit
        self._post_emit_hook = post_emit_hook

    def _recover_batch_id(self) -> int:
        if not self.metrics_path.exists():
            return 0
        last = -1
        with self.metrics_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    try:
                        last = max(last, json.loads(line)["batch_id"])
                    except (ValueError, KeyError):
                        continue
        return last + 1

    def _append_metrics(self, metrics: BatchMetrics) -> None:
        with self.metrics_path.open("a", encoding="utf-8") as fh:
            fh.write(metrics.to_json() + "\n")

    def step(self) -> BatchMetrics:
        """Run one micro-batch: poll -> score -> emit -> commit."""
        cfg = self.config
        batch_id = self.next_batch_id
        t0 = time.perf_counter()
        polled = self.log.poll(self.group, cfg.input_topic, cfg.max_batch)
        t1 = time.perf_counter()
        envelopes = [RecordEnvelope.from_json(payload) for _, payload in polled]
        labeled = score_batch(self.model, self.vocab, envelopes, batch_id=batch_id)
        t2 = time.perf_counter()
        if labeled:
            for rec in labeled:
                self.log.append(
                    cfg.output_topic, rec.doc_id, rec.to_bytes(), event_time=rec.event_time
                )
            self.log.flush(cfg.output_topic)
            if self._post_emit_hook is not None:
                self._post_emit_hook(batch_id)
            self.group.commit([pos for pos, _ in polled])
        t3 = time.perf_counter()

        lag = self.log.lag(self.group, cfg.input_topic)
        metrics = BatchMetrics(
            batch_id=batch_id,
            records=len(labeled),
            poll_ms=(t1 - t0) * 1000.0,
            score_ms=(t2 - t1) * 1000.0,
            emit_ms=(t3 - t2) * 1000.0,
            total_ms=(t3 - t0) * 1000.0,
            lag=lag,
        )
        self._append_metrics(metrics)
        self.next_batch_id = batch_id + 1
        self.batches_run += 1
        self.records_scored += len(labeled)
        self._totals.append(metrics.total_ms)
        self._max_lag = max(self._max_lag, lag)
        return metrics

    def _step_with_retry(self, stop: threading.Event) -> Optional[BatchMetrics]:
        backoff = BACKOFF_BASE_S
        while True:
            try:
                return self.step()
            except OSError:
                # transient log IO: retry with exponential backoff, batch
                # stays uncommitted until a round succeeds
                if stop.wait(backoff):
                    return None
                backoff = min(backoff * 2.0, BACKOFF_CAP_S)

    def run_loop(self, stop: threading.Event) -> MetricsSummary:
        """Poll on the configured interval until stop is set; the in-flight
        batch always completes before exit."""
        interval_s = self.config.interval_ms / 1000.0
        while True:
            started = time.perf_counter()
            self._step_with_retry(stop)
            if stop.is_set():
                break
            elapsed = time.perf_counter() - started
            stop.wait(max(0.0, interval_s - elapsed))
            if stop.is_set():
                # finish in-flight data, then exit
                self._step_with_retry(stop)
                break
        return self.summary()

    def summary(self) -> MetricsSummary:
        totals = sorted(self._totals)
        p99 = totals[min(len(totals) - 1, int(0.99 * len(totals)))] if totals else 0.0
        return MetricsSummary(
            batches=self.batches_run,
            records=self.records_scored,
            p99_total_ms=p99,
            max_lag=self._max_lag,
        )
