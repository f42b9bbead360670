"""Aggregation queries over the archive, labeled topics, and CSV datasets.

Two fixed queries power the decision-support reports: label counts
(dataset-composition table) and tumbling-window sentiment over time.
Reports export deterministically to CSV (RFC 4180) and pretty JSON,
optionally with a rendered figure alongside (see figures.py).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .archive import Archive
from .mqlog import MessageLog
from .types import NEGATIVE, POSITIVE, LabeledRecord, RecordEnvelope

# Sentiment140 CSV: polarity, id, date, query, user, text (latin-1, no header)
S140_POLARITY = {"0": NEGATIVE, "4": POSITIVE}


class QueryError(Exception):
    pass


@dataclass(frozen=True)
class LabelCountRow:
    category: str
    number: int
    percentage: float


@dataclass(frozen=True)
class LabelCountReport:
    rows: tuple[LabelCountRow, ...]
    total: int

    def count_for(self, category: str) -> int:
        for row in self.rows:
            if row.category == category:
                return row.number
        return 0


@dataclass(frozen=True)
class TimeSeriesPoint:
    window_start: int
    window_len: int
    positive_count: int
    negative_count: int
    mean_probability: float


def _report_from_counts(counts: dict[str, int]) -> LabelCountReport:
    total = sum(counts.values())
    order = [POSITIVE, NEGATIVE] + sorted(k for k in counts if k not in (POSITIVE, NEGATIVE))
    rows = tuple(
        LabelCountRow(
            category=cat.capitalize(),
            number=counts[cat],
            percentage=round(100.0 * counts[cat] / total, 1) if total else 0.0,
        )
        for cat in order
        if cat in counts
    )
    return LabelCountReport(rows=rows, total=total)


def count_labels_csv(path: str | Path) -> LabelCountReport:
    """Label counts of a Sentiment140-format CSV (polarity field 0/4)."""
    path = Path(path)
    if not path.is_file():
        raise QueryError(f"cannot read CSV source: {path}")
    counts: dict[str, int] = {}
    with path.open("r", encoding="latin-1", newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            label = S140_POLARITY.get(row[0].strip(), "other")
            counts[label] = counts.get(label, 0) + 1
    return _report_from_counts(counts)


def read_sentiment140_records(
    path: str | Path, limit: Optional[int] = None
) -> list[RecordEnvelope]:
    """Load labeled envelopes from a Sentiment140-format CSV.

    Rows whose polarity is neither 0 nor 4, or with an empty text field,
    are skipped. Row order is preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise QueryError(f"cannot read CSV source: {path}")
    out: list[RecordEnvelope] = []
    with path.open("r", encoding="latin-1", newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if limit is not None and len(out) >= limit:
                break
            if len(row) < 6:
                continue
            label = S140_POLARITY.get(row[0].strip())
            text = row[5]
            if label is None or not text.strip():
                continue
            out.append(
                RecordEnvelope(
                    doc_id=row[1].strip() or f"row{i}",
                    event_time=i,
                    text=text,
                    author=row[4].strip() or None,
                    label=label,
                )
            )
    return out


def count_labels_archive(
    archive: Archive, start: int = 0, end: Optional[int] = None
) -> LabelCountReport:
    """Label counts over archived envelopes in a time range."""
    counts: dict[str, int] = {}
    for env in archive.scan(start=start, end=end):
        label = env.label if env.label is not None else "unlabeled"
        counts[label] = counts.get(label, 0) + 1
    return _report_from_counts(counts)


def labeled_records_from_topic(log: MessageLog, topic: str) -> list[LabeledRecord]:
    """All labeled records of a topic, deduplicated by doc_id (last wins,
    so redelivered batches do not double-count)."""
    by_doc: dict[str, LabeledRecord] = {}
    for _, _, payload in log.read_topic(topic):
        try:
            rec = LabeledRecord.from_json(payload)
        except (ValueError, KeyError):
            continue
        by_doc[rec.doc_id] = rec
    return list(by_doc.values())


def count_labels_from_records(records: Iterable[LabeledRecord]) -> LabelCountReport:
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.predicted_label] = counts.get(rec.predicted_label, 0) + 1
    return _report_from_counts(counts)


def count_labels_topic(log: MessageLog, topic: str) -> LabelCountReport:
    return count_labels_from_records(labeled_records_from_topic(log, topic))


def sentiment_over_time(
    records: Iterable[LabeledRecord],
    window_len: int,
    start: int = 0,
    end: Optional[int] = None,
) -> list[TimeSeriesPoint]:
    """Tumbling windows aligned to `start`; records assigned by event_time;
    windows with zero records are omitted."""
    if window_len <= 0:
        raise ValueError("window_len must be > 0")
    if end is None:
        end = 2**63 - 1
    buckets: dict[int, list[LabeledRecord]] = {}
    for rec in records:
        if not (start <= rec.event_time <= end):
            continue
        buckets.setdefault((rec.event_time - start) // window_len, []).append(rec)
    points = []
    for idx in sorted(buckets):
        group = buckets[idx]
        points.append(
            TimeSeriesPoint(
                window_start=start + idx * window_len,
                window_len=window_len,
                positive_count=sum(1 for r in group if r.predicted_label == POSITIVE),
                negative_count=sum(1 for r in group if r.predicted_label == NEGATIVE),
                mean_probability=sum(r.probability for r in group) / len(group),
            )
        )
    return points


# -- export ----------------------------------------------------------------


def label_report_to_json(report: LabelCountReport) -> str:
    body = {
        "rows": [
            {"category": r.category, "number": r.number, "percentage": r.percentage}
            for r in report.rows
        ],
        "total": {"number": report.total, "percentage": 100.0 if report.total else 0.0},
    }
    return json.dumps(body, indent=2) + "\n"


def label_report_from_json(raw: str | bytes) -> LabelCountReport:
    body = json.loads(raw)
    rows = tuple(
        LabelCountRow(category=r["category"], number=r["number"], percentage=r["percentage"])
        for r in body["rows"]
    )
    return LabelCountReport(rows=rows, total=body["total"]["number"])


def label_report_to_csv(report: LabelCountReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)  # RFC 4180: CRLF line endings, minimal quoting
    writer.writerow(["category", "number", "percentage"])
    for row in report.rows:
        writer.writerow([row.category, row.number, row.percentage])
    writer.writerow(["Total", report.total, 100.0 if report.total else 0.0])
    return buf.getvalue()


def label_report_to_text(report: LabelCountReport) -> str:
    lines = [f"{'Categories':<14}{'Number':>10}  {'Percentage':>10}"]
    for row in report.rows:
        lines.append(f"{row.category:<14}{row.number:>10}  {row.percentage:>9.1f}%")
    lines.append(f"{'Total':<14}{report.total:>10}  {100.0 if report.total else 0.0:>9.1f}%")
    return "\n".join(lines)


def timeline_to_json(points: list[TimeSeriesPoint]) -> str:
    body = [
        {
            "window_start": p.window_start,
            "window_len": p.window_len,
            "positive_count": p.positive_count,
            "negative_count": p.negative_count,
            "mean_probability": p.mean_probability,
        }
        for p in points
    ]
    return json.dumps(body, indent=2) + "\n"


def timeline_from_json(raw: str | bytes) -> list[TimeSeriesPoint]:
    return [TimeSeriesPoint(**row) for row in json.loads(raw)]


def timeline_to_csv(points: list[TimeSeriesPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["window_start", "window_len", "positive_count", "negative_count", "mean_probability"]
    )
    for p in points:
        writer.writerow(
            [p.window_start, p.window_len, p.positive_count, p.negative_count, p.mean_probability]
        )
    return buf.getvalue()


def export_report(report, fmt: str, path: str | Path) -> Path:
    """Write a report (LabelCountReport or timeline list) as csv or json."""
    path = Path(path)
    if isinstance(report, LabelCountReport):
        encoders = {"csv": label_report_to_csv, "json": label_report_to_json}
    else:
        encoders = {"csv": timeline_to_csv, "json": timeline_to_json}
    if fmt not in encoders:
        raise QueryError(f"unknown report format: {fmt}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(encoders[fmt](report), encoding="utf-8", newline="")
    except OSError as exc:
        raise QueryError(f"cannot write report {path}: {exc}") from exc
    return path
