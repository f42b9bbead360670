"""Core record types flowing through the pipeline, with canonical JSON codecs.

The JSON encoding is canonical (fixed key order, no whitespace, None fields
omitted) so that replays and archive round trips are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

POSITIVE = "positive"
NEGATIVE = "negative"
LABELS = (POSITIVE, NEGATIVE)


@dataclass(frozen=True)
class RecordEnvelope:
    """A timestamped, identified text document.

    label is present only on training data; event_time is epoch milliseconds.
    """

    doc_id: str
    event_time: int
    text: str
    author: Optional[str] = None
    label: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(self._fields(), ensure_ascii=False, separators=(",", ":"))

    def to_bytes(self) -> bytes:
        return self.to_json().encode("utf-8")

    def _fields(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "doc_id": self.doc_id,
            "event_time": self.event_time,
            "text": self.text,
        }
        if self.author is not None:
            out["author"] = self.author
        if self.label is not None:
            out["label"] = self.label
        return out

    @classmethod
    def from_json(cls, raw: str | bytes) -> "RecordEnvelope":
        obj = json.loads(raw)
        return cls(
            doc_id=obj["doc_id"],
            event_time=obj["event_time"],
            text=obj["text"],
            author=obj.get("author"),
            label=obj.get("label"),
        )


@dataclass(frozen=True)
class LabeledRecord:
    """A RecordEnvelope plus predicted sentiment.

    predicted_label is "positive" iff probability >= 0.5.
    """

    doc_id: str
    event_time: int
    text: str
    author: Optional[str]
    predicted_label: str
    probability: float
    scored_at: int
    batch_id: int

    def __post_init__(self) -> None:
        expected = POSITIVE if self.probability >= 0.5 else NEGATIVE
        if self.predicted_label != expected:
            raise ValueError(
                f"label {self.predicted_label!r} disagrees with probability {self.probability}"
            )

    def to_json(self) -> str:
        out: dict[str, Any] = {
            "doc_id": self.doc_id,
            "event_time": self.event_time,
            "text": self.text,
        }
        if self.author is not None:
            out["author"] = self.author
        out["predicted_label"] = self.predicted_label
        out["probability"] = self.probability
        out["scored_at"] = self.scored_at
        out["batch_id"] = self.batch_id
        return json.dumps(out, ensure_ascii=False, separators=(",", ":"))

    def to_bytes(self) -> bytes:
        return self.to_json().encode("utf-8")

    @classmethod
    def from_json(cls, raw: str | bytes) -> "LabeledRecord":
        obj = json.loads(raw)
        return cls(
            doc_id=obj["doc_id"],
            event_time=obj["event_time"],
            text=obj["text"],
            author=obj.get("author"),
            predicted_label=obj["predicted_label"],
            probability=obj["probability"],
            scored_at=obj["scored_at"],
            batch_id=obj["batch_id"],
        )

    def envelope(self) -> RecordEnvelope:
        return RecordEnvelope(
            doc_id=self.doc_id,
            event_time=self.event_time,
            text=self.text,
            author=self.author,
            label=self.predicted_label,
        )
