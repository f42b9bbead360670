"""Deterministic synthetic tweet generators.

The vocabulary is split into sentiment-bearing and neutral words. Generated
tweets carry a noisy but learnable signal: most sentiment slots draw from
the label's own lexicon, a fraction are contaminated by the opposite one,
some are negated opposite-class words, and a fraction of labels are flipped
outright. The same seed always yields the same bytes.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .types import NEGATIVE, POSITIVE, RecordEnvelope

POSITIVE_WORDS = (
    "love", "great", "happy", "awesome", "amazing", "win", "best", "fun",
    "beautiful", "excited", "perfect", "sweet", "glad", "enjoy", "smile",
    "brilliant", "fantastic", "lucky", "thanks", "wonderful", "cool",
    "delicious", "proud", "yay", "nice", "favorite", "laugh", "sunny",
    "relaxing", "winning",
)
NEGATIVE_WORDS = (
    "hate", "awful", "sad", "terrible", "lose", "worst", "angry", "sick",
    "broken", "annoying", "tired", "ugly", "fail", "cry", "pain", "horrible",
    "miserable", "unlucky", "boring", "gross", "upset", "lonely", "stupid",
    "ugh", "nasty", "dreadful", "sore", "rainy", "stressful", "losing",
)
NEUTRAL_WORDS = (
    "today", "work", "coffee", "movie", "school", "morning", "night", "bus",
    "phone", "game", "music", "weekend", "dinner", "lunch", "home", "book",
    "street", "city", "weather", "train", "meeting", "class", "shop",
    "garden", "kitchen", "office", "river", "park", "radio", "show",
    "ticket", "road", "window", "table", "letter", "picture", "song",
    "story", "friend", "family", "dog", "cat", "tea", "bread", "shirt",
    "clock", "door", "light", "paper", "chair",
)
_USERS = tuple(f"user{i}" for i in range(40))
_POS_EMOTICONS = (":)", ":-)", ":D")
_NEG_EMOTICONS = (":(", ":-(")
_NEGATORS = ("not", "never")

LABEL_FLIP_RATE = 0.08
CONTAMINATION_RATE = 0.20
NEGATION_RATE = 0.15


def synth_text(rng: np.random.Generator, label: str) -> str:
    """One tweet's text for the given true label."""
    own = POSITIVE_WORDS if label == POSITIVE else NEGATIVE_WORDS
    other = NEGATIVE_WORDS if label == POSITIVE else POSITIVE_WORDS
    words: list[str] = []
    if rng.random() < 0.25:
        words.append("@" + _USERS[rng.integers(len(_USERS))])
    n_neutral = int(rng.integers(3, 9))
    n_sentiment = int(rng.integers(2, 5))
    for _ in range(n_neutral):
        words.append(NEUTRAL_WORDS[rng.integers(len(NEUTRAL_WORDS))])
    for _ in range(n_sentiment):
        roll = rng.random()
        if roll < NEGATION_RATE:
            # negated opposite-class word reads as the own class
            words.append(_NEGATORS[rng.integers(len(_NEGATORS))])
            words.append(other[rng.integers(len(other))])
        elif roll < NEGATION_RATE + CONTAMINATION_RATE:
            words.append(other[rng.integers(len(other))])
        else:
            words.append(own[rng.integers(len(own))])
    perm = rng.permutation(len(words))
    words = [words[i] for i in perm]
    if rng.random() < 0.10:
        words.append("http://t.co/" + format(int(rng.integers(1 << 24)), "x"))
    if rng.random() < 0.30:
        emo = _POS_EMOTICONS if label == POSITIVE else _NEG_EMOTICONS
        words.append(emo[rng.integers(len(emo))])
    return " ".join(words)


def synth_labeled_records(
    n: int,
    seed: int,
    start_time: int = 1_240_000_000_000,
    gap_ms: int = 1000,
    flip_rate: float = LABEL_FLIP_RATE,
) -> list[RecordEnvelope]:
    """n labeled envelopes, classes interleaved so any prefix stays balanced.

    flip_rate of the labels are flipped after text generation, which caps
    reachable accuracy below 1.0 and keeps the classes symmetric.
    """
    rng = np.random.default_rng(seed)
    out: list[RecordEnvelope] = []
    for i in range(n):
        true_label = POSITIVE if i % 2 == 0 else NEGATIVE
        text = synth_text(rng, true_label)
        label = true_label
        if rng.random() < flip_rate:
            label = NEGATIVE if true_label == POSITIVE else POSITIVE
        out.append(
            RecordEnvelope(
                doc_id=f"synth{i}",
                event_time=start_time + i * gap_ms,
                text=text,
                author=_USERS[int(rng.integers(len(_USERS)))],
                label=label,
            )
        )
    return out


_WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
_MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
           "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")


def _s140_date(epoch_ms: int) -> str:
    dt = datetime.fromtimestamp(epoch_ms / 1000.0, tz=timezone.utc)
    return (
        f"{_WEEKDAYS[dt.weekday()]} {_MONTHS[dt.month - 1]} {dt.day:02d} "
        f"{dt:%H:%M:%S} UTC {dt.year}"
    )


def write_sentiment140_csv(
    path: str | Path,
    positive: int,
    negative: int,
    seed: int,
    manifest_path: Optional[str | Path] = None,
) -> dict:
    """Six-column latin-1 CSV in the Sentiment140 layout:
    polarity (0 negative / 4 positive), id, date, flag, user, text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = [POSITIVE] * positive + [NEGATIVE] * negative
    order = rng.permutation(len(labels))
    base_time = 1_240_000_000_000
    with path.open("w", encoding="latin-1", newline="") as fh:
        writer = csv.writer(fh)
        for row_idx, label_idx in enumerate(order):
            label = labels[label_idx]
            polarity = "4" if label == POSITIVE else "0"
            text = synth_text(rng, label)
            epoch = base_time + row_idx * 1000
            writer.writerow([
                polarity,
                str(2_000_000_000 + row_idx),
                _s140_date(epoch),
                "NO_QUERY",
                _USERS[int(rng.integers(len(_USERS)))],
                text,
            ])
    manifest = {
        "rows": positive + negative,
        "positive": positive,
        "negative": negative,
        "seed": seed,
        "format": "sentiment140-6col",
        "encoding": "latin-1",
    }
    if manifest_path is not None:
        Path(manifest_path).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return manifest


def write_stream_jsonl(
    path: str | Path,
    records: int,
    seed: int,
    start_time: int = 1_700_000_000_000,
    gap_ms: int = 1,
    dup_count: int = 0,
    malformed_count: int = 0,
    tag_docs: bool = False,
) -> dict:
    """JSON-lines ingest source with a known anomaly breakdown.

    dup_count lines repeat an earlier line's text verbatim (dedup drops
    them); malformed_count lines are not valid JSON (parse skip). With
    tag_docs each clean record carries a unique token, so each one is
    retrievable by a single-term search. Returns the expected counters.
    """
    if records < 1:
        raise ValueError("records must be >= 1")
    clean = records - dup_count - malformed_count
    if clean < 1 or dup_count < 0 or malformed_count < 0:
        raise ValueError("anomaly counts exceed total records")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    # each line is one of: clean record, duplicate of an earlier clean text,
    # malformed junk; anomalies are spread uniformly after a clean warmup
    kinds = ["clean"] * clean + ["dup"] * dup_count + ["bad"] * malformed_count
    tail = kinds[1:]
    order = rng.permutation(len(tail))
    kinds = [kinds[0]] + [tail[i] for i in order]

    seen_texts: list[str] = []
    texts_used: set[str] = set()
    doc_ids: list[str] = []
    next_id = 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        for line_idx, kind in enumerate(kinds):
            ts = start_time + line_idx * gap_ms
            if kind == "bad":
                fh.write('{"id": "broken%d", "text": unquoted}\n' % line_idx)
                continue
            if kind == "dup" and seen_texts:
                text = seen_texts[int(rng.integers(len(seen_texts)))]
            else:
                label = POSITIVE if next_id % 2 == 0 else NEGATIVE
                text = synth_text(rng, label)
                if tag_docs:
                    text = f"{text} tag{next_id}x"
                while text in texts_used:  # accidental dup would skew counters
                    text = synth_text(rng, label)
                texts_used.add(text)
                seen_texts.append(text)
            doc_id = f"doc{line_idx}"
            if kind == "clean":
                doc_ids.append(doc_id)
                next_id += 1
            obj = {
                "id": doc_id,
                "timestamp": ts,
                "user": _USERS[int(rng.integers(len(_USERS)))],
                "text": text,
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    return {
        "lines": records,
        "clean": clean,
        "dup": dup_count,
        "malformed": malformed_count,
        "seed": seed,
        "tagged": tag_docs,
        "doc_ids": doc_ids,
    }
