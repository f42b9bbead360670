"""Tokenization, vocabulary construction, and fixed-length integer encoding.

Shared by the inverted index and the sentiment model so both sides see the
same terms. Rules: lowercase words, URLs -> "<url>", @mentions -> "<user>",
digits-only tokens -> "<num>", punctuation dropped except an exact emoticon
set kept as single tokens.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .hashing import fnv1a64_hex

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"
URL_TOKEN = "<url>"
USER_TOKEN = "<user>"
NUM_TOKEN = "<num>"

# Emoticons survive tokenization verbatim; matched case-sensitively against
# the original text (before lowercasing), longest alternatives first.
EMOTICONS = (":-)", ":-(", ":)", ":(", ":D", ";)")

_TOKEN_RE = re.compile(
    r"(?P<url>https?://\S+|www\.\S+)"
    r"|(?P<user>@\w+)"
    r"|(?P<emo>" + "|".join(re.escape(e) for e in EMOTICONS) + r")"
    r"|(?P<word>[^\W_]+)",
    re.UNICODE,
)


def tokenize(text: str) -> list[str]:
    """Split text into normalized tokens; empty text yields []."""
    tokens: list[str] = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "url":
            tokens.append(URL_TOKEN)
        elif kind == "user":
            tokens.append(USER_TOKEN)
        elif kind == "emo":
            tokens.append(m.group())
        else:
            word = m.group().lower()
            tokens.append(NUM_TOKEN if word.isdigit() else word)
    return tokens


@dataclass(frozen=True)
class EncodedSequence:
    """Fixed-length id sequence; positions >= true_length hold PAD_ID."""

    ids: tuple[int, ...]
    true_length: int


class Vocabulary:
    """Dense token->id map with reserved ids 0 (pad) and 1 (oov)."""

    def __init__(self, tokens: list[str], max_size: int, min_freq: int):
        self.max_size = max_size
        self.min_freq = min_freq
        self.id_to_token: list[str] = [PAD_TOKEN, OOV_TOKEN] + list(tokens)
        self.token_to_id: dict[str, int] = {
            tok: i for i, tok in enumerate(self.id_to_token[2:], start=2)
        }
        if len(self.token_to_id) != len(self.id_to_token) - 2:
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def token_for(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def content_hash(self) -> str:
        """Stable fingerprint binding a model to the vocabulary it was trained with."""
        body = f"{self.max_size}\x1f{self.min_freq}\x1f" + "\x1f".join(self.id_to_token[2:])
        return fnv1a64_hex(body)

    def save(self, path: str | Path) -> None:
        obj = {
            "max_size": self.max_size,
            "min_freq": self.min_freq,
            "tokens": self.id_to_token[2:],
        }
        Path(path).write_text(
            json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["tokens"], max_size=obj["max_size"], min_freq=obj["min_freq"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.id_to_token == other.id_to_token
            and self.max_size == other.max_size
            and self.min_freq == other.min_freq
        )


def build_vocabulary(
    corpus: Iterable[str], max_size: int = 20_000, min_freq: int = 2
) -> Vocabulary:
    """Rank tokens by (frequency desc, token asc), keep ids 2..max_size-1.

    corpus is a stream of tokens, not documents. Empty corpus gives a
    pad+oov-only vocabulary.
    """
    if max_size < 3:
        raise ValueError("max_size must be >= 3 (pad + oov + at least one token)")
    counts = Counter(corpus)
    ranked = sorted(
        (tok for tok, n in counts.items() if n >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(ranked[: max_size - 2], max_size=max_size, min_freq=min_freq)


def encode(tokens: list[str], vocab: Vocabulary, length: int) -> EncodedSequence:
    """Map tokens to ids, truncating to the first `length`, right-padding with pad."""
    if length < 1:
        raise ValueError("length must be >= 1")
    kept = tokens[:length]
    ids = [vocab.id_for(tok) for tok in kept]
    ids.extend([PAD_ID] * (length - len(ids)))
    return EncodedSequence(ids=tuple(ids), true_length=len(kept))
