import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sentistream.lstm import LstmHyperparams, init_model
from sentistream.textprep import build_vocabulary, tokenize
from sentistream.types import RecordEnvelope

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture()
def tiny_corpus() -> list[RecordEnvelope]:
    texts = [
        ("d1", "good day at work", "positive"),
        ("d2", "bad day very sad", "negative"),
        ("d3", "great coffee good morning", "positive"),
        ("d4", "awful traffic hate it", "negative"),
        ("d5", "lovely sunny walk", "positive"),
        ("d6", "terrible broken phone", "negative"),
    ]
    return [
        RecordEnvelope(doc_id=d, event_time=1000 * (i + 1), text=t, label=lab)
        for i, (d, t, lab) in enumerate(texts)
    ]


@pytest.fixture()
def tiny_vocab(tiny_corpus):
    return build_vocabulary(
        (tok for rec in tiny_corpus for tok in tokenize(rec.text)),
        max_size=100,
        min_freq=1,
    )


@pytest.fixture()
def tiny_model(tiny_vocab):
    hyper = LstmHyperparams(
        vocab_size=tiny_vocab.size, embedding_dim=4, hidden_dim=3, seq_len=6, seed=7
    )
    return init_model(hyper, dtype=np.float32)
