"""Multilevel streaming text analytics engine.

Single-process pipeline: replayable ingestion with dedup, an embedded
partitioned message log, a schema-free archive, a BM25 inverted index,
a from-scratch LSTM sentiment classifier, micro-batch stream scoring,
and aggregation reports with rendered figures.
"""

__version__ = "0.1.0"
