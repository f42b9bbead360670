"""Command line entry point.

One binary, eight subcommands covering the pipeline end to end:

    ingest    file/tcp source -> log, teed into archive + search index
    train     labeled CSV -> model.bin + vocab.json + model.meta.json
    evaluate  saved model vs a labeled CSV, accuracy table on stdout
    stream    micro-batch scoring loop, labeled topic feeds the index
    query     counts / timeline reports (text + csv + json + png)
    search    ranked full-text search over the index
    serve     read-only HTTP endpoint, optionally with the scoring loop
    topics    list log topics with partition counts and record totals

Exit codes: 0 ok, 2 source/config error, 3 data error, 4 model error,
5 internal error.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
import traceback
from pathlib import Path
from typing import Optional

from .analytics import (
    QueryError,
    count_labels_archive,
    count_labels_csv,
    count_labels_from_records,
    export_report,
    label_report_to_text,
    labeled_records_from_topic,
    read_sentiment140_records,
    sentiment_over_time,
)
from .archive import Archive
from .config import ConfigError, PipelineConfig, load_config
from .figures import render_label_counts, render_timeline
from .index import InvertedIndex, SnapshotError
from .ingest import (
    FULL_SPEED,
    IngestStats,
    SourceError,
    open_replay_source,
    open_tcp_source,
)
from .lstm import (
    LstmHyperparams,
    ModelLoadError,
    ModelShapeError,
    load_model,
    save_model,
)
from .mqlog import MessageLog, UnknownTopic
from .pipeline import rebuild_index_from_archive, run_ingest, start_labeled_indexer
from .server import QueryService, make_server, serve_in_thread
from .streamproc import (
    ConfigMismatchError,
    MicroBatchConfig,
    StreamProcessor,
    check_vocab_hash,
)
from .textprep import Vocabulary, build_vocabulary, tokenize
from .training import (
    TrainDataError,
    evaluate,
    stratified_split,
    stratified_take,
    train,
)
from .types import NEGATIVE, POSITIVE, LabeledRecord

EXIT_OK = 0
EXIT_SOURCE = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_INTERNAL = 5

# argparse dest names that map straight onto PipelineConfig fields
_OVERRIDE_FIELDS = (
    "data_dir", "input_topic", "output_topic", "partitions", "dedup_capacity",
    "max_vocab", "min_freq", "seq_len", "embedding_dim", "hidden_dim",
    "batch_size", "epochs", "learning_rate", "clip_norm", "seed",
    "interval_ms", "max_batch", "group_id", "host", "port",
)


def _model_paths(cfg: PipelineConfig) -> tuple[Path, Path, Path]:
    model_dir = Path(cfg.data_dir) / "model"
    return model_dir / "model.bin", model_dir / "vocab.json", model_dir / "model.meta.json"


def _load_model_bundle(cfg: PipelineConfig):
    model_path, vocab_path, meta_path = _model_paths(cfg)
    if not model_path.is_file() or not vocab_path.is_file():
        raise ModelLoadError(
            f"model files missing under {model_path.parent} (run `sentistream train` first)"
        )
    model = load_model(model_path)
    vocab = Vocabulary.load(vocab_path)
    check_vocab_hash(vocab, meta_path)
    if model.hyper.vocab_size != vocab.size:
        raise ConfigMismatchError(
            f"model expects vocab of {model.hyper.vocab_size}, file has {vocab.size}"
        )
    return model, vocab


def _load_query_index(cfg: PipelineConfig, log: Optional[MessageLog]) -> InvertedIndex:
    """Latest snapshot if present, else rebuild from the archive; labeled
    records are folded in afterwards so label filters reflect scoring."""
    snap = InvertedIndex.latest_snapshot(cfg.data_dir)
    if snap is not None:
        index = InvertedIndex.load_snapshot(snap)
    elif (Path(cfg.data_dir) / "archive").is_dir():
        index = rebuild_index_from_archive(Archive(cfg.data_dir))
    else:
        raise QueryError(
            f"no index snapshot or archive under {cfg.data_dir} (run ingest first)"
        )
    if log is not None:
        _fold_labeled(index, log, cfg.output_topic)
    return index


def _fold_labeled(index: InvertedIndex, log: MessageLog, topic: str) -> int:
    folded = 0
    try:
        stream = log.read_topic(topic)
    except UnknownTopic:
        return 0
    for _, _, payload in stream:
        try:
            index.index_document(LabeledRecord.from_json(payload))
            folded += 1
        except (ValueError, KeyError):
            continue
    return folded


def _install_stop_handler(stop: threading.Event) -> None:
    def handler(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)


# -- subcommands -------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.file is None and args.tcp_port is None:
        raise SourceError("one of --file or --tcp-port is required")
    stats = IngestStats()
    if args.file is not None:
        speedup = FULL_SPEED if args.full_speed else (args.speedup or FULL_SPEED)
        source = open_replay_source(args.file, speedup=speedup, stats=stats)
    else:
        source = open_tcp_source(
            args.tcp_port, host=cfg.host, stats=stats, accept_timeout=args.accept_timeout
        )
    log = MessageLog(cfg.data_dir)
    archive = Archive(cfg.data_dir)
    try:
        log.ensure_topic(cfg.input_topic, cfg.partitions)
        log.ensure_topic(cfg.output_topic, cfg.partitions)
        snap = InvertedIndex.latest_snapshot(cfg.data_dir)
        index = InvertedIndex.load_snapshot(snap) if snap else InvertedIndex()
        summary = run_ingest(
            log,
            archive,
            index,
            cfg.input_topic,
            source,
            stats=stats,
            dedup_capacity=cfg.dedup_capacity,
            snapshot_dir=cfg.data_dir,
        )
    finally:
        archive.close()
        log.close()
    print(summary.to_text())
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if not Path(args.csv).is_file():
        raise SourceError(f"cannot read training CSV: {args.csv}")
    records = read_sentiment140_records(args.csv)
    if args.max_rows is not None:
        records = stratified_take(records, args.max_rows)
    print(f"loaded {len(records)} labeled records from {args.csv}", flush=True)

    vocab = build_vocabulary(
        (tok for rec in records for tok in tokenize(rec.text)),
        max_size=cfg.max_vocab,
        min_freq=cfg.min_freq,
    )
    hyper = LstmHyperparams(
        vocab_size=vocab.size,
        embedding_dim=cfg.embedding_dim,
        hidden_dim=cfg.hidden_dim,
        seq_len=cfg.seq_len,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        clip_norm=cfg.clip_norm,
        seed=cfg.seed,
    )
    model, history = train(records, hyper, vocab, log=lambda msg: print(msg, flush=True))

    model_path, vocab_path, meta_path = _model_paths(cfg)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    vocab.save(vocab_path)

    _, valid = stratified_split(records, seed=hyper.seed)
    report = evaluate(model, valid, vocab) if valid else None
    meta = {
        "vocab_hash": vocab.content_hash(),
        "hyper": {
            "vocab_size": hyper.vocab_size,
            "embedding_dim": hyper.embedding_dim,
            "hidden_dim": hyper.hidden_dim,
            "seq_len": hyper.seq_len,
            "batch_size": hyper.batch_size,
            "epochs": hyper.epochs,
            "learning_rate": hyper.learning_rate,
            "clip_norm": hyper.clip_norm,
            "seed": hyper.seed,
        },
        "history": history.to_list(),
        "validation": report.to_dict() if report else None,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    print(f"model   {model_path}")
    print(f"vocab   {vocab_path} ({vocab.size} entries)")
    print(f"meta    {meta_path}")
    if report is not None:
        print()
        print(report.to_text())
    return EXIT_OK


def cmd_evaluate(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if not Path(args.csv).is_file():
        raise SourceError(f"cannot read evaluation CSV: {args.csv}")
    model, vocab = _load_model_bundle(cfg)
    records = read_sentiment140_records(args.csv)
    if args.max_rows is not None:
        records = stratified_take(records, args.max_rows)
    report = evaluate(model, records, vocab)
    print(report.to_text())
    return EXIT_OK


def cmd_stream(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    model, vocab = _load_model_bundle(cfg)
    log = MessageLog(cfg.data_dir)
    try:
        log.ensure_topic(cfg.input_topic, cfg.partitions)
        log.ensure_topic(cfg.output_topic, cfg.partitions)
        snap = InvertedIndex.latest_snapshot(cfg.data_dir)
        index = InvertedIndex.load_snapshot(snap) if snap else InvertedIndex()
        _fold_labeled(index, log, cfg.output_topic)

        stop = threading.Event()
        indexer = start_labeled_indexer(log, index, cfg.output_topic, stop)
        processor = StreamProcessor(
            log,
            model,
            vocab,
            MicroBatchConfig(
                input_topic=cfg.input_topic,
                output_topic=cfg.output_topic,
                group_id=cfg.group_id,
                interval_ms=cfg.interval_ms,
                max_batch=cfg.max_batch,
            ),
            data_dir=cfg.data_dir,
        )
        _install_stop_handler(stop)
        if args.drain:
            while True:
                metrics = processor.step()
                if metrics.lag == 0 or stop.is_set():
                    break
            summary = processor.summary()
        else:
            if args.duration is not None:
                timer = threading.Timer(args.duration, stop.set)
                timer.daemon = True
                timer.start()
            summary = processor.run_loop(stop)
        stop.set()
        indexer.join(timeout=60.0)
        if indexer.error is not None:
            raise indexer.error
        snapshot = index.snapshot(cfg.data_dir)
    finally:
        log.close()
    print(
        f"batches={summary.batches} records={summary.records} "
        f"p99_total_ms={summary.p99_total_ms:.1f} max_lag={summary.max_lag}"
    )
    print(f"metrics  {processor.metrics_path}")
    print(f"snapshot {snapshot}")
    return EXIT_OK


def cmd_query(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    reports_dir = Path(cfg.data_dir) / "reports"
    if args.kind == "counts":
        if args.csv is not None:
            report = count_labels_csv(args.csv)
        elif args.from_archive:
            report = count_labels_archive(
                Archive(cfg.data_dir), start=args.start, end=args.end
            )
        else:
            log = MessageLog(cfg.data_dir)
            try:
                report = count_labels_from_records(
                    labeled_records_from_topic(log, cfg.output_topic)
                )
            except UnknownTopic as exc:
                raise QueryError(f"no such topic: {exc}") from exc
            finally:
                log.close()
        print(label_report_to_text(report))
        json_path = export_report(report, "json", reports_dir / "counts.json")
        csv_path = export_report(report, "csv", reports_dir / "counts.csv")
        png_path = render_label_counts(report, reports_dir / "counts.png")
    else:
        log = MessageLog(cfg.data_dir)
        try:
            records = labeled_records_from_topic(log, cfg.output_topic)
        except UnknownTopic as exc:
            raise QueryError(f"no such topic: {exc}") from exc
        finally:
            log.close()
        points = sentiment_over_time(records, args.window, start=args.start, end=args.end)
        for p in points:
            print(
                f"{p.window_start:>15}  +{p.positive_count:<6} -{p.negative_count:<6} "
                f"mean_p={p.mean_probability:.3f}"
            )
        if not points:
            print("(no records in range)")
        json_path = export_report(points, "json", reports_dir / "timeline.json")
        csv_path = export_report(points, "csv", reports_dir / "timeline.csv")
        png_path = render_timeline(points, reports_dir / "timeline.png")
    print(f"\nwrote {json_path}\nwrote {csv_path}\nwrote {png_path}")
    return EXIT_OK


def cmd_search(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    log = MessageLog(cfg.data_dir)
    try:
        index = _load_query_index(cfg, log)
    finally:
        log.close()
    hits = index.search(args.terms, k=args.k, label=args.label)
    if not hits:
        print("(no hits)")
        return EXIT_OK
    for hit in hits:
        print(f"{hit.score:10.4f}  {hit.doc_id}  [{hit.label or 'unlabeled'}]  {hit.snippet}")
    return EXIT_OK


def cmd_serve(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    log = MessageLog(cfg.data_dir)
    try:
        log.ensure_topic(cfg.input_topic, cfg.partitions)
        log.ensure_topic(cfg.output_topic, cfg.partitions)
        index = _load_query_index(cfg, log)
        service = QueryService(
            index, lambda: labeled_records_from_topic(log, cfg.output_topic)
        )
        server = make_server(cfg.host, cfg.port, service)

        stop = threading.Event()
        threads: list[threading.Thread] = []
        if args.with_stream:
            model, vocab = _load_model_bundle(cfg)
            indexer = start_labeled_indexer(log, index, cfg.output_topic, stop)
            threads.append(indexer)
            processor = StreamProcessor(
                log,
                model,
                vocab,
                MicroBatchConfig(
                    input_topic=cfg.input_topic,
                    output_topic=cfg.output_topic,
                    group_id=cfg.group_id,
                    interval_ms=cfg.interval_ms,
                    max_batch=cfg.max_batch,
                ),
                data_dir=cfg.data_dir,
            )
            worker = threading.Thread(
                target=processor.run_loop, args=(stop,), name="streamproc", daemon=True
            )
            worker.start()
            threads.append(worker)

        _install_stop_handler(stop)
        serve_in_thread(server)
        host, port = server.server_address[:2]
        print(f"serving on http://{host}:{port} (ctrl-c to stop)", flush=True)
        try:
            while not stop.wait(0.2):
                pass
        finally:
            server.shutdown()
            server.server_close()
            for t in threads:
                t.join(timeout=60.0)
            if args.with_stream:
                index.snapshot(cfg.data_dir)
    finally:
        log.close()
    return EXIT_OK


def cmd_topics(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    log = MessageLog(cfg.data_dir)
    try:
        topics = log.topics()
        if not topics:
            print("(no topics)")
            return EXIT_OK
        for name, partitions in topics.items():
            total = sum(log.high_watermark(name, p) for p in range(partitions))
            print(f"{name:<24} partitions={partitions}  records={total}")
    finally:
        log.close()
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="TOML", help="config file path")
    common.add_argument("--data-dir", dest="data_dir", help="pipeline state directory")

    parser = argparse.ArgumentParser(
        prog="sentistream",
        description="streaming sentiment analytics pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="feed a source into the pipeline")
    p.add_argument("--file", help="JSON-lines file to replay")
    p.add_argument("--tcp-port", type=int, help="accept one TCP connection of JSON lines")
    p.add_argument("--speedup", type=float, help="replay speed multiplier")
    p.add_argument("--full-speed", action="store_true", help="replay without pacing")
    p.add_argument("--accept-timeout", type=float, help="seconds to wait for a TCP peer")
    p.add_argument("--input-topic", dest="input_topic")
    p.add_argument("--partitions", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train the sentiment model")
    p.add_argument("--csv", required=True, help="labeled CSV (polarity,id,date,flag,user,text)")
    p.add_argument("--max-rows", type=int, help="stratified subsample size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-vocab", dest="max_vocab", type=int)
    p.add_argument("--min-freq", dest="min_freq", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a labeled CSV with the saved model")
    p.add_argument("--csv", required=True)
    p.add_argument("--max-rows", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stream", parents=[common], help="run the micro-batch scoring loop")
    p.add_argument("--drain", action="store_true", help="exit once the input topic is scored")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.add_argument("--interval-ms", dest="interval_ms", type=int)
    p.add_argument("--max-batch", dest="max_batch", type=int)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("query", parents=[common], help="aggregation reports")
    p.add_argument("kind", choices=["counts", "timeline"])
    p.add_argument("--csv", help="count a labeled CSV instead of the scored topic")
    p.add_argument("--from-archive", action="store_true",
                   help="count archived envelopes by their source label")
    p.add_argument("--window", type=int, default=60_000, help="timeline window (ms)")
    p.add_argument("--start", type=int, default=0, help="range start (epoch ms)")
    p.add_argument("--end", type=int, help="range end (epoch ms, exclusive)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("search", parents=[common], help="ranked full-text search")
    p.add_argument("terms")
    p.add_argument("--label", choices=[POSITIVE, NEGATIVE])
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("serve", parents=[common], help="read-only HTTP query endpoint")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--with-stream", action="store_true",
                   help="also run the scoring loop in this process")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("topics", parents=[common], help="list log topics")
    p.set_defaults(func=cmd_topics)
    return parser


def _collect_overrides(args: argparse.Namespace) -> dict:
    return {
        name: getattr(args, name)
        for name in _OVERRIDE_FIELDS
        if getattr(args, name, None) is not None
    }


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, **_collect_overrides(args))
        return args.func(cfg, args)
    except (SourceError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOURCE
    except (TrainDataError, QueryError, SnapshotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelLoadError, ModelShapeError, ConfigMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
