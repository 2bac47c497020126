"""Command-line surface: index build, querying, feedback, benchmarks, serving.

Commands print line-delimited JSON on stdout (diagnostics go to stderr).
``query`` and ``feedback`` can target a running service with --server;
the heavy offline commands always run in-process. Exit codes: 0 success,
1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from .benchmark import (
    SimulationConfig,
    default_variants,
    parse_variant,
    run_iterative_benchmark,
    write_manifest,
    write_metrics_csv,
)
from .corpus import dump_corpus, load_corpus
from .datagen import synthetic_corpus
from .engine import Engine, EngineConfig, event_to_record, read_events_jsonl, result_records
from .indicators import FeedbackEvent
from .scenarios import run_scenarios, write_scenario_csv, write_scenario_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with the validation code."""

    def error(self, message: str):  # noqa: D401 - argparse hook
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_VALIDATION)


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _load_config(path: str) -> EngineConfig:
    if not Path(path).exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return EngineConfig.from_file(path)


class _IndexLock:
    """Rejects concurrent index builds against the same directory."""

    def __init__(self, index_dir: Path):
        index_dir.mkdir(parents=True, exist_ok=True)
        self.path = index_dir / ".build.lock"
        self.fd: int | None = None

    def __enter__(self) -> "_IndexLock":
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OSError(
                f"another index build holds {self.path}; remove it if stale"
            ) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc_info) -> None:
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)


def _apply_overrides(config: EngineConfig, args: argparse.Namespace) -> EngineConfig:
    k = getattr(args, "k", None)
    threshold = getattr(args, "threshold", None)
    if k is not None:
        if k < 1:
            raise _UsageError("--k must be >= 1")
        config.ranker.top_k = k
    if threshold is not None:
        if not 0.0 < threshold <= 1.0:
            raise _UsageError("--threshold must be in (0, 1]")
        config.ranker.threshold = threshold
    return config


def cmd_index(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if not Path(config.corpus_path).exists():
        raise FileNotFoundError(f"corpus file not found: {config.corpus_path}")
    with _IndexLock(Path(config.index_dir)):
        engine = Engine(config)
        stats = engine.build()
    _emit(
        {
            "indexed": True,
            "documents": stats.documents,
            "chunks": stats.chunks,
            "synthetic_indicators": stats.synthetic_indicators,
            "feedback_indicators": stats.feedback_indicators,
            "evicted": stats.evicted,
            "index_dir": config.index_dir,
        }
    )
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    if args.k is not None and args.k < 1:
        raise _UsageError("--k must be >= 1")
    if args.server:
        import httpx

        response = httpx.post(
            args.server.rstrip("/") + "/query",
            json={
                "query": args.query,
                "intent": args.intent,
                "k": args.k,
                "threshold": args.threshold,
            },
            timeout=60.0,
        )
        if response.status_code != 200:
            raise _UsageError(f"server error {response.status_code}: {response.text}")
        payload = response.json()
        for record in payload["results"]:
            _emit(record)
        _emit({"rounds": payload["rounds"], "count": len(payload["results"])})
        return EXIT_OK

    config = _apply_overrides(_load_config(args.config), args)
    engine = Engine(config)
    engine.load()
    result = engine.query(args.query, args.intent)
    for record in result_records(result):
        _emit(record)
    _emit({"rounds": result.rounds, "count": len(result.chunks)})
    return EXIT_OK


def cmd_feedback(args: argparse.Namespace) -> int:
    docs = [d for d in (args.docs or "").split(",") if d.strip()]
    if not docs:
        raise _UsageError("--docs must list at least one document id")
    if args.server:
        import httpx

        response = httpx.post(
            args.server.rstrip("/") + "/feedback",
            json={
                "query": args.query,
                "stars": args.stars,
                "docs": docs,
                "intent": args.intent,
            },
            timeout=60.0,
        )
        if response.status_code != 200:
            raise _UsageError(f"server error {response.status_code}: {response.text}")
        _emit(response.json())
        return EXIT_OK

    config = _load_config(args.config)
    engine = Engine(config)
    event = FeedbackEvent(
        query=args.query,
        star_rating=args.stars,
        referenced_docs=tuple(docs),
        timestamp=datetime.now(timezone.utc).isoformat(),
        rewritten_intent=args.intent,
    )
    written, skipped = engine.record_feedback(event)
    for doc_id in skipped:
        logger.warning("unknown document %r skipped", doc_id)
    _emit({"written": written, "skipped": skipped, "event": event_to_record(event)})
    return EXIT_OK


def _run_dir(base: str, run_id: str) -> Path:
    out = Path(base) / run_id
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if not Path(config.corpus_path).exists():
        raise FileNotFoundError(f"corpus file not found: {config.corpus_path}")
    corpus = load_corpus(config.corpus_path)
    variants = (
        [parse_variant(s) for s in args.configs.split(",")]
        if args.configs
        else default_variants()
    )
    sim = SimulationConfig(
        iterations=args.iterations,
        rng_seed=args.seed,
    )
    result = run_iterative_benchmark(corpus, variants, sim, base_config=config)
    run_id = args.run_id or f"sim-seed{args.seed}-it{args.iterations}"
    out = _run_dir(args.out, run_id)
    write_metrics_csv(result.rows, out / "metrics.csv")
    write_manifest(result.manifest, out / "manifest.json")
    _emit({"run_id": run_id, "rows": len(result.rows), "out": str(out)})
    return EXIT_OK


def cmd_scenarios(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if not Path(args.history).exists():
        raise FileNotFoundError(f"history file not found: {args.history}")
    if not Path(config.corpus_path).exists():
        raise FileNotFoundError(f"corpus file not found: {config.corpus_path}")
    corpus = load_corpus(config.corpus_path)
    history = read_events_jsonl(args.history)
    variants = (
        [parse_variant(s) for s in args.configs.split(",")]
        if args.configs
        else default_variants()
    )
    report = run_scenarios(
        corpus, history, variants, base_config=config,
        unseen_count=args.unseen, seed=args.seed,
    )
    run_id = args.run_id or f"scenarios-seed{args.seed}"
    out = _run_dir(args.out, run_id)
    write_scenario_csv(report.rows, out / "scenarios.csv")
    write_scenario_manifest(report.manifest, out / "manifest.json")
    _emit({"run_id": run_id, "rows": len(report.rows), "out": str(out)})
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args.config)
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def cmd_datagen(args: argparse.Namespace) -> int:
    docs = synthetic_corpus(
        seed=args.seed,
        n_docs=args.docs,
        families=args.families,
        chunks_per_doc=args.chunks_per_doc,
    )
    dump_corpus(docs, args.out)
    _emit({"documents": len(docs), "out": args.out})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="feedbackrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default="feedbackrank.json",
                       help="engine config file (JSON)")

    p_index = sub.add_parser("index", help="chunk the corpus and build the search index")
    add_config(p_index)
    p_index.set_defaults(func=cmd_index)

    p_query = sub.add_parser("query", help="rank chunks for a query")
    add_config(p_query)
    p_query.add_argument("query")
    p_query.add_argument("--intent", default=None, help="optional rewritten intent")
    p_query.add_argument("--k", type=int, default=None)
    p_query.add_argument("--threshold", type=float, default=None)
    p_query.add_argument("--server", default=None, help="route through a running service")
    p_query.set_defaults(func=cmd_query)

    p_feedback = sub.add_parser("feedback", help="record a rated interaction")
    add_config(p_feedback)
    p_feedback.add_argument("--query", required=True)
    p_feedback.add_argument("--stars", type=int, required=True, choices=range(1, 6))
    p_feedback.add_argument("--docs", required=True,
                            help="comma-separated referenced doc ids, best first")
    p_feedback.add_argument("--intent", default=None)
    p_feedback.add_argument("--server", default=None)
    p_feedback.set_defaults(func=cmd_feedback)

    p_sim = sub.add_parser("simulate", help="run the iterative-learning benchmark")
    add_config(p_sim)
    p_sim.add_argument("--iterations", type=int, default=200)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default="results")
    p_sim.add_argument("--run-id", default=None)
    p_sim.add_argument("--configs", default=None,
                       help="comma list: baseline,synthetic,feedback:0.75,feedback+synthetic:0.75")
    p_sim.set_defaults(func=cmd_simulate)

    p_scen = sub.add_parser("scenarios", help="run the fine-grained scenario suite")
    add_config(p_scen)
    p_scen.add_argument("--history", required=True, help="feedback events JSONL")
    p_scen.add_argument("--out", default="results")
    p_scen.add_argument("--run-id", default=None)
    p_scen.add_argument("--seed", type=int, default=0)
    p_scen.add_argument("--unseen", type=int, default=200)
    p_scen.add_argument("--configs", default=None)
    p_scen.set_defaults(func=cmd_scenarios)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    add_config(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)

    p_gen = sub.add_parser("datagen", help="write a synthetic benchmark corpus")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--docs", type=int, default=96)
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--families", type=int, default=8)
    p_gen.add_argument("--chunks-per-doc", type=int, default=5)
    p_gen.set_defaults(func=cmd_datagen)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
