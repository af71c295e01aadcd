"""Command-line surface.

Subcommands: ingest, query, route, eval, routing-report, cost-report,
record-fixtures. Exit codes: 0 success, 1 runtime failure, 2 usage error.
Endpoint credentials come from the environment variable named in the config,
never from the config file itself.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .corpus import CorpusStore, ingest_document
from .engine import AnswerEngine
from .errors import ConfigError, GatewayError, SchemaError
from .evalharness import ModelJudge, evaluate, load_benchmark
from .gateway import FixtureCassette, ModelGateway
from .kb import KnowledgeGraph
from .ledger import CostLedger, ledger_report
from .linker import MODES, DataLinker
from .reports import (
    DEFAULT_BUCKETS,
    load_decision_log,
    parse_buckets,
    render_comparison,
    render_cost_tables,
    routing_distribution,
)
from .router import QueryRouter
from .vindex import VectorIndex

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _build_gateway(cfg: AppConfig, cassette_mode: str | None = None) -> ModelGateway:
    cassette = None
    mode = cassette_mode or cfg.cassette_mode
    if mode in ("record", "replay") and cfg.cassette_path:
        cassette = FixtureCassette(cfg.cassette_path, mode)
    api_key = os.environ.get(cfg.gateway.api_key_env) if cfg.gateway.api_key_env else None
    return ModelGateway(
        cfg.endpoints,
        cassette=cassette,
        retries=cfg.gateway.retries,
        backoff_seconds=cfg.gateway.backoff_seconds,
        timeout=cfg.gateway.timeout,
        api_key=api_key,
        embedding_dim=cfg.pipeline.embedding_dim,
    )


class Runtime:
    """Loaded stores plus the wired engine for query-time commands."""

    def __init__(self, cfg: AppConfig, cassette_mode: str | None = None):
        self.cfg = cfg
        self.gateway = _build_gateway(cfg, cassette_mode)
        root = Path(cfg.corpus_dir)
        self.store = CorpusStore.load(root)
        self.graph = KnowledgeGraph.load(root / "graph")
        index_base = root / "index"
        if index_base.with_suffix(".vec").exists():
            self.index = VectorIndex.load(index_base)
        else:
            self.index = VectorIndex(cfg.pipeline.embedding_dim)
        self.linker = DataLinker(
            self.graph, self.index, self.store, self.gateway, cfg.pipeline
        )
        self.router = QueryRouter(
            self.gateway, max_sub_queries=cfg.pipeline.max_sub_queries
        )
        self.engine = AnswerEngine(
            self.gateway,
            self.linker,
            self.router,
            self.store,
            cfg.pipeline,
            decision_log_path=cfg.decision_log,
        )

    def save_stores(self) -> None:
        self.store.save()
        self.graph.save(Path(self.cfg.corpus_dir) / "graph")
        self.index.save(Path(self.cfg.corpus_dir) / "index")

    def save_ledger(self, path: str | None = None) -> None:
        target = Path(path or self.cfg.ledger_path)
        target.parent.mkdir(parents=True, exist_ok=True)
        self.gateway.ledger.save(target)


def _doc_id_for(path: Path) -> str:
    stem = path.stem
    return stem[: -len("_content_list")] if stem.endswith("_content_list") else stem


def cmd_ingest(args, cfg: AppConfig) -> int:
    runtime = Runtime(cfg)
    failures = []
    for raw in args.paths:
        path = Path(raw)
        doc_id = args.doc_id if args.doc_id and len(args.paths) == 1 else _doc_id_for(path)
        asset_root = Path(args.assets) if args.assets else path.parent
        try:
            stats = ingest_document(
                runtime.store,
                runtime.graph,
                runtime.index,
                runtime.gateway,
                path,
                asset_root,
                doc_id,
                cfg.pipeline,
                strict=not args.lenient,
            )
        except (SchemaError, OSError, GatewayError) as exc:
            failures.append((doc_id, str(exc)))
            print(f"FAILED {doc_id}: {exc}", file=sys.stderr)
            continue
        print(
            f"ingested {stats.doc_id}: pages={stats.pages} blocks={stats.blocks} "
            f"chunks={stats.chunks} assets={stats.assets} entities={stats.entities} "
            f"relations={stats.relations} hyperedges={stats.hyperedges}"
        )
    runtime.save_stores()
    runtime.save_ledger(args.ledger_out)
    print(
        f"corpus: docs={len(runtime.store.doc_ids)} "
        f"entities={len(runtime.graph.entities)} "
        f"relations={len(runtime.graph.relations)} "
        f"hyperedges={len(runtime.graph.hyperedges)} "
        f"index_records={len(runtime.index)}"
    )
    if failures and not args.lenient:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_query(args, cfg: AppConfig) -> int:
    runtime = Runtime(cfg)
    answer = runtime.engine.answer(
        args.question,
        doc_id=args.doc,
        mode_override=args.mode,
        debug_dir=args.debug_dir,
    )
    print(f"answer: {answer.text}")
    print(f"complexity: {answer.complexity}  mode: {answer.mode}")
    for stage, stats in answer.tokens_by_stage.items():
        print(f"  {stage}: {stats['total_tokens']} tokens")
    print(json.dumps(answer.record(), sort_keys=True, ensure_ascii=False))
    runtime.save_ledger(args.ledger_out)
    return EXIT_OK


def cmd_route(args, cfg: AppConfig) -> int:
    runtime = Runtime(cfg)
    decision = runtime.router.route(args.question)
    print(
        json.dumps(
            {
                "complexity": decision.complexity.value,
                "retrieval_mode": decision.retrieval_mode,
                "instruction_key": decision.instruction_key,
                "sub_queries": list(decision.sub_queries),
                "used_fallback": decision.used_fallback,
                "rationale": decision.rationale,
            },
            sort_keys=True,
            ensure_ascii=False,
            indent=2,
        )
    )
    return EXIT_OK


def cmd_eval(args, cfg: AppConfig) -> int:
    runtime = Runtime(cfg)
    items = load_benchmark(args.benchmark)
    model_judge = None
    if args.judge == "model":
        model_judge = ModelJudge(_build_gateway(cfg))
    report = evaluate(
        runtime.engine,
        items,
        judge=args.judge,
        workers=args.workers or cfg.pipeline.eval_workers,
        model_judge=model_judge,
        mode_override=args.mode,
    )
    missing = [r.item_id for r in report.items if r.missing_doc]
    if missing:
        print(f"missing documents for items: {', '.join(missing)}", file=sys.stderr)
    print(report.render_table())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(
            json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        print(f"report written to {args.out}")
    runtime.save_ledger(args.ledger_out)
    return EXIT_OK


def cmd_routing_report(args, cfg: AppConfig) -> int:
    rows, skipped = load_decision_log(args.log)
    if not rows:
        print("decision log is empty", file=sys.stderr)
        return EXIT_RUNTIME
    buckets = parse_buckets(args.buckets)
    dist = routing_distribution(rows, buckets, skipped=skipped)
    print(dist.render_table())
    if args.compare:
        other_rows, other_skipped = load_decision_log(args.compare)
        other = routing_distribution(other_rows, buckets, skipped=other_skipped)
        print()
        print(render_comparison(dist, other, Path(args.log).name, Path(args.compare).name))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(dist.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def cmd_cost_report(args, cfg: AppConfig) -> int:
    ledger = CostLedger.load(args.ledger)
    baseline = CostLedger.load(args.baseline) if args.baseline else None
    report = ledger_report(
        ledger,
        cfg.prices,
        baseline=baseline,
        label=args.label,
        baseline_label=args.baseline_label,
    )
    print(render_cost_tables(report))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def cmd_record_fixtures(args, cfg: AppConfig) -> int:
    if not cfg.cassette_path:
        print("config has no cassette path under [fixtures]", file=sys.stderr)
        return EXIT_USAGE
    runtime = Runtime(cfg, cassette_mode="record")
    path = Path(args.questions)
    if path.suffix == ".jsonl":
        pairs = [(i.question, i.doc_id) for i in load_benchmark(path)]
    else:
        pairs = [
            (line.strip(), None)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    for question, doc_id in pairs:
        runtime.engine.answer(question, doc_id=doc_id)
    recorded = len(runtime.gateway.cassette) if runtime.gateway.cassette else 0
    print(f"answered {len(pairs)} questions; cassette holds {recorded} records")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routedrag",
        description="Complexity-routed multimodal document QA engine.",
    )
    parser.add_argument("-c", "--config", required=True, help="INI config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse layout JSON, build graph and index")
    p.add_argument("paths", nargs="+", help="content-list JSON files")
    p.add_argument("--assets", help="asset root (default: each file's directory)")
    p.add_argument("--doc-id", help="document id (single path only)")
    p.add_argument("--lenient", action="store_true", help="collect asset problems")
    p.add_argument("--ledger-out", help="write this run's ledger here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="answer one question against the corpus")
    p.add_argument("question")
    p.add_argument("--doc", help="restrict retrieval to one document id")
    p.add_argument("--mode", choices=MODES, help="bypass routing with a fixed mode")
    p.add_argument("--debug-dir", help="dump the unified context as JSON here")
    p.add_argument("--ledger-out", help="write this run's ledger here")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("route", help="print the routing decision only")
    p.add_argument("question")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("eval", help="run a benchmark file and score it")
    p.add_argument("benchmark", help="benchmark JSONL file")
    p.add_argument("--judge", choices=("exact", "normalized", "model"), default="normalized")
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--mode", choices=MODES, help="force one retrieval mode (ablation)")
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--ledger-out", help="write this run's ledger here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("routing-report", help="mode distribution by document length")
    p.add_argument("log", help="decisions JSONL file")
    p.add_argument("--compare", help="second decisions file to compare against")
    p.add_argument("--buckets", default=DEFAULT_BUCKETS)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_routing_report)

    p = sub.add_parser("cost-report", help="token and money tables for a ledger")
    p.add_argument("ledger", help="ledger JSON file")
    p.add_argument("--baseline", help="baseline ledger JSON file")
    p.add_argument("--label", default="this run")
    p.add_argument("--baseline-label", default="baseline")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_cost_report)

    p = sub.add_parser("record-fixtures", help="run questions in record mode")
    p.add_argument("questions", help="benchmark JSONL or plain text, one per line")
    p.set_defaults(func=cmd_record_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("command failed")
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
