"""Command-line entry point.

Every subcommand is a thin shell over the module APIs; exit codes are 0
(success), 1 (usage), 2 (bad data), 3 (internal). Errors print to stderr as
``error[CODE]: message``. UNIR_THREADS overrides --threads when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from unir import __version__
from unir.data import (
    Modality,
    TaskKind,
    parse_corpus,
    pool_stats,
)
from unir.errors import ConfigInvalid, DataError, EngineError, UsageError
from unir.evaluation import (
    MetricSpec,
    classify_errors,
    evaluate,
    evaluate_local,
    render_report,
)
from unir.experiments import ExperimentPlan, run_held_out, run_plan
from unir.fusion import FusionWeights
from unir.index import build_clustered, build_flat, load_index, save_index, search_clustered, search_flat
from unir.pipeline import embed_pool, embed_query
from unir.store import StoreMode, read_embeddings
from unir.synthgen import SynthConfig, generate
from unir.train import ModelParams, TrainConfig, load_checkpoint, save_checkpoint, train


def thread_budget(flag_value: int | None) -> int | None:
    env = os.environ.get("UNIR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"UNIR_THREADS={env!r} is not an integer") from exc
    return flag_value


def _load_params(args, dim_hint: int) -> ModelParams:
    if getattr(args, "checkpoint", None):
        params, _ = load_checkpoint(args.checkpoint)
        return params
    mode = StoreMode[args.mode.upper()] if hasattr(args, "mode") else StoreMode.SCORE
    return ModelParams.init(mode, dim_hint, args.seed)


def _load_raw(args):
    if getattr(args, "features", None):
        return read_embeddings(args.features)
    return None


def cmd_validate(args) -> int:
    queries, pool = parse_corpus(args.queries, args.candidates)
    stats = pool_stats(pool)
    by_task: dict[str, int] = {}
    by_dataset: dict[str, int] = {}
    for q in queries:
        by_task[q.task.name] = by_task.get(q.task.name, 0) + 1
        by_dataset[q.dataset] = by_dataset.get(q.dataset, 0) + 1
    if args.features:
        raw = read_embeddings(args.features)
        for q in queries:
            if q.image_ref and q.image_ref not in raw:
                raise DataError(f"query {q.qid!r} image ref {q.image_ref!r} missing from features")
        for cand in pool.candidates:
            if cand.image_ref and cand.image_ref not in raw:
                raise DataError(
                    f"candidate {cand.did!r} image ref {cand.image_ref!r} missing from features"
                )
    payload = {
        "queries": len(queries),
        "candidates": stats.total,
        "by_modality": stats.by_modality,
        "by_domain": stats.by_domain,
        "by_task": by_task,
        "by_dataset": by_dataset,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = SynthConfig.from_dict(json.load(fh))
    else:
        config = SynthConfig(
            n_domains=args.n_domains,
            tasks=tuple(TaskKind(int(t)) for t in args.tasks.split(",")),
            queries_per_task=args.queries_per_task,
            pool_per_task=args.pool_per_task,
            dim=args.dim,
            cluster_spread=args.cluster_spread,
            cross_modal_link_strength=args.link_strength,
            seed=args.seed,
            n_wrong_modality_distractors=args.distractors,
            n_near_miss=args.near_miss,
            include_hard_negatives=args.hard_negatives,
        )
        config.validate()
    corpus = generate(config, args.out)
    print(
        json.dumps(
            {
                "queries": corpus.queries_path,
                "candidates": corpus.candidates_path,
                "features": corpus.features_path,
                "labels": corpus.labels_path,
                "n_queries": len(corpus.queries),
                "n_candidates": len(corpus.candidates),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_train(args) -> int:
    queries, pool = parse_corpus(args.queries, args.candidates)
    raw = _load_raw(args)
    config = TrainConfig(
        mode=StoreMode[args.mode.upper()],
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
        use_instructions=not args.no_instructions,
        freeze_weights=args.freeze_weights,
    )
    result = train(queries, pool, raw, config)
    save_checkpoint(args.out, result.params, config)
    head = float(np.mean(result.loss_curve[:5])) if result.loss_curve else float("nan")
    tail = float(np.mean(result.loss_curve[-5:])) if result.loss_curve else float("nan")
    print(
        json.dumps(
            {
                "checkpoint": args.out,
                "batches": len(result.loss_curve),
                "loss_head": head,
                "loss_tail": tail,
                "weights": [float(w) for w in result.params.weights],
                "temperature": result.params.temperature,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_embed(args) -> int:
    queries, pool = parse_corpus(args.queries, args.candidates)
    raw = _load_raw(args)
    dim = raw.dim if raw is not None else args.dim
    params = _load_params(args, dim)
    store = embed_pool(pool, params, raw)
    from unir.store import write_embeddings

    write_embeddings(store, args.out)
    print(json.dumps({"embeddings": args.out, "rows": len(store), "dim": store.dim}))
    return 0


def cmd_index_build(args) -> int:
    store = read_embeddings(args.embeddings)
    weights = FusionWeights(args.w1, args.w2, args.w3, args.w4)
    clustered = None
    if args.clustered:
        clustered = build_clustered(store, args.n_lists, args.seed, weights=weights)
    save_index(args.out, args.embeddings, weights, clustered)
    print(
        json.dumps(
            {
                "index": args.out,
                "type": "clustered" if clustered else "flat",
                "rows": len(store),
                "n_lists": args.n_lists if args.clustered else None,
            }
        )
    )
    return 0


def _build_query_embedding(args, params, raw):
    from unir.server import SearchService

    service = SearchService(index=None, params=params, raw_features=raw)
    return service._embedding(args.txt, args.img_id, args.instruction)


def cmd_search(args) -> int:
    if args.index.endswith(".json"):
        store, index = load_index(args.index)
    else:
        store = read_embeddings(args.index)
        index = build_flat(store, FusionWeights(args.w1, args.w2, args.w3, args.w4))
    raw = _load_raw(args)
    params = _load_params(args, store.dim)
    try:
        embedding = _build_query_embedding(args, params, raw)
    except KeyError as exc:
        raise DataError(f"unknown img_id {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    from unir.index import ClusteredIndex

    if isinstance(index, ClusteredIndex):
        n_probe = args.n_probe or index.n_lists
        result = search_clustered(index, embedding, args.k, n_probe)
    else:
        result = search_flat(index, embedding, args.k)
    for did, score in result.entries:
        print(f"{score:.6f}\t{did}")
    return 0


def cmd_serve(args) -> int:
    from unir.server import SearchService, serve

    if args.index.endswith(".json"):
        store, index = load_index(args.index)
    else:
        store = read_embeddings(args.index)
        index = build_flat(store)
    raw = _load_raw(args)
    params = _load_params(args, store.dim)
    threads = thread_budget(args.threads)
    service = SearchService(
        index=index, params=params, raw_features=raw, n_probe=args.n_probe,
        max_concurrency=threads,
    )
    host, _, port = args.addr.partition(":")
    server = serve(service, host or "127.0.0.1", int(port or "8080"))
    logging.getLogger("unir").info("serving on %s", args.addr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _metric_spec(args) -> MetricSpec:
    fashion = frozenset(args.fashion_datasets.split(",")) if args.fashion_datasets else frozenset()
    return MetricSpec(fashion_datasets=fashion)


def cmd_eval(args) -> int:
    queries, pool = parse_corpus(args.queries, args.candidates)
    raw = _load_raw(args)
    dim = raw.dim if raw is not None else args.dim
    params = _load_params(args, dim)
    spec = _metric_spec(args)
    store = embed_pool(pool, params, raw)
    use_instructions = not args.no_instructions
    if args.local:
        report = evaluate_local(
            queries, pool, store, spec, params, raw, use_instructions, seed=args.seed
        )
    else:
        index = build_flat(store, params.fusion_weights())
        report = evaluate(queries, index, spec, params, raw, use_instructions, seed=args.seed)
    breakdown = classify_errors(queries, report, pool)
    rendered = render_report(report, breakdown, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rendered)
        print(f"wrote {args.out}")
    else:
        print(rendered, end="")
    return 0


def cmd_errors(args) -> int:
    queries, pool = parse_corpus(args.queries, args.candidates)
    raw = _load_raw(args)
    dim = raw.dim if raw is not None else args.dim
    params = _load_params(args, dim)
    spec = _metric_spec(args)
    store = embed_pool(pool, params, raw)
    index = build_flat(store, params.fusion_weights())
    report = evaluate(
        queries, index, spec, params, raw, not args.no_instructions, seed=args.seed
    )
    breakdown = classify_errors(queries, report, pool)
    payload = breakdown.as_dict()
    payload["failed"] = breakdown.failed
    payload["queries"] = len(queries)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    if args.seed is not None:
        plan.seed = args.seed
        if plan.synth is not None:
            plan.synth.seed = args.seed
    if args.action == "run":
        result = run_plan(plan, args.out)
    else:
        result = run_held_out(plan, args.out)
    summary = {
        name: {
            "recall_primary": cond.global_report.average["primary"],
            "wrong_modality": cond.errors.wrong_modality,
            "failed": cond.errors.failed,
        }
        for name, cond in result.conditions.items()
    }
    print(json.dumps({"baseline": result.baseline, "conditions": summary}, indent=2, sort_keys=True))
    if args.out:
        print(f"artifacts under {args.out}")
    return 0


def cmd_report(args) -> int:
    with open(os.path.join(args.run, "deltas.json"), encoding="utf-8") as fh:
        deltas = json.load(fh)
    rows = []
    for name in sorted(deltas):
        entry = {"condition": name}
        entry.update(deltas[name])
        rows.append(entry)
    if args.format == "json":
        print(json.dumps(rows, indent=2, sort_keys=True))
    else:
        keys = sorted({k for row in rows for k in row if k != "condition"})
        header = ["condition"] + keys
        table = [header] + [
            [row["condition"]] + [f"{row.get(k, 0.0):+.4f}" for k in keys] for row in rows
        ]
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        for row in table:
            print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unir", description="instruction-guided multimodal retrieval engine"
    )
    parser.add_argument("--version", action="version", version=f"unir {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--log-level", default="warning")
        if checkpoint:
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--mode", choices=["score", "feature"], default="score")
            p.add_argument("--dim", type=int, default=64)

    p = sub.add_parser("validate", help="parse and validate a corpus")
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--features", default=None)
    common(p, checkpoint=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="SynthConfig JSON file")
    p.add_argument("--n-domains", type=int, default=2)
    p.add_argument("--tasks", default="1,2,4,5", help="comma-separated task numbers")
    p.add_argument("--queries-per-task", type=int, default=50)
    p.add_argument("--pool-per-task", type=int, default=200)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--cluster-spread", type=float, default=0.15)
    p.add_argument("--link-strength", type=float, default=0.8)
    p.add_argument("--distractors", type=int, default=1)
    p.add_argument("--near-miss", type=int, default=0)
    p.add_argument("--hard-negatives", action="store_true")
    common(p, checkpoint=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="contrastive-train the toy model")
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--no-instructions", action="store_true")
    p.add_argument("--freeze-weights", action="store_true")
    p.add_argument("--mode", choices=["score", "feature"], default="score")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--log-level", default="warning")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a candidate pool into a store file")
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index-build", help="build a flat or clustered index")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clustered", action="store_true")
    p.add_argument("--n-lists", type=int, default=16)
    for w in ("w1", "w2", "w3", "w4"):
        p.add_argument(f"--{w}", type=float, default=1.0)
    common(p, checkpoint=False)
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("search", help="run one query against an index")
    p.add_argument("--index", required=True, help="index manifest or embedding file")
    p.add_argument("--features", default=None)
    p.add_argument("--txt", default=None)
    p.add_argument("--img-id", default=None)
    p.add_argument("--instruction", default=None)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--n-probe", type=int, default=None)
    for w in ("w1", "w2", "w3", "w4"):
        p.add_argument(f"--{w}", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("serve", help="HTTP search service")
    p.add_argument("--addr", default="127.0.0.1:8080")
    p.add_argument("--index", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--n-probe", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="recall@k evaluation over a corpus")
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--no-instructions", action="store_true")
    p.add_argument("--local", action="store_true", help="dataset-local pools")
    p.add_argument("--format", choices=["text-table", "csv", "json"], default="text-table")
    p.add_argument("--fashion-datasets", default="")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("errors", help="wrong-modality / wrong-domain / other breakdown")
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--no-instructions", action="store_true")
    p.add_argument("--fashion-datasets", default="")
    common(p)
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("experiment", help="run a declarative experiment plan")
    p.add_argument("action", choices=["run", "held-out"])
    p.add_argument("--plan", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--log-level", default="warning")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="render delta tables from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=["text-table", "json"], default="text-table")
    common(p, checkpoint=False)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (DataError, ConfigInvalid) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error[FILE_NOT_FOUND]: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"error[INTERNAL]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
