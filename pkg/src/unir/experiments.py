"""Experiment orchestration: paired conditions over one corpus and seed.

A plan lists conditions (zero-shot / trained, with or without instructions)
that differ only through their declared switches; everything else, including
the seed, is shared, so condition deltas isolate the switch under test. Runs
write reports, checkpoints, and a manifest with content checksums under a
run directory, and rerunning a plan reproduces every byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

from unir.data import Pool, QueryInstance, TaskKind, parse_corpus
from unir.errors import ConfigInvalid, EmptyHeldOut
from unir.evaluation import (
    ErrorBreakdown,
    EvalReport,
    MetricSpec,
    classify_errors,
    evaluate,
    evaluate_local,
    render_report,
)
from unir.index import build_flat
from unir.pipeline import embed_pool
from unir.store import EmbeddingStore, StoreMode, read_embeddings, write_embeddings
from unir.synthgen import SynthConfig, generate, split_held_out
from unir.train import ModelParams, TrainConfig, save_checkpoint, train


@dataclass
class Condition:
    name: str
    use_instructions: bool = True
    train: bool = True
    mode: StoreMode = StoreMode.SCORE
    train_tasks: tuple[TaskKind, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "use_instructions": self.use_instructions,
            "train": self.train,
            "mode": self.mode.name.lower(),
            "train_tasks": None
            if self.train_tasks is None
            else [int(t) for t in self.train_tasks],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Condition":
        return cls(
            name=str(raw["name"]),
            use_instructions=bool(raw.get("use_instructions", True)),
            train=bool(raw.get("train", True)),
            mode=StoreMode[raw.get("mode", "score").upper()],
            train_tasks=None
            if raw.get("train_tasks") is None
            else tuple(TaskKind(int(t)) for t in raw["train_tasks"]),
        )


@dataclass
class ExperimentPlan:
    conditions: list[Condition]
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-2
    baseline: str | None = None
    synth: SynthConfig | None = None
    queries_path: str | None = None
    candidates_path: str | None = None
    features_path: str | None = None
    held_out: tuple[str, ...] = ()
    fashion_datasets: tuple[str, ...] = ()

    def validate(self) -> None:
        if not self.conditions:
            raise ConfigInvalid("plan has no conditions")
        names = [c.name for c in self.conditions]
        if len(set(names)) != len(names):
            raise ConfigInvalid(f"condition names must be unique: {names}")
        if self.baseline is not None and self.baseline not in names:
            raise ConfigInvalid(f"baseline {self.baseline!r} is not a condition")
        has_paths = self.queries_path is not None and self.candidates_path is not None
        if self.synth is None and not has_paths:
            raise ConfigInvalid("plan needs either a synth section or corpus paths")

    def to_dict(self) -> dict:
        return {
            "conditions": [c.to_dict() for c in self.conditions],
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "baseline": self.baseline,
            "synth": None if self.synth is None else self.synth.to_dict(),
            "corpus": {
                "queries": self.queries_path,
                "candidates": self.candidates_path,
                "features": self.features_path,
            },
            "held_out": list(self.held_out),
            "fashion_datasets": list(self.fashion_datasets),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentPlan":
        corpus = raw.get("corpus") or {}
        plan = cls(
            conditions=[Condition.from_dict(c) for c in raw.get("conditions", [])],
            seed=int(raw.get("seed", 0)),
            epochs=int(raw.get("epochs", 10)),
            batch_size=int(raw.get("batch_size", 32)),
            learning_rate=float(raw.get("learning_rate", 1e-2)),
            baseline=raw.get("baseline"),
            synth=None if raw.get("synth") is None else SynthConfig.from_dict(raw["synth"]),
            queries_path=corpus.get("queries"),
            candidates_path=corpus.get("candidates"),
            features_path=corpus.get("features"),
            held_out=tuple(raw.get("held_out", ())),
            fashion_datasets=tuple(raw.get("fashion_datasets", ())),
        )
        plan.validate()
        return plan

    @classmethod
    def load(cls, path: str) -> "ExperimentPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def metric_spec(self) -> MetricSpec:
        return MetricSpec(fashion_datasets=frozenset(self.fashion_datasets))

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


@dataclass
class ConditionResult:
    name: str
    params: ModelParams
    global_report: EvalReport
    local_report: EvalReport
    errors: ErrorBreakdown

    def summary(self) -> dict:
        return {
            "global": {
                "average": self.global_report.average,
                "per_dataset": {
                    d: {str(k): v for k, v in m.items()}
                    for d, m in self.global_report.per_dataset.items()
                },
                "per_task": {
                    t: {str(k): v for k, v in m.items()}
                    for t, m in self.global_report.per_task.items()
                },
            },
            "local": {"average": self.local_report.average},
            "errors": self.errors.as_dict(),
            "failed": self.errors.failed,
        }


@dataclass
class PlanResult:
    conditions: dict[str, ConditionResult]
    baseline: str
    deltas: dict[str, dict[str, float]]
    out_dir: str | None = None

    def condition(self, name: str) -> ConditionResult:
        return self.conditions[name]


def _resolve_corpus(
    plan: ExperimentPlan, out_dir: str | None
) -> tuple[list[QueryInstance], Pool, EmbeddingStore | None]:
    if plan.synth is not None:
        if out_dir:
            target = os.path.join(out_dir, "corpus")
        else:
            target = tempfile.mkdtemp(prefix="unir-corpus-")
        corpus = generate(plan.synth, target)
        queries, pool = parse_corpus(corpus.queries_path, corpus.candidates_path)
        raw = read_embeddings(corpus.features_path)
        return queries, pool, raw
    queries, pool = parse_corpus(plan.queries_path, plan.candidates_path)
    raw = read_embeddings(plan.features_path) if plan.features_path else None
    return queries, pool, raw


def run_condition(
    condition: Condition,
    plan: ExperimentPlan,
    train_queries: list[QueryInstance],
    eval_queries: list[QueryInstance],
    pool: Pool,
    raw: EmbeddingStore | None,
    spec: MetricSpec,
) -> ConditionResult:
    config = TrainConfig(
        mode=condition.mode,
        batch_size=plan.batch_size,
        epochs=plan.epochs,
        learning_rate=plan.learning_rate,
        seed=plan.seed,
        use_instructions=condition.use_instructions,
    )
    dim = raw.dim if raw is not None else 64
    if condition.train:
        selected = (
            train_queries
            if condition.train_tasks is None
            else [q for q in train_queries if q.task in condition.train_tasks]
        )
        params = train(selected, pool, raw, config).params
    else:
        params = ModelParams.init(condition.mode, dim, plan.seed, config.temperature_init)
    store = embed_pool(pool, params, raw)
    index = build_flat(store, params.fusion_weights())
    global_report = evaluate(
        eval_queries, index, spec, params, raw, condition.use_instructions, seed=plan.seed
    )
    local_report = evaluate_local(
        eval_queries, pool, store, spec, params, raw, condition.use_instructions, seed=plan.seed
    )
    errors = classify_errors(eval_queries, global_report, pool)
    return ConditionResult(
        name=condition.name,
        params=params,
        global_report=global_report,
        local_report=local_report,
        errors=errors,
    )


def _compute_deltas(results: dict[str, ConditionResult], baseline: str) -> dict[str, dict[str, float]]:
    base = results[baseline]
    deltas: dict[str, dict[str, float]] = {}
    for name, result in results.items():
        delta = {
            f"average@{k}": result.global_report.average[k] - base.global_report.average.get(k, 0.0)
            for k in result.global_report.average
        }
        delta["wrong_modality"] = result.errors.wrong_modality - base.errors.wrong_modality
        deltas[name] = delta
    return deltas


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_outputs(
    plan: ExperimentPlan, results: dict[str, ConditionResult], deltas, out_dir: str
) -> None:
    artifacts: list[str] = []
    baseline_name = plan.baseline or plan.conditions[0].name
    base_report = results[baseline_name].global_report
    for name, result in sorted(results.items()):
        cond_dir = os.path.join(out_dir, name)
        os.makedirs(cond_dir, exist_ok=True)
        summary_path = os.path.join(cond_dir, "summary.json")
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(result.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        artifacts.append(summary_path)
        for fmt, suffix in (("text-table", "txt"), ("csv", "csv"), ("json", "json")):
            report_path = os.path.join(cond_dir, f"report.{suffix}")
            baseline_report = None if name == baseline_name else base_report
            with open(report_path, "w", encoding="utf-8") as fh:
                fh.write(render_report(result.global_report, result.errors, fmt, baseline_report))
            artifacts.append(report_path)
        checkpoint_path = os.path.join(cond_dir, "model.unck")
        config = TrainConfig(
            mode=result.params.mode,
            batch_size=plan.batch_size,
            epochs=plan.epochs,
            learning_rate=plan.learning_rate,
            seed=plan.seed,
            use_instructions=next(
                c.use_instructions for c in plan.conditions if c.name == name
            ),
        )
        save_checkpoint(checkpoint_path, result.params, config)
        artifacts.append(checkpoint_path)
    deltas_path = os.path.join(out_dir, "deltas.json")
    with open(deltas_path, "w", encoding="utf-8") as fh:
        json.dump(deltas, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts.append(deltas_path)
    manifest = {
        "config_hash": plan.config_hash(),
        "seed": plan.seed,
        "baseline": baseline_name,
        "artifacts": {
            os.path.relpath(path, out_dir): _sha256(path) for path in sorted(artifacts)
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_plan(plan: ExperimentPlan, out_dir: str | None = None) -> PlanResult:
    """Run every condition on the full corpus and diff against the baseline."""
    plan.validate()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    queries, pool, raw = _resolve_corpus(plan, out_dir)
    spec = plan.metric_spec()
    results = {
        condition.name: run_condition(condition, plan, queries, queries, pool, raw, spec)
        for condition in plan.conditions
    }
    baseline = plan.baseline or plan.conditions[0].name
    deltas = _compute_deltas(results, baseline)
    if out_dir:
        _write_outputs(plan, results, deltas, out_dir)
    return PlanResult(conditions=results, baseline=baseline, deltas=deltas, out_dir=out_dir)


def run_held_out(plan: ExperimentPlan, out_dir: str | None = None) -> PlanResult:
    """Train on held-in datasets only; evaluate zero-shot on the held-out ones."""
    plan.validate()
    if not plan.held_out:
        raise EmptyHeldOut("plan.held_out is empty")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    queries, pool, raw = _resolve_corpus(plan, out_dir)
    held_in, held_out = split_held_out(queries, set(plan.held_out))
    spec = plan.metric_spec()
    results = {
        condition.name: run_condition(condition, plan, held_in, held_out, pool, raw, spec)
        for condition in plan.conditions
    }
    baseline = plan.baseline or plan.conditions[0].name
    deltas = _compute_deltas(results, baseline)
    if out_dir:
        _write_outputs(plan, results, deltas, out_dir)
    return PlanResult(conditions=results, baseline=baseline, deltas=deltas, out_dir=out_dir)
