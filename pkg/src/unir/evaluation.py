"""Recall@k evaluation, per-dataset/per-task aggregation, error taxonomy.

A query counts as a hit at k when any of its top-k retrieved ids overlaps its
positive set. Failed queries (miss at the dataset's primary k) are classified
by their rank-1 retrieval: wrong modality, then wrong domain, then other.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from unir.data import Pool, QueryInstance, TaskKind
from unir.errors import EmptyCorpus, UnknownFormat
from unir.index import (
    ClusteredIndex,
    FlatIndex,
    RetrievalResult,
    build_flat,
    search_clustered,
    search_flat,
)
from unir.pipeline import embed_query
from unir.store import EmbeddingStore, StoreMode
from unir.train import ModelParams

DEFAULT_K_LIST = (1, 5, 10)
FASHION_K_LIST = (10, 20, 50)


@dataclass(frozen=True)
class MetricSpec:
    default_k_primary: int = 5
    fashion_k_primary: int = 10
    default_k_list: tuple[int, ...] = DEFAULT_K_LIST
    fashion_k_list: tuple[int, ...] = FASHION_K_LIST
    fashion_datasets: frozenset[str] = frozenset()

    def is_fashion(self, dataset: str) -> bool:
        return dataset in self.fashion_datasets or "fashion" in dataset.lower()

    def k_primary(self, dataset: str) -> int:
        return self.fashion_k_primary if self.is_fashion(dataset) else self.default_k_primary

    def k_list(self, dataset: str) -> tuple[int, ...]:
        return self.fashion_k_list if self.is_fashion(dataset) else self.default_k_list

    def all_ks(self, datasets) -> tuple[int, ...]:
        ks: set[int] = set()
        for dataset in datasets:
            ks.update(self.k_list(dataset))
            ks.add(self.k_primary(dataset))
        return tuple(sorted(ks)) if ks else self.default_k_list


def recall_at_k(result: RetrievalResult, positives: set[str], k: int) -> int:
    """1 if any of the first k entries overlaps the positive set, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for did, _ in result.entries[:k]:
        if did in positives:
            return 1
    return 0


@dataclass
class QueryOutcome:
    qid: str
    dataset: str
    task: TaskKind
    hits: dict[int, int]
    top: list[tuple[str, float]]


@dataclass
class EvalReport:
    per_query: dict[str, QueryOutcome]
    per_dataset: dict[str, dict[int, float]]
    per_task: dict[str, dict[int, float]]
    average: dict[str, float]
    k_values: tuple[int, ...]
    spec: MetricSpec = field(default_factory=MetricSpec)

    def datasets(self) -> list[str]:
        return sorted(self.per_dataset)


@dataclass
class ErrorBreakdown:
    wrong_modality: float
    wrong_domain: float
    other: float
    failed: int = 0

    def as_dict(self) -> dict[str, float]:
        return {
            "wrong_modality": self.wrong_modality,
            "wrong_domain": self.wrong_domain,
            "other": self.other,
        }


def _aggregate(outcomes, key_fn, ks) -> dict:
    groups: dict = {}
    for outcome in outcomes:
        groups.setdefault(key_fn(outcome), []).append(outcome)
    return {
        key: {k: sum(o.hits[k] for o in members) / len(members) for k in ks}
        for key, members in sorted(groups.items())
    }


def evaluate(
    queries: list[QueryInstance],
    index: FlatIndex | ClusteredIndex,
    spec: MetricSpec,
    params: ModelParams,
    raw_features: EmbeddingStore | None,
    use_instructions: bool,
    seed: int = 0,
    n_probe: int | None = None,
) -> EvalReport:
    """Search every query at k = max(k list) and aggregate recalls."""
    if not queries:
        raise EmptyCorpus("no queries to evaluate")
    datasets = {q.dataset for q in queries}
    ks = spec.all_ks(datasets)
    k_search = max(ks)
    outcomes: list[QueryOutcome] = []
    for query in queries:
        embedding = embed_query(query, params, raw_features, use_instructions, seed)
        if isinstance(index, ClusteredIndex):
            probes = n_probe if n_probe is not None else index.n_lists
            result = search_clustered(index, embedding, k_search, probes)
        else:
            result = search_flat(index, embedding, k_search)
        positives = set(query.positives)
        hits = {k: recall_at_k(result, positives, k) for k in ks}
        outcomes.append(
            QueryOutcome(
                qid=query.qid,
                dataset=query.dataset,
                task=query.task,
                hits=hits,
                top=result.entries,
            )
        )
    per_dataset = _aggregate(outcomes, lambda o: o.dataset, ks)
    per_task = _aggregate(outcomes, lambda o: o.task.name, ks)
    average = {str(k): sum(per_dataset[d][k] for d in per_dataset) / len(per_dataset) for k in ks}
    average["primary"] = sum(
        per_dataset[d][spec.k_primary(d)] for d in per_dataset
    ) / len(per_dataset)
    return EvalReport(
        per_query={o.qid: o for o in outcomes},
        per_dataset=per_dataset,
        per_task=per_task,
        average=average,
        k_values=ks,
        spec=spec,
    )


def dataset_local_pools(queries: list[QueryInstance], pool: Pool) -> dict[str, set[str]]:
    """Candidate ids belonging to each dataset's task-specific pool.

    When every id carries a "dataset/" prefix (the synthetic generator's
    convention) the prefix decides membership; otherwise a dataset's local
    pool is every candidate referenced by its queries.
    """
    if all("/" in did for did in pool.by_id):
        datasets = {q.dataset for q in queries}
        return {
            dataset: {did for did in pool.by_id if did.split("/", 1)[0] == dataset}
            for dataset in datasets
        }
    local: dict[str, set[str]] = {}
    for query in queries:
        bucket = local.setdefault(query.dataset, set())
        bucket.update(query.positives)
        bucket.update(query.negatives)
    return local


def evaluate_local(
    queries: list[QueryInstance],
    pool: Pool,
    store: EmbeddingStore,
    spec: MetricSpec,
    params: ModelParams,
    raw_features: EmbeddingStore | None,
    use_instructions: bool,
    seed: int = 0,
) -> EvalReport:
    """Evaluate each dataset against its own candidate pool."""
    if not queries:
        raise EmptyCorpus("no queries to evaluate")
    local_ids = dataset_local_pools(queries, pool)
    reports: list[EvalReport] = []
    for dataset in sorted(local_ids):
        dataset_queries = [q for q in queries if q.dataset == dataset]
        if not dataset_queries:
            continue
        rows = [store.index_of(did) for did in store.ids if did in local_ids[dataset]]
        sub = _slice_store(store, rows)
        index = build_flat(sub, params.fusion_weights())
        reports.append(
            evaluate(
                dataset_queries, index, spec, params, raw_features, use_instructions, seed
            )
        )
    return merge_reports(reports, spec)


def _slice_store(store: EmbeddingStore, rows: list[int]) -> EmbeddingStore:
    ids = [store.ids[i] for i in rows]
    if store.mode is StoreMode.FEATURE:
        return EmbeddingStore(
            dim=store.dim, mode=store.mode, ids=ids, feature=store.feature[rows]
        )
    return EmbeddingStore(
        dim=store.dim, mode=store.mode, ids=ids, image=store.image[rows], text=store.text[rows]
    )


def merge_reports(reports: list[EvalReport], spec: MetricSpec) -> EvalReport:
    if not reports:
        raise EmptyCorpus("nothing to merge")
    outcomes = [o for report in reports for o in report.per_query.values()]
    ks = tuple(sorted({k for report in reports for k in report.k_values}))
    usable = [o for o in outcomes if all(k in o.hits for k in ks)]
    per_dataset = _aggregate(usable, lambda o: o.dataset, ks)
    per_task = _aggregate(usable, lambda o: o.task.name, ks)
    average = {str(k): sum(per_dataset[d][k] for d in per_dataset) / len(per_dataset) for k in ks}
    average["primary"] = sum(
        per_dataset[d][spec.k_primary(d)] for d in per_dataset
    ) / len(per_dataset)
    return EvalReport(
        per_query={o.qid: o for o in usable},
        per_dataset=per_dataset,
        per_task=per_task,
        average=average,
        k_values=ks,
        spec=spec,
    )


def classify_errors(
    queries: list[QueryInstance], report: EvalReport, pool: Pool
) -> ErrorBreakdown:
    """Failure taxonomy over queries that missed at their dataset's primary k.

    The rank-1 retrieved candidate decides the class: modality different from
    the task's target modality, else domain different from the first
    positive's domain, else other.
    """
    by_qid = {q.qid: q for q in queries}
    wrong_modality = wrong_domain = other = 0
    failed = 0
    for qid, outcome in report.per_query.items():
        query = by_qid.get(qid)
        if query is None:
            continue
        k_primary = report.spec.k_primary(query.dataset)
        if outcome.hits.get(k_primary, outcome.hits[min(outcome.hits)]) == 1:
            continue
        failed += 1
        if not outcome.top:
            other += 1
            continue
        top_cand = pool.get(outcome.top[0][0])
        if top_cand.modality is not query.task.target_modality():
            wrong_modality += 1
        elif top_cand.domain != pool.get(query.positives[0]).domain:
            wrong_domain += 1
        else:
            other += 1
    if failed == 0:
        return ErrorBreakdown(0.0, 0.0, 0.0, failed=0)
    return ErrorBreakdown(
        wrong_modality=wrong_modality / failed,
        wrong_domain=wrong_domain / failed,
        other=other / failed,
        failed=failed,
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _dataset_task_rows(report: EvalReport) -> list[tuple[str, str, dict[int, float]]]:
    groups: dict[tuple[str, str], list[QueryOutcome]] = {}
    for outcome in report.per_query.values():
        groups.setdefault((outcome.dataset, outcome.task.name), []).append(outcome)
    rows = []
    for (dataset, task), members in sorted(groups.items()):
        recalls = {
            k: sum(o.hits[k] for o in members) / len(members) for k in report.k_values
        }
        rows.append((dataset, task, recalls))
    return rows


def render_report(
    report: EvalReport,
    breakdown: ErrorBreakdown | None = None,
    fmt: str = "text-table",
    baseline: EvalReport | None = None,
) -> str:
    """Render as an aligned text table, CSV, or JSON; optional baseline deltas."""
    if fmt not in ("text-table", "csv", "json"):
        raise UnknownFormat(f"unknown report format {fmt!r}")
    rows = _dataset_task_rows(report)
    base_rows = dict()
    if baseline is not None:
        base_rows = {
            (dataset, task): recalls for dataset, task, recalls in _dataset_task_rows(baseline)
        }

    if fmt == "json":
        payload = {
            "per_dataset": {d: {str(k): v for k, v in m.items()} for d, m in report.per_dataset.items()},
            "per_task": {t: {str(k): v for k, v in m.items()} for t, m in report.per_task.items()},
            "average": report.average,
            "rows": [
                {
                    "dataset": dataset,
                    "task": task,
                    "recall": {str(k): v for k, v in recalls.items()},
                    **(
                        {
                            "delta": {
                                str(k): recalls[k] - base_rows[(dataset, task)][k]
                                for k in recalls
                                if (dataset, task) in base_rows
                            }
                        }
                        if baseline is not None
                        else {}
                    ),
                }
                for dataset, task, recalls in rows
            ],
        }
        if breakdown is not None:
            payload["errors"] = breakdown.as_dict()
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    if fmt == "csv":
        out = io.StringIO()
        headers = ["dataset", "task", "metric", "value"]
        if baseline is not None:
            headers.append("delta")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(headers)
        for dataset, task, recalls in rows:
            for k in report.k_values:
                record = [dataset, task, f"recall@{k}", f"{recalls[k]:.6f}"]
                if baseline is not None:
                    base = base_rows.get((dataset, task), {}).get(k)
                    record.append("" if base is None else f"{recalls[k] - base:.6f}")
                writer.writerow(record)
        for key in sorted(report.average):
            label = "recall_primary" if key == "primary" else f"recall@{key}"
            record = ["average", "-", label, f"{report.average[key]:.6f}"]
            if baseline is not None:
                base = baseline.average.get(key)
                record.append("" if base is None else f"{report.average[key] - base:.6f}")
            writer.writerow(record)
        if breakdown is not None:
            for name, value in breakdown.as_dict().items():
                record = ["errors", "-", name, f"{value:.6f}"]
                if baseline is not None:
                    record.append("")
                writer.writerow(record)
        return out.getvalue()

    headers = ["dataset", "task"] + [f"R@{k}" for k in report.k_values]
    if baseline is not None:
        headers += [f"dR@{k}" for k in report.k_values]
    table = [headers]
    for dataset, task, recalls in rows:
        row = [dataset, task] + [f"{recalls[k]:.4f}" for k in report.k_values]
        if baseline is not None:
            base = base_rows.get((dataset, task), {})
            row += [
                f"{recalls[k] - base[k]:+.4f}" if k in base else "-" for k in report.k_values
            ]
        table.append(row)
    avg_row = ["average", "-"] + [f"{report.average[str(k)]:.4f}" for k in report.k_values]
    if baseline is not None:
        avg_row += [
            f"{report.average[str(k)] - baseline.average.get(str(k), 0.0):+.4f}"
            for k in report.k_values
        ]
    table.append(avg_row)
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in table]
    if breakdown is not None:
        lines.append("")
        lines.append(
            "errors: wrong_modality={:.4f} wrong_domain={:.4f} other={:.4f} (failed={})".format(
                breakdown.wrong_modality, breakdown.wrong_domain, breakdown.other, breakdown.failed
            )
        )
    return "\n".join(lines) + "\n"
