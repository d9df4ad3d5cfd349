import csv
import io
import json

import numpy as np
import pytest

from unir.data import Modality, Pool, TaskKind
from unir.errors import EmptyCorpus, UnknownFormat
from unir.evaluation import (
    ErrorBreakdown,
    MetricSpec,
    classify_errors,
    dataset_local_pools,
    evaluate,
    evaluate_local,
    recall_at_k,
    render_report,
)
from unir.index import RetrievalResult, build_clustered, build_flat
from unir.pipeline import embed_pool
from unir.store import StoreMode
from unir.train import ModelParams

from conftest import make_candidate, make_query


def result_of(*dids):
    return RetrievalResult([(did, 1.0 - 0.01 * i) for i, did in enumerate(dids)])


def test_recall_hit_at_rank_three():
    result = result_of("a", "b", "pos", "c", "d")
    assert recall_at_k(result, {"pos"}, 5) == 1


def test_recall_miss_when_positive_below_k():
    result = result_of("a", "b", "c", "d", "e", "pos")
    assert recall_at_k(result, {"pos"}, 5) == 0


def test_recall_overlap_rule_multiple_positives():
    result = result_of("p2", "x", "y")
    assert recall_at_k(result, {"p1", "p2", "p3"}, 1) == 1


def test_recall_monotone_in_k():
    result = result_of("a", "b", "pos", "c")
    hits = [recall_at_k(result, {"pos"}, k) for k in (1, 2, 3, 4)]
    assert hits == [0, 0, 1, 1]
    assert all(b >= a for a, b in zip(hits, hits[1:]))


def test_metric_spec_fashion_rule():
    spec = MetricSpec(fashion_datasets=frozenset({"oddname"}))
    assert spec.k_primary("plain") == 5
    assert spec.k_primary("fashion200k") == 10
    assert spec.k_primary("FashionIQ") == 10
    assert spec.k_primary("oddname") == 10
    assert spec.k_list("plain") == (1, 5, 10)
    assert spec.k_list("fashion200k") == (10, 20, 50)


def planted_corpus(n=12, dim=16, seed=0):
    """Queries whose positive is by construction the nearest candidate.

    Token sets are checked for hash-signature collisions so the planted
    nearest-neighbor property genuinely holds.
    """
    from unir.data import Candidate, Instruction, QueryInstance
    from unir.encoders import hash_embed_text

    queries = []
    rng = np.random.default_rng(seed)
    texts = {
        f"c{i}": " ".join(rng.bytes(4).hex() for _ in range(6)) for i in range(n)
    }
    vecs = [hash_embed_text(t, 64).astype(np.float64) for t in texts.values()]
    for i in range(n):
        for j in range(i + 1, n):
            assert float(vecs[i] @ vecs[j]) < 0.99, "fixture tokens collide; change them"
    candidates = [
        Candidate(did=f"c{i}", modality=Modality.TEXT, domain="misc", text=texts[f"c{i}"])
        for i in range(n)
    ]
    pool = Pool.build(candidates)
    for i in range(n):
        inst = Instruction(
            text="quote the misc passage that answers the description",
            task=TaskKind.T2T,
            intent="retrieve text",
            domain="misc",
        )
        queries.append(
            QueryInstance(
                qid=f"q{i}",
                task=TaskKind.T2T,
                dataset="planted",
                modality=Modality.TEXT,
                text=texts[f"c{i}"],
                image_ref=None,
                instructions=(inst,) * 4,
                positives=(f"c{i}",),
            )
        )
    return queries, pool


def eval_setup(queries, pool, seed=0):
    params = ModelParams.init(StoreMode.SCORE, 64, seed)
    store = embed_pool(pool, params, None)
    index = build_flat(store, params.fusion_weights())
    return params, store, index


def test_planted_corpus_gets_perfect_recall():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    assert report.average["primary"] == 1.0
    assert report.per_dataset["planted"][1] == 1.0


def test_single_dataset_average_equals_dataset_value():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    for k in report.k_values:
        assert report.average[str(k)] == report.per_dataset["planted"][k]


def test_empty_queries_rejected():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    with pytest.raises(EmptyCorpus):
        evaluate([], index, MetricSpec(), params, None, use_instructions=False)


def test_flat_and_full_probe_clustered_reports_match():
    queries, pool = planted_corpus(n=24)
    params, store, index = eval_setup(queries, pool)
    clustered = build_clustered(store, n_lists=4, seed=3, weights=params.fusion_weights())
    flat_report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    clustered_report = evaluate(
        queries, clustered, MetricSpec(), params, None, use_instructions=False, n_probe=4
    )
    assert flat_report.per_dataset == clustered_report.per_dataset
    for qid in flat_report.per_query:
        assert flat_report.per_query[qid].top == clustered_report.per_query[qid].top


def test_local_pool_recall_not_below_global():
    from unir.synthgen import SynthConfig, generate
    from unir.data import parse_corpus
    from unir.store import read_embeddings

    cfg = SynthConfig(queries_per_task=12, pool_per_task=40, seed=5, n_near_miss=1,
                      cluster_spread=0.5)
    corpus = generate(cfg, "/tmp/unir_test_localpool")
    queries, pool = parse_corpus(corpus.queries_path, corpus.candidates_path)
    raw = read_embeddings(corpus.features_path)
    params = ModelParams.init(StoreMode.SCORE, cfg.dim, 0)
    store = embed_pool(pool, params, raw)
    index = build_flat(store, params.fusion_weights())
    spec = MetricSpec()
    global_report = evaluate(queries, index, spec, params, raw, use_instructions=False)
    local_report = evaluate_local(queries, pool, store, spec, params, raw, use_instructions=False)
    for qid, outcome in global_report.per_query.items():
        local_outcome = local_report.per_query[qid]
        for k in outcome.hits:
            assert local_outcome.hits[k] >= outcome.hits[k]


def test_dataset_local_pools_by_prefix():
    from unir.data import Candidate

    candidates = [
        Candidate(did="ds1/c0", modality=Modality.TEXT, domain="misc", text="x"),
        Candidate(did="ds1/c1", modality=Modality.TEXT, domain="misc", text="y"),
        Candidate(did="ds2/c0", modality=Modality.TEXT, domain="misc", text="z"),
    ]
    pool = Pool.build(candidates)
    queries = [
        make_query("ds1/q0", TaskKind.T2T, positives=("ds1/c0",), dataset="ds1"),
        make_query("ds2/q0", TaskKind.T2T, positives=("ds2/c0",), dataset="ds2"),
    ]
    local = dataset_local_pools(queries, pool)
    assert local["ds1"] == {"ds1/c0", "ds1/c1"}
    assert local["ds2"] == {"ds2/c0"}


def failing_report(queries, pool, top_map, spec=None):
    """Build a minimal report where every query misses, with chosen top-1."""
    from unir.evaluation import EvalReport, QueryOutcome

    spec = spec or MetricSpec()
    outcomes = {}
    for q in queries:
        top_did = top_map[q.qid]
        outcomes[q.qid] = QueryOutcome(
            qid=q.qid,
            dataset=q.dataset,
            task=q.task,
            hits={1: 0, 5: 0, 10: 0},
            top=[(top_did, 1.0)],
        )
    return EvalReport(
        per_query=outcomes, per_dataset={}, per_task={}, average={}, k_values=(1, 5, 10),
        spec=spec,
    )


def test_classify_wrong_modality():
    pool = Pool.build(
        [
            make_candidate("pos", Modality.IMAGE_TEXT, domain="wiki"),
            make_candidate("textonly", Modality.TEXT, domain="wiki"),
        ]
    )
    queries = [make_query("q0", TaskKind.T2IT, positives=("pos",))]
    report = failing_report(queries, pool, {"q0": "textonly"})
    breakdown = classify_errors(queries, report, pool)
    assert breakdown.wrong_modality == 1.0
    assert breakdown.failed == 1


def test_classify_wrong_domain():
    pool = Pool.build(
        [
            make_candidate("pos", Modality.TEXT, domain="wiki"),
            make_candidate("offdomain", Modality.TEXT, domain="fashion"),
        ]
    )
    queries = [make_query("q0", TaskKind.T2T, positives=("pos",))]
    report = failing_report(queries, pool, {"q0": "offdomain"})
    breakdown = classify_errors(queries, report, pool)
    assert breakdown.wrong_modality == 0.0
    assert breakdown.wrong_domain == 1.0


def test_classify_other():
    pool = Pool.build(
        [
            make_candidate("pos", Modality.TEXT, domain="wiki"),
            make_candidate("samekind", Modality.TEXT, domain="wiki"),
        ]
    )
    queries = [make_query("q0", TaskKind.T2T, positives=("pos",))]
    report = failing_report(queries, pool, {"q0": "samekind"})
    breakdown = classify_errors(queries, report, pool)
    assert breakdown.other == 1.0


def test_no_failures_gives_zero_fractions():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    breakdown = classify_errors(queries, report, pool)
    assert breakdown.as_dict() == {"wrong_modality": 0.0, "wrong_domain": 0.0, "other": 0.0}
    assert breakdown.failed == 0


def test_fractions_sum_to_one_over_failures():
    pool = Pool.build(
        [
            make_candidate("pos", Modality.IMAGE_TEXT, domain="wiki"),
            make_candidate("textonly", Modality.TEXT, domain="wiki"),
            make_candidate("pos2", Modality.TEXT, domain="wiki"),
            make_candidate("offdomain", Modality.TEXT, domain="fashion"),
            make_candidate("samekind", Modality.TEXT, domain="wiki"),
        ]
    )
    queries = [
        make_query("q0", TaskKind.T2IT, positives=("pos",)),
        make_query("q1", TaskKind.T2T, positives=("pos2",)),
        make_query("q2", TaskKind.T2T, positives=("pos2",)),
    ]
    report = failing_report(
        queries, pool, {"q0": "textonly", "q1": "offdomain", "q2": "samekind"}
    )
    breakdown = classify_errors(queries, report, pool)
    total = breakdown.wrong_modality + breakdown.wrong_domain + breakdown.other
    assert total == pytest.approx(1.0, abs=1e-9)
    assert breakdown.wrong_modality == pytest.approx(1 / 3)


def test_render_self_delta_is_zero():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    rendered = render_report(report, None, "csv", baseline=report)
    rows = list(csv.DictReader(io.StringIO(rendered)))
    for row in rows:
        if row["delta"]:
            assert float(row["delta"]) == 0.0


def test_render_csv_reparses_to_same_numbers():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    rendered = render_report(report, None, "csv")
    rows = list(csv.DictReader(io.StringIO(rendered)))
    for row in rows:
        if row["dataset"] == "planted":
            k = int(row["metric"].split("@")[1])
            assert float(row["value"]) == pytest.approx(report.per_dataset["planted"][k])


def test_render_json_round_trip():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    breakdown = classify_errors(queries, report, pool)
    payload = json.loads(render_report(report, breakdown, "json"))
    assert payload["errors"] == breakdown.as_dict()
    assert payload["average"]["primary"] == report.average["primary"]


def test_render_unknown_format_rejected():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    with pytest.raises(UnknownFormat):
        render_report(report, None, "yaml")


def test_render_text_table_has_stable_columns():
    queries, pool = planted_corpus()
    params, store, index = eval_setup(queries, pool)
    report = evaluate(queries, index, MetricSpec(), params, None, use_instructions=False)
    text = render_report(report, None, "text-table")
    header = text.splitlines()[0].split()
    assert header[:2] == ["dataset", "task"]
    assert header[2:] == [f"R@{k}" for k in report.k_values]
