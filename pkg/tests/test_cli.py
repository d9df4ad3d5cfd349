import json
import os

import numpy as np
import pytest

from unir.cli import main
from unir.data import parse_corpus, pool_stats
from unir.store import read_embeddings
from unir.synthgen import SynthConfig, generate

from conftest import make_candidate, make_query, write_jsonl
from unir.data import candidate_to_record, query_to_record


@pytest.fixture
def good_corpus(tmp_path):
    qpath = tmp_path / "queries.jsonl"
    cpath = tmp_path / "candidates.jsonl"
    write_jsonl(cpath, [candidate_to_record(make_candidate(f"c{i}")) for i in range(4)])
    write_jsonl(
        qpath,
        [
            query_to_record(make_query("q0", positives=("c0",))),
            query_to_record(make_query("q1", positives=("c1", "c2"))),
        ],
    )
    return str(qpath), str(cpath)


@pytest.fixture
def synth_dir(tmp_path):
    config = SynthConfig(
        queries_per_task=6,
        pool_per_task=30,
        seed=5,
        n_wrong_modality_distractors=2,
        n_near_miss=1,
    )
    corpus = generate(config, str(tmp_path / "synth"))
    return corpus


def test_validate_good_corpus_exit_zero(good_corpus, capsys):
    qpath, cpath = good_corpus
    assert main(["validate", "--queries", qpath, "--candidates", cpath]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["queries"] == 2
    assert payload["candidates"] == 4
    # the CLI reports exactly what the module computes
    queries, pool = parse_corpus(qpath, cpath)
    assert payload["by_modality"] == pool_stats(pool).by_modality


def test_validate_dangling_reference_exit_two(tmp_path, capsys):
    qpath = tmp_path / "queries.jsonl"
    cpath = tmp_path / "candidates.jsonl"
    write_jsonl(cpath, [candidate_to_record(make_candidate("c0"))])
    write_jsonl(qpath, [query_to_record(make_query("q0", positives=("ghost",)))])
    code = main(["validate", "--queries", str(qpath), "--candidates", str(cpath)])
    err = capsys.readouterr().err
    assert code == 2
    assert "error[DANGLING_REF]" in err


def test_validate_missing_file_exit_two(tmp_path, capsys):
    code = main(
        ["validate", "--queries", str(tmp_path / "nope.jsonl"), "--candidates", str(tmp_path / "c")]
    )
    assert code == 2


def test_unknown_flag_exit_one(good_corpus):
    qpath, cpath = good_corpus
    code = main(["validate", "--queries", qpath, "--candidates", cpath, "--bogus"])
    assert code == 1


def test_synth_validate_train_embed_index_search_pipeline(tmp_path, capsys):
    out = tmp_path / "corpus"
    assert (
        main(
            [
                "synth", "--out", str(out), "--tasks", "1,2", "--queries-per-task", "6",
                "--pool-per-task", "30", "--distractors", "2", "--hard-negatives",
                "--seed", "3",
            ]
        )
        == 0
    )
    capsys.readouterr()
    qpath, cpath = str(out / "queries.jsonl"), str(out / "candidates.jsonl")
    fpath = str(out / "features.unir")
    assert main(["validate", "--queries", qpath, "--candidates", cpath, "--features", fpath]) == 0
    capsys.readouterr()

    ck = str(tmp_path / "model.unck")
    assert (
        main(
            [
                "train", "--queries", qpath, "--candidates", cpath, "--features", fpath,
                "--out", ck, "--epochs", "2", "--batch-size", "4", "--seed", "3",
            ]
        )
        == 0
    )
    train_payload = json.loads(capsys.readouterr().out)
    assert train_payload["batches"] > 0

    emb = str(tmp_path / "pool.unir")
    assert (
        main(
            [
                "embed", "--queries", qpath, "--candidates", cpath, "--features", fpath,
                "--checkpoint", ck, "--out", emb,
            ]
        )
        == 0
    )
    capsys.readouterr()
    store = read_embeddings(emb)
    _, pool = parse_corpus(qpath, cpath)
    assert store.ids == [c.did for c in pool.candidates]

    idx = str(tmp_path / "index.json")
    assert (
        main(
            ["index-build", "--embeddings", emb, "--out", idx, "--clustered", "--n-lists", "4"]
        )
        == 0
    )
    capsys.readouterr()

    queries, _ = parse_corpus(qpath, cpath)
    text_query = next(q for q in queries if q.text)
    assert (
        main(
            [
                "search", "--index", idx, "--features", fpath, "--checkpoint", ck,
                "--txt", text_query.text, "-k", "3",
            ]
        )
        == 0
    )
    lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    assert 1 <= len(lines) <= 3
    score, did = lines[0].split("\t")
    float(score)
    assert did in store.ids


def test_search_unknown_img_id_exit_two(synth_dir, tmp_path, capsys):
    emb = str(tmp_path / "pool.unir")
    main(
        [
            "embed", "--queries", synth_dir.queries_path, "--candidates",
            synth_dir.candidates_path, "--features", synth_dir.features_path, "--out", emb,
        ]
    )
    capsys.readouterr()
    code = main(
        [
            "search", "--index", emb, "--features", synth_dir.features_path,
            "--img-id", "img:ghost", "-k", "2",
        ]
    )
    assert code == 2


def test_eval_and_errors_commands(synth_dir, tmp_path, capsys):
    args = [
        "--queries", synth_dir.queries_path,
        "--candidates", synth_dir.candidates_path,
        "--features", synth_dir.features_path,
    ]
    assert main(["eval", *args, "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert "average" in payload

    assert main(["errors", *args]) == 0
    breakdown = json.loads(capsys.readouterr().out)
    total = breakdown["wrong_modality"] + breakdown["wrong_domain"] + breakdown["other"]
    assert breakdown["failed"] == 0 or total == pytest.approx(1.0, abs=1e-9)


def test_eval_local_flag(synth_dir, capsys):
    assert (
        main(
            [
                "eval", "--queries", synth_dir.queries_path, "--candidates",
                synth_dir.candidates_path, "--features", synth_dir.features_path,
                "--local", "--format", "csv",
            ]
        )
        == 0
    )
    out = capsys.readouterr().out
    assert out.startswith("dataset,task,metric,value")


def test_experiment_run_and_report(tmp_path, capsys):
    plan = {
        "seed": 4,
        "epochs": 2,
        "batch_size": 8,
        "baseline": "multi-task",
        "synth": {
            "n_domains": 2,
            "tasks": [1, 2],
            "queries_per_task": 8,
            "pool_per_task": 40,
            "dim": 64,
            "cluster_spread": 0.35,
            "cross_modal_link_strength": 0.8,
            "seed": 4,
            "n_wrong_modality_distractors": 2,
            "n_near_miss": 1,
            "include_hard_negatives": True,
        },
        "conditions": [
            {"name": "multi-task", "use_instructions": False},
            {"name": "instruction-tuned", "use_instructions": True},
        ],
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan))
    out = tmp_path / "run"
    assert main(["experiment", "run", "--plan", str(plan_path), "--out", str(out)]) == 0
    capsys.readouterr()
    assert (out / "manifest.json").exists()
    assert (out / "deltas.json").exists()

    assert main(["report", "--run", str(out), "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {row["condition"] for row in rows} == {"multi-task", "instruction-tuned"}


def test_unir_threads_env_overrides_flag(monkeypatch):
    from unir.cli import thread_budget

    monkeypatch.setenv("UNIR_THREADS", "3")
    assert thread_budget(8) == 3
    monkeypatch.delenv("UNIR_THREADS")
    assert thread_budget(8) == 8
    assert thread_budget(None) is None
