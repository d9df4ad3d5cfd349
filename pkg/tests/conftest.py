import json

import numpy as np
import pytest

from unir.data import (
    Candidate,
    Instruction,
    Modality,
    Pool,
    QueryInstance,
    TaskKind,
)


def make_instruction(task: TaskKind, text: str = "find the matching item", domain: str = "misc"):
    return Instruction(text=text, task=task, intent="match", domain=domain)


def make_candidate(did: str, modality: Modality = Modality.TEXT, domain: str = "misc"):
    return Candidate(
        did=did,
        modality=modality,
        domain=domain,
        text=f"text for {did}" if modality.has_text else None,
        image_ref=f"img:{did}" if modality.has_image else None,
    )


def make_query(
    qid: str,
    task: TaskKind = TaskKind.T2T,
    positives=("c1",),
    negatives=(),
    dataset: str = "toy",
    n_instructions: int = 4,
):
    modality = task.query_modality()
    return QueryInstance(
        qid=qid,
        task=task,
        dataset=dataset,
        modality=modality,
        text=f"query text {qid}" if modality.has_text else None,
        image_ref=f"img:{qid}" if modality.has_image else None,
        instructions=tuple(
            make_instruction(task, text=f"instruction variant {i} for {task.name.lower()}")
            for i in range(n_instructions)
        ),
        positives=tuple(positives),
        negatives=tuple(negatives),
    )


@pytest.fixture
def tiny_pool():
    return Pool.build(
        [
            make_candidate("c1", Modality.TEXT),
            make_candidate("c2", Modality.TEXT),
            make_candidate("c3", Modality.IMAGE),
            make_candidate("c4", Modality.IMAGE_TEXT, domain="wiki"),
            make_candidate("c5", Modality.TEXT, domain="news"),
        ]
    )


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def unit_vec(dim: int, axis: int, dtype=np.float32) -> np.ndarray:
    v = np.zeros(dim, dtype=dtype)
    v[axis] = 1.0
    return v
