"""Unified retrieval-corpus data model: modalities, tasks, candidate pools.

Corpora are two line-delimited JSON files (candidates + queries) plus an
optional instruction catalog. ``parse_corpus`` validates everything up front
so downstream modules can assume a fully linked, immutable corpus.
"""

from __future__ import annotations

import enum
import hashlib
import json
import warnings
from dataclasses import dataclass, field

from unir.errors import (
    DanglingReference,
    DuplicateId,
    MalformedRecord,
    ModalityMismatch,
    ValidationWarning,
)

CANONICAL_DOMAINS = ("news", "misc", "fashion", "wiki")


class Modality(enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    IMAGE_TEXT = "image,text"

    @classmethod
    def from_wire(cls, value: str) -> "Modality":
        for m in cls:
            if m.value == value:
                return m
        raise ValueError(f"unknown modality {value!r}")

    @property
    def has_text(self) -> bool:
        return self in (Modality.TEXT, Modality.IMAGE_TEXT)

    @property
    def has_image(self) -> bool:
        return self in (Modality.IMAGE, Modality.IMAGE_TEXT)


class TaskKind(enum.IntEnum):
    """The eight retrieval tasks, numbered as in the wire format."""

    T2I = 1
    T2T = 2
    T2IT = 3
    I2T = 4
    I2I = 5
    IT2T = 6
    IT2I = 7
    IT2IT = 8

    def query_modality(self) -> Modality:
        return _TASK_MODALITIES[self][0]

    def target_modality(self) -> Modality:
        return _TASK_MODALITIES[self][1]


_TASK_MODALITIES = {
    TaskKind.T2I: (Modality.TEXT, Modality.IMAGE),
    TaskKind.T2T: (Modality.TEXT, Modality.TEXT),
    TaskKind.T2IT: (Modality.TEXT, Modality.IMAGE_TEXT),
    TaskKind.I2T: (Modality.IMAGE, Modality.TEXT),
    TaskKind.I2I: (Modality.IMAGE, Modality.IMAGE),
    TaskKind.IT2T: (Modality.IMAGE_TEXT, Modality.TEXT),
    TaskKind.IT2I: (Modality.IMAGE_TEXT, Modality.IMAGE),
    TaskKind.IT2IT: (Modality.IMAGE_TEXT, Modality.IMAGE_TEXT),
}


def validate_domain(label: str) -> str:
    """Domains are open strings but must be non-empty lowercase ASCII."""
    if not label or not label.isascii() or label != label.lower():
        raise ValueError(f"invalid domain label {label!r}")
    return label


@dataclass(frozen=True)
class Instruction:
    """One natural-language statement of retrieval intent for a query."""

    text: str
    task: TaskKind
    intent: str
    domain: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("instruction text must be non-empty")
        validate_domain(self.domain)

    @property
    def query_modality(self) -> Modality:
        return self.task.query_modality()

    @property
    def target_modality(self) -> Modality:
        return self.task.target_modality()


@dataclass(frozen=True)
class Candidate:
    """A pool entry. Payload presence must match the declared modality."""

    did: str
    modality: Modality
    domain: str
    text: str | None = None
    image_ref: str | None = None

    def validate(self) -> None:
        validate_domain(self.domain)
        if self.modality.has_text != bool(self.text):
            raise ModalityMismatch(self.did, f"modality {self.modality.value} vs text={self.text!r}")
        if self.modality.has_image != bool(self.image_ref):
            raise ModalityMismatch(
                self.did, f"modality {self.modality.value} vs image_ref={self.image_ref!r}"
            )


@dataclass(frozen=True)
class QueryInstance:
    """A query with its instructions and positive/negative candidate refs."""

    qid: str
    task: TaskKind
    dataset: str
    modality: Modality
    text: str | None
    image_ref: str | None
    instructions: tuple[Instruction, ...]
    positives: tuple[str, ...]
    negatives: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.modality is not self.task.query_modality():
            raise ModalityMismatch(
                self.qid,
                f"query modality {self.modality.value} does not match task "
                f"{self.task.name} ({self.task.query_modality().value})",
            )
        if self.modality.has_text != bool(self.text):
            raise ModalityMismatch(self.qid, f"modality {self.modality.value} vs text={self.text!r}")
        if self.modality.has_image != bool(self.image_ref):
            raise ModalityMismatch(
                self.qid, f"modality {self.modality.value} vs image_ref={self.image_ref!r}"
            )
        if not self.instructions:
            raise ValueError(f"query {self.qid!r} has no instructions")
        if len(self.instructions) != 4:
            warnings.warn(
                f"query {self.qid!r} has {len(self.instructions)} instructions (convention is 4)",
                ValidationWarning,
                stacklevel=2,
            )
        if not self.positives:
            raise ValueError(f"query {self.qid!r} has no positive candidates")


@dataclass(frozen=True)
class Pool:
    """Immutable heterogeneous candidate pool with an id -> index map."""

    candidates: tuple[Candidate, ...]
    by_id: dict[str, int] = field(repr=False)

    @classmethod
    def build(cls, candidates: list[Candidate] | tuple[Candidate, ...]) -> "Pool":
        by_id: dict[str, int] = {}
        for i, cand in enumerate(candidates):
            if cand.did in by_id:
                raise DuplicateId(cand.did)
            by_id[cand.did] = i
        return cls(candidates=tuple(candidates), by_id=by_id)

    def __len__(self) -> int:
        return len(self.candidates)

    def __contains__(self, did: str) -> bool:
        return did in self.by_id

    def get(self, did: str) -> Candidate:
        return self.candidates[self.by_id[did]]

    @property
    def stats(self) -> "PoolStats":
        return pool_stats(self)

    def restricted(self, dids: set[str]) -> "Pool":
        """Sub-pool preserving candidate order (used for dataset-local eval)."""
        return Pool.build([c for c in self.candidates if c.did in dids])


@dataclass(frozen=True)
class PoolStats:
    by_modality: dict[str, int]
    by_domain: dict[str, int]
    total: int


def pool_stats(pool: Pool) -> PoolStats:
    """Per-modality and per-domain candidate counts; both sum to |pool|."""
    by_modality = {m.value: 0 for m in Modality}
    by_domain: dict[str, int] = {}
    for cand in pool.candidates:
        by_modality[cand.modality.value] += 1
        by_domain[cand.domain] = by_domain.get(cand.domain, 0) + 1
    return PoolStats(by_modality=by_modality, by_domain=by_domain, total=len(pool))


def select_instruction(query: QueryInstance, seed: int) -> Instruction:
    """Pick one of the query's instructions, deterministic in (qid, seed).

    The draw is uniform over the instruction list; the same (qid, seed) pair
    always yields the same pick.
    """
    n = len(query.instructions)
    if n == 1:
        return query.instructions[0]
    digest = hashlib.blake2b(
        f"{query.qid}\x00{seed}".encode(), digest_size=8
    ).digest()
    return query.instructions[int.from_bytes(digest, "little") % n]


# ---------------------------------------------------------------------------
# Line-delimited record (de)serialization
# ---------------------------------------------------------------------------

def candidate_to_record(cand: Candidate) -> dict:
    return {
        "did": cand.did,
        "modality": cand.modality.value,
        "domain": cand.domain,
        "txt": cand.text,
        "img": cand.image_ref,
    }


def candidate_from_record(rec: dict) -> Candidate:
    cand = Candidate(
        did=str(rec["did"]),
        modality=Modality.from_wire(rec["modality"]),
        domain=str(rec["domain"]),
        text=rec.get("txt") or None,
        image_ref=rec.get("img") or None,
    )
    cand.validate()
    return cand


def query_to_record(q: QueryInstance) -> dict:
    return {
        "qid": q.qid,
        "task": int(q.task),
        "dataset": q.dataset,
        "modality": q.modality.value,
        "txt": q.text,
        "img": q.image_ref,
        "instructions": [
            {"text": inst.text, "intent": inst.intent, "domain": inst.domain}
            for inst in q.instructions
        ],
        "pos": list(q.positives),
        "neg": list(q.negatives),
    }


def query_from_record(rec: dict) -> QueryInstance:
    task = TaskKind(int(rec["task"]))
    instructions = tuple(
        Instruction(
            text=str(i["text"]),
            task=task,
            intent=str(i.get("intent", "")),
            domain=str(i["domain"]),
        )
        for i in rec["instructions"]
    )
    q = QueryInstance(
        qid=str(rec["qid"]),
        task=task,
        dataset=str(rec["dataset"]),
        modality=Modality.from_wire(rec["modality"]),
        text=rec.get("txt") or None,
        image_ref=rec.get("img") or None,
        instructions=instructions,
        positives=tuple(str(d) for d in rec["pos"]),
        negatives=tuple(str(d) for d in rec.get("neg", ())),
    )
    q.validate()
    return q


def _iter_jsonl(path: str):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path, lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise MalformedRecord(path, lineno, "record is not an object")
            yield lineno, rec


def parse_candidates(path: str) -> Pool:
    candidates: list[Candidate] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        try:
            cand = candidate_from_record(rec)
        except DuplicateId:
            raise
        except ModalityMismatch:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedRecord(path, lineno, str(exc)) from exc
        if cand.did in seen:
            raise DuplicateId(cand.did)
        seen.add(cand.did)
        candidates.append(cand)
    return Pool.build(candidates)


def parse_queries(path: str, pool: Pool) -> list[QueryInstance]:
    queries: list[QueryInstance] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        try:
            q = query_from_record(rec)
        except ModalityMismatch:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedRecord(path, lineno, str(exc)) from exc
        if q.qid in seen:
            raise DuplicateId(q.qid)
        seen.add(q.qid)
        for did in list(q.positives) + list(q.negatives):
            if did not in pool:
                raise DanglingReference(q.qid, did)
        queries.append(q)
    return queries


def parse_corpus(queries_path: str, candidates_path: str) -> tuple[list[QueryInstance], Pool]:
    """Parse and fully validate a corpus; every reference must resolve."""
    pool = parse_candidates(candidates_path)
    queries = parse_queries(queries_path, pool)
    return queries, pool


def write_candidates(path: str, candidates) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cand in candidates:
            fh.write(json.dumps(candidate_to_record(cand), sort_keys=True) + "\n")


def write_queries(path: str, queries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(query_to_record(q), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Instruction catalog: task -> dataset -> instruction strings
# ---------------------------------------------------------------------------

def load_instruction_catalog(path: str) -> dict[TaskKind, dict[str, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    catalog: dict[TaskKind, dict[str, list[str]]] = {}
    for task_key, datasets in raw.items():
        task = TaskKind(int(task_key))
        catalog[task] = {}
        for dataset, texts in datasets.items():
            if not texts:
                raise ValueError(f"catalog entry {task_key}/{dataset} is empty")
            if len(texts) != 4:
                warnings.warn(
                    f"catalog entry {task_key}/{dataset} has {len(texts)} instructions",
                    ValidationWarning,
                    stacklevel=2,
                )
            catalog[task][dataset] = [str(t) for t in texts]
    return catalog


def save_instruction_catalog(path: str, catalog: dict[TaskKind, dict[str, list[str]]]) -> None:
    raw = {str(int(task)): datasets for task, datasets in sorted(catalog.items())}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
