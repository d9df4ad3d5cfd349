"""Seeded synthetic corpora with planted cluster / modality structure.

Topics are compositional: a topic is a tuple of slot values, its text is the
slot tokens and its image feature the sum of per-slot directions, so a single
linear map can align the two modalities no matter how many topics exist.
Every image feature also carries a shared modality-mean component and a
domain component, mirroring how real embedding spaces cluster by modality
and domain.

For cross-modal tasks a same-topic candidate of the query's own modality is
planted in the pool, so an intent-blind retriever reliably prefers the wrong
modality and the error taxonomy has signal to find.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from unir.data import (
    CANONICAL_DOMAINS,
    Candidate,
    Instruction,
    Modality,
    QueryInstance,
    TaskKind,
    write_candidates,
    write_queries,
)
from unir.errors import ConfigInvalid, EmptyHeldOut, NothingHeldIn
from unir.store import EmbeddingStore, StoreMode, write_embeddings

N_SLOTS = 4
MODALITY_MEAN_WEIGHT = 0.8
DOMAIN_WEIGHT = 0.3
N_FILLER_TOKENS = 2
FILLER_VOCAB = 32


@dataclass
class SynthConfig:
    n_domains: int = 2
    tasks: tuple[TaskKind, ...] = (TaskKind.T2I, TaskKind.T2T, TaskKind.I2T, TaskKind.I2I)
    queries_per_task: int = 50
    pool_per_task: int = 150
    dim: int = 64
    cluster_spread: float = 0.15
    cross_modal_link_strength: float = 0.8
    seed: int = 0
    plant_wrong_modality: bool = True
    n_wrong_modality_distractors: int = 1
    n_near_miss: int = 0
    first_distractor_exact: bool = True
    distractor_drift_units: int = 1
    include_hard_negatives: bool = False
    domain_assignment: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.n_domains < 1 or self.queries_per_task < 0 or self.pool_per_task < 1:
            raise ConfigInvalid("counts must be positive")
        if not self.tasks:
            raise ConfigInvalid("at least one task required")
        if self.domain_assignment is not None:
            if len(self.domain_assignment) != len(self.tasks):
                raise ConfigInvalid("domain_assignment must match tasks length")
            if any(not 0 <= d < self.n_domains for d in self.domain_assignment):
                raise ConfigInvalid("domain_assignment indices out of range")
        if self.cluster_spread <= 0:
            raise ConfigInvalid("cluster_spread must be > 0")
        if not 0.0 <= self.cross_modal_link_strength <= 1.0:
            raise ConfigInvalid("cross_modal_link_strength must be in [0, 1]")
        if self.dim < N_SLOTS:
            raise ConfigInvalid(f"dim must be >= {N_SLOTS}")
        if self.n_wrong_modality_distractors < 1:
            raise ConfigInvalid("n_wrong_modality_distractors must be >= 1")
        if self.n_near_miss < 0:
            raise ConfigInvalid("n_near_miss must be >= 0")
        per_query = 1 + self.n_near_miss
        if self.plant_wrong_modality:
            per_query += self.n_wrong_modality_distractors
        floor = self.queries_per_task * per_query
        if self.pool_per_task < floor:
            raise ConfigInvalid(
                f"pool_per_task={self.pool_per_task} cannot hold {floor} planted candidates"
            )
        # Topic sampling rejects duplicates, so the combinatorial topic space
        # must comfortably exceed the number of items drawing fresh topics.
        topic_space = max(2, self.dim // N_SLOTS) ** N_SLOTS
        needed = len(self.tasks) * self.pool_per_task
        if needed > topic_space // 2:
            raise ConfigInvalid(
                f"config needs ~{needed} distinct topics but dim={self.dim} "
                f"gives only {topic_space}; raise dim or shrink the pool"
            )

    def to_dict(self) -> dict:
        return {
            "n_domains": self.n_domains,
            "tasks": [int(t) for t in self.tasks],
            "queries_per_task": self.queries_per_task,
            "pool_per_task": self.pool_per_task,
            "dim": self.dim,
            "cluster_spread": self.cluster_spread,
            "cross_modal_link_strength": self.cross_modal_link_strength,
            "seed": self.seed,
            "plant_wrong_modality": self.plant_wrong_modality,
            "n_wrong_modality_distractors": self.n_wrong_modality_distractors,
            "n_near_miss": self.n_near_miss,
            "first_distractor_exact": self.first_distractor_exact,
            "distractor_drift_units": self.distractor_drift_units,
            "include_hard_negatives": self.include_hard_negatives,
            "domain_assignment": None
            if self.domain_assignment is None
            else list(self.domain_assignment),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        fields = dict(raw)
        fields["tasks"] = tuple(TaskKind(int(t)) for t in raw.get("tasks", []))
        if raw.get("domain_assignment") is not None:
            fields["domain_assignment"] = tuple(int(d) for d in raw["domain_assignment"])
        cfg = cls(**fields)
        cfg.validate()
        return cfg


@dataclass
class SynthCorpus:
    queries_path: str
    candidates_path: str
    features_path: str
    labels_path: str
    queries: list[QueryInstance] = field(default_factory=list, repr=False)
    candidates: list[Candidate] = field(default_factory=list, repr=False)
    labels: dict = field(default_factory=dict, repr=False)


# Paraphrase scaffolds are keyed by target modality and deliberately avoid
# shared wording across targets (beyond unavoidable glue words): instructions
# steer retrieval through their tokens, so tasks seeking different targets
# must not look alike while tasks sharing a target should; the shared
# target-bank wording is what transfers to held-out datasets.
_TARGET_TEMPLATES = {
    Modality.IMAGE: (
        "show the {domain} picture that best depicts it",
        "display a {domain} image visually matching this",
        "bring up the picture from the {domain} gallery that fits",
        "surface an image inside the {domain} gallery depicting this",
    ),
    Modality.TEXT: (
        "quote the {domain} passage that answers it",
        "pull the written passage about this from the {domain} archive",
        "cite a {domain} passage explaining it",
        "recover the text snippet covering this from the {domain} archive",
    ),
    Modality.IMAGE_TEXT: (
        "assemble the {domain} pair of picture plus caption covering it",
        "fetch an illustrated entry pairing picture with caption from {domain}",
        "deliver the {domain} pair combining picture plus caption for this",
        "collect the illustrated caption pair matching this from the {domain} shelf",
    ),
}


def instruction_texts(task: TaskKind, domain: str) -> list[str]:
    return [
        template.format(domain=domain)
        for template in _TARGET_TEMPLATES[task.target_modality()]
    ]


def _domains(n: int) -> list[str]:
    labels = list(CANONICAL_DOMAINS)
    labels += [f"dom{i}" for i in range(len(CANONICAL_DOMAINS), n)]
    return labels[:n]


class _Planter:
    """Shared latent structure for one generation run."""

    def __init__(self, config: SynthConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        dim = config.dim
        self.values_per_slot = max(2, dim // N_SLOTS)
        self.slot_dirs = self._unit((N_SLOTS, self.values_per_slot, dim))
        self.modality_mean = self._unit((dim,))
        self.domain_dirs = {d: self._unit((dim,)) for d in _domains(config.n_domains)}
        self._used_topics: set[tuple[int, ...]] = set()

    def _unit(self, shape) -> np.ndarray:
        raw = self.rng.standard_normal(shape)
        return raw / np.linalg.norm(raw, axis=-1, keepdims=True)

    def new_topic(self) -> tuple[int, ...]:
        while True:
            topic = tuple(int(v) for v in self.rng.integers(self.values_per_slot, size=N_SLOTS))
            if topic not in self._used_topics:
                self._used_topics.add(topic)
                return topic

    def neighbor_topic(self, topic: tuple[int, ...]) -> tuple[int, ...]:
        """A topic differing from the given one in exactly one slot."""
        for _ in range(64):
            slot = int(self.rng.integers(N_SLOTS))
            value = int(self.rng.integers(self.values_per_slot))
            if value == topic[slot]:
                continue
            neighbor = tuple(value if j == slot else v for j, v in enumerate(topic))
            if neighbor not in self._used_topics:
                self._used_topics.add(neighbor)
                return neighbor
        return self.new_topic()

    def topic_center(self, topic: tuple[int, ...]) -> np.ndarray:
        center = sum(self.slot_dirs[j, v] for j, v in enumerate(topic))
        return center / np.linalg.norm(center)

    def topic_tokens(self, topic: tuple[int, ...]) -> list[str]:
        return [f"{chr(ord('a') + j)}{v}" for j, v in enumerate(topic)]

    def text_for(self, topic: tuple[int, ...], domain: str) -> str:
        tokens = self.topic_tokens(topic) + [f"dom{domain}"]
        fillers = self.rng.integers(FILLER_VOCAB, size=N_FILLER_TOKENS)
        tokens += [f"n{v}" for v in fillers]
        return " ".join(tokens)

    def image_for(self, topic: tuple[int, ...], domain: str) -> np.ndarray:
        noise = self._unit((self.config.dim,))
        feat = (
            MODALITY_MEAN_WEIGHT * self.modality_mean
            + DOMAIN_WEIGHT * self.domain_dirs[domain]
            + self.config.cross_modal_link_strength * self.topic_center(topic)
            + self.config.cluster_spread * noise
        )
        return feat.astype(np.float32)


def _distractor_modality(task: TaskKind) -> Modality | None:
    query_mod, target_mod = task.query_modality(), task.target_modality()
    return query_mod if query_mod is not target_mod else None


def generate(config: SynthConfig, out_dir: str) -> SynthCorpus:
    """Write queries/candidates/raw-features/labels files; seeded, repeatable."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    planter = _Planter(config, rng)
    domains = _domains(config.n_domains)

    queries: list[QueryInstance] = []
    candidates: list[Candidate] = []
    feature_ids: list[str] = []
    feature_rows: list[np.ndarray] = []
    labels: dict[str, dict[str, str]] = {"queries": {}, "candidates": {}}

    def add_image(ref: str, topic, domain) -> None:
        feature_ids.append(ref)
        feature_rows.append(planter.image_for(topic, domain))

    def make_item(
        did: str, modality: Modality, domain: str, topic, dataset: str
    ) -> Candidate:
        text = planter.text_for(topic, domain) if modality.has_text else None
        image_ref = None
        if modality.has_image:
            image_ref = f"img:{did}"
            add_image(image_ref, topic, domain)
        cand = Candidate(did=did, modality=modality, domain=domain, text=text, image_ref=image_ref)
        labels["candidates"][did] = _topic_key(topic)
        return cand

    for task_idx, task in enumerate(config.tasks):
        # Default chunked assignment: consecutive tasks share a domain, so a
        # domain carries queries with conflicting target modalities and the
        # query text alone cannot reveal the intended target.
        if config.domain_assignment is not None:
            domain = domains[config.domain_assignment[task_idx]]
        else:
            domain = domains[task_idx * config.n_domains // len(config.tasks)]
        dataset = f"syn{task_idx}_{task.name.lower()}_{domain}"
        inst_texts = instruction_texts(task, domain)
        instructions = tuple(
            Instruction(
                text=text,
                task=task,
                intent=f"retrieve {task.target_modality().value}",
                domain=domain,
            )
            for text in inst_texts
        )
        counter = 0
        for i in range(config.queries_per_task):
            topic = planter.new_topic()
            qid = f"{dataset}/q{i}"
            positive = make_item(
                f"{dataset}/c{counter}", task.target_modality(), domain, topic, dataset
            )
            candidates.append(positive)
            counter += 1

            query_mod = task.query_modality()
            q_text = planter.text_for(topic, domain) if query_mod.has_text else None
            q_image = None
            q_feature: np.ndarray | None = None
            if query_mod.has_image:
                q_image = f"img:{qid}"
                q_feature = planter.image_for(topic, domain)
                feature_ids.append(q_image)
                feature_rows.append(q_feature)

            negatives: list[str] = []
            distractor_mod = _distractor_modality(task)
            if config.plant_wrong_modality and distractor_mod is not None:
                # The j-th distractor is the query's own content re-wrapped in
                # the query's modality, drifted slightly more each copy. An
                # intent-blind retriever scores the exact copy at the
                # within-modality ceiling, which no target-modality candidate
                # can reach.
                for j in range(config.n_wrong_modality_distractors):
                    did = f"{dataset}/c{counter}"
                    drift_steps = (
                        j if config.first_distractor_exact else j + 1
                    ) * config.distractor_drift_units
                    d_text = None
                    d_image = None
                    if distractor_mod.has_text:
                        d_text = q_text if q_text is not None else planter.text_for(topic, domain)
                        for step in range(drift_steps):
                            d_text = f"{d_text} n{int(planter.rng.integers(FILLER_VOCAB))}x{step}"
                    if distractor_mod.has_image:
                        d_image = f"img:{did}"
                        base = q_feature if q_feature is not None else planter.image_for(topic, domain)
                        noisy = base + 0.05 * drift_steps * planter._unit((config.dim,))
                        feature_ids.append(d_image)
                        feature_rows.append(noisy.astype(np.float32))
                    distractor = Candidate(
                        did=did,
                        modality=distractor_mod,
                        domain=domain,
                        text=d_text,
                        image_ref=d_image,
                    )
                    labels["candidates"][did] = _topic_key(topic)
                    candidates.append(distractor)
                    counter += 1
                    if config.include_hard_negatives:
                        negatives.append(distractor.did)
            for _ in range(config.n_near_miss):
                near = make_item(
                    f"{dataset}/c{counter}",
                    task.target_modality(),
                    domain,
                    planter.neighbor_topic(topic),
                    dataset,
                )
                candidates.append(near)
                counter += 1

            query = QueryInstance(
                qid=qid,
                task=task,
                dataset=dataset,
                modality=query_mod,
                text=q_text,
                image_ref=q_image,
                instructions=instructions,
                positives=(positive.did,),
                negatives=tuple(negatives),
            )
            queries.append(query)
            labels["queries"][qid] = _topic_key(topic)

        while counter < config.pool_per_task:
            topic = planter.new_topic()
            filler = make_item(
                f"{dataset}/c{counter}", task.target_modality(), domain, topic, dataset
            )
            candidates.append(filler)
            counter += 1

    corpus = SynthCorpus(
        queries_path=os.path.join(out_dir, "queries.jsonl"),
        candidates_path=os.path.join(out_dir, "candidates.jsonl"),
        features_path=os.path.join(out_dir, "features.unir"),
        labels_path=os.path.join(out_dir, "labels.json"),
        queries=queries,
        candidates=candidates,
        labels=labels,
    )
    write_queries(corpus.queries_path, queries)
    write_candidates(corpus.candidates_path, candidates)
    feature_matrix = (
        np.stack(feature_rows) if feature_rows else np.zeros((0, config.dim), dtype=np.float32)
    )
    write_embeddings(
        EmbeddingStore(
            dim=config.dim, mode=StoreMode.FEATURE, ids=feature_ids, feature=feature_matrix
        ),
        corpus.features_path,
    )
    with open(corpus.labels_path, "w", encoding="utf-8") as fh:
        json.dump(labels, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return corpus


def _topic_key(topic: tuple[int, ...]) -> str:
    return ".".join(str(v) for v in topic)


def split_held_out(
    queries: list[QueryInstance],
    held_out: set[str] | set[TaskKind],
    seed: int = 0,
) -> tuple[list[QueryInstance], list[QueryInstance]]:
    """Split queries into held-in and held-out by dataset name or task.

    The candidate pool is left untouched: held-out evaluation still retrieves
    from the full heterogeneous pool.
    """
    held_names = {t.name if isinstance(t, TaskKind) else str(t) for t in held_out}
    if not held_names:
        raise EmptyHeldOut("held-out set is empty")

    def is_held_out(q: QueryInstance) -> bool:
        return q.dataset in held_names or q.task.name in held_names

    held = [q for q in queries if is_held_out(q)]
    kept = [q for q in queries if not is_held_out(q)]
    if not held:
        raise EmptyHeldOut(f"no queries match held-out set {sorted(held_names)}")
    if not kept:
        raise NothingHeldIn("every query would be held out")
    return kept, held
