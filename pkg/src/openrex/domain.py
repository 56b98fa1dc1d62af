"""Core data model: relation names, instances, corpora, and run configuration.

All types are immutable values after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Literal, Mapping, Sequence

from .errors import InvalidRelationName

_COLLAPSE = re.compile(r"[\s_]+")


class RelationName(str):
    """Canonical relation name.

    Canonical form is lowercased and trimmed, with runs of whitespace and
    underscores collapsed to single spaces. Instances are plain strings, so
    equality and hashing are equality of canonical forms, and normalization
    is idempotent.
    """

    __slots__ = ()

    def __new__(cls, raw: str) -> "RelationName":
        canonical = _COLLAPSE.sub(" ", str(raw)).strip().lower()
        if not canonical:
            raise InvalidRelationName(f"relation name is empty after normalization: {raw!r}")
        return super().__new__(cls, canonical)


def normalize_relation_name(raw: str) -> RelationName:
    """Canonicalize a raw relation string.

    Raises InvalidRelationName when nothing remains after normalization.
    """
    return RelationName(raw)


@dataclass(frozen=True)
class Instance:
    """A sentence with its head and tail entity surface strings."""

    id: str
    text: str
    head: str
    tail: str


@dataclass(frozen=True)
class LabeledInstance:
    """An instance annotated with its (canonical) relation."""

    instance: Instance
    relation: RelationName

    def __post_init__(self) -> None:
        if not isinstance(self.relation, RelationName):
            object.__setattr__(self, "relation", RelationName(self.relation))

    @property
    def id(self) -> str:
        return self.instance.id


Role = Literal["train", "test"]


@dataclass(frozen=True)
class Corpus:
    """An ordered collection of instances, optionally labeled.

    ``relation_index`` maps each relation to the ids of its instances. It is
    derived from the labels when not supplied; a caller may pass an explicit
    index (e.g. from an external file), which ``validate_corpus`` will check
    against the labels.
    """

    role: Role
    instances: tuple[Instance | LabeledInstance, ...]
    relation_index: Mapping[RelationName, tuple[str, ...]] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        grouped: dict[RelationName, list[LabeledInstance]] = {}
        for item in self.instances:
            if isinstance(item, LabeledInstance):
                grouped.setdefault(item.relation, []).append(item)
        object.__setattr__(
            self, "_by_relation", {r: tuple(items) for r, items in grouped.items()}
        )
        if self.relation_index is None:
            object.__setattr__(
                self,
                "relation_index",
                {r: tuple(i.id for i in items) for r, items in grouped.items()},
            )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance | LabeledInstance]:
        return iter(self.instances)

    @property
    def labeled(self) -> bool:
        return bool(self.instances) and all(
            isinstance(i, LabeledInstance) for i in self.instances
        )

    def relations(self) -> tuple[RelationName, ...]:
        """Relations in first-appearance order."""
        return tuple(self._by_relation)  # type: ignore[attr-defined]

    def instances_of(self, relation: RelationName) -> tuple[LabeledInstance, ...]:
        return self._by_relation.get(RelationName(relation), ())  # type: ignore[attr-defined]

    def by_id(self) -> dict[str, Instance]:
        out: dict[str, Instance] = {}
        for item in self.instances:
            inst = item.instance if isinstance(item, LabeledInstance) else item
            out[inst.id] = inst
        return out

    def gold_map(self) -> dict[str, RelationName]:
        """Instance id to relation, for labeled corpora."""
        return {
            i.id: i.relation for i in self.instances if isinstance(i, LabeledInstance)
        }


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    message: str
    instance_id: str | None = None


def validate_corpus(corpus: Corpus) -> list[ValidationIssue]:
    """Report structural problems; a well-formed corpus yields an empty list.

    Checks duplicate ids, empty fields, label coverage for train corpora,
    and agreement between ``relation_index`` and the actual labels.
    """
    issues: list[ValidationIssue] = []
    seen: set[str] = set()
    derived: dict[RelationName, list[str]] = {}
    for item in corpus.instances:
        inst = item.instance if isinstance(item, LabeledInstance) else item
        if inst.id in seen:
            issues.append(ValidationIssue("duplicate-id", f"duplicate instance id {inst.id!r}", inst.id))
        seen.add(inst.id)
        for name in ("id", "text", "head", "tail"):
            if not getattr(inst, name):
                issues.append(ValidationIssue("empty-field", f"empty {name} on instance {inst.id!r}", inst.id))
        if isinstance(item, LabeledInstance):
            derived.setdefault(item.relation, []).append(inst.id)
        elif corpus.role == "train":
            issues.append(ValidationIssue("unlabeled-train", f"train instance {inst.id!r} has no relation", inst.id))
    declared = {RelationName(r): list(ids) for r, ids in corpus.relation_index.items()}
    if declared != derived:
        for rel in sorted(set(declared) | set(derived)):
            if declared.get(rel, []) != derived.get(rel, []):
                issues.append(
                    ValidationIssue(
                        "index-mismatch",
                        f"relation_index for {rel!r} lists {declared.get(rel, [])} but labels give {derived.get(rel, [])}",
                    )
                )
    return issues


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the three-stage inference pipeline.

    ``d`` is the number of verification demonstration batches per candidate;
    left unset it resolves to the smallest count whose batches can cover
    every other discovered relation, ceil((R - 1) / (n - 1)).
    ``t = 0`` disables the denoising stage entirely (ablation configuration).
    """

    n: int = 4
    k: int = 3
    t: int = 3
    d: int | None = None
    seed: int = 0
    max_in_flight: int = 1
    max_new_tokens: int = 16
    temperature_discovery: float = 0.0
    temperature_denoise: float = 0.0
    temperature_predict: float = 0.0
    consistency: Literal["unanimous", "majority"] = "unanimous"

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.d is not None and self.d < 1:
            raise ValueError("d must be >= 1 when given")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.consistency not in ("unanimous", "majority"):
            raise ValueError(f"unknown consistency rule {self.consistency!r}")

    def resolve_d(self, num_discovered: int) -> int:
        if self.d is not None:
            return self.d
        if num_discovered <= 1 or self.n <= 1:
            return 1
        return max(1, math.ceil((num_discovered - 1) / (self.n - 1)))


Stage = Literal["discovery", "denoising", "prediction"]


@dataclass(frozen=True)
class CandidatePrediction:
    """One (instance, relation) hypothesis with provenance."""

    instance_id: str
    relation: RelationName
    stage: Stage
    attempt_k: int = 1
    round: int = 0

    def __post_init__(self) -> None:
        if self.attempt_k < 1:
            raise ValueError("attempt_k must be >= 1")
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if not isinstance(self.relation, RelationName):
            object.__setattr__(self, "relation", RelationName(self.relation))


@dataclass
class ReliableSet:
    """Per-relation pools of verified test instances.

    ``verdicts`` keeps, for each (instance, relation) entry, the full list of
    verification outputs that admitted it.
    """

    by_relation: dict[RelationName, list[str]] = field(default_factory=dict)
    verdicts: dict[tuple[str, RelationName], tuple[RelationName, ...]] = field(default_factory=dict)

    def add(self, relation: RelationName, instance_id: str, verdicts: Sequence[RelationName]) -> None:
        self.by_relation.setdefault(relation, []).append(instance_id)
        self.verdicts[(instance_id, relation)] = tuple(verdicts)

    def entries(self) -> Iterator[tuple[RelationName, str]]:
        for relation, ids in self.by_relation.items():
            for instance_id in ids:
                yield relation, instance_id

    def instances_of(self, relation: RelationName) -> list[str]:
        return list(self.by_relation.get(relation, []))

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_relation.values())
