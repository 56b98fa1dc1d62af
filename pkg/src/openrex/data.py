"""Dataset ingestion, known/new splitting, long-tail construction, persistence.

The normalized corpus format is line-delimited JSON, one instance per line
with fields ``{id, text, head, tail, relation}`` where ``relation`` is null
for unlabeled test instances. Test labels are sealed into a separate gold
sidecar file ``{id: relation}`` that only the evaluation path reads, so they
can never leak into prompts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .domain import Corpus, Instance, LabeledInstance, RelationName, Role
from .errors import InsufficientInstances, ParseError, SplitError
from .seeding import derive_rng

LT_BASE_COUNT = 700


@dataclass(frozen=True)
class SplitSpec:
    """Which relations are known (train) and which are new (test).

    With ``mixed_test`` the test pool additionally receives a held-out slice
    of each known relation's instances (the trailing ``known_holdout_fraction``
    of them in corpus order), removed from train so the two sides never share
    an instance.
    """

    known_relations: tuple[RelationName, ...]
    new_relations: tuple[RelationName, ...]
    mixed_test: bool = False
    known_holdout_fraction: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "known_relations", tuple(RelationName(r) for r in self.known_relations))
        object.__setattr__(self, "new_relations", tuple(RelationName(r) for r in self.new_relations))
        overlap = set(self.known_relations) & set(self.new_relations)
        if overlap:
            raise SplitError(f"known and new relation sets overlap: {sorted(overlap)}")
        if not 0.0 < self.known_holdout_fraction < 1.0:
            raise SplitError("known_holdout_fraction must be in (0, 1)")


@dataclass(frozen=True)
class Split:
    train: Corpus
    test: Corpus
    gold: Mapping[str, RelationName] = field(default_factory=dict)


def _first_n_spec(corpus: Corpus, known_count: int, mixed_test: bool = False) -> SplitSpec:
    relations = corpus.relations()
    if known_count > len(relations):
        raise SplitError(f"corpus has {len(relations)} relations, cannot take first {known_count} as known")
    return SplitSpec(relations[:known_count], relations[known_count:], mixed_test=mixed_test)


def load_fewrel(path: str | Path) -> Corpus:
    """Load a mapping from relation name to records with token lists and
    head/tail entity descriptors."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a relation-to-records mapping")
    items: list[LabeledInstance] = []
    for rel_key, records in data.items():
        relation = RelationName(rel_key)
        if not isinstance(records, list):
            raise ParseError(f"relation {rel_key!r}: records must be a list")
        for idx, rec in enumerate(records):
            try:
                tokens = rec["tokens"]
                head = rec["h"][0]
                tail = rec["t"][0]
                if not (isinstance(tokens, list) and tokens and isinstance(head, str) and isinstance(tail, str)):
                    raise TypeError
                text = " ".join(str(t) for t in tokens)
            except (KeyError, IndexError, TypeError) as exc:
                raise ParseError(f"relation {rel_key!r} record {idx}: malformed record") from exc
            items.append(LabeledInstance(Instance(f"{relation}#{idx}", text, head, tail), relation))
    return Corpus(role="train", instances=tuple(items))


def load_tacred(path: str | Path) -> Corpus:
    """Load a list of records with token lists, relation labels, and
    subject/object spans or strings. ``no_relation`` records are dropped."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a list of records")
    items: list[LabeledInstance] = []
    for idx, rec in enumerate(data):
        try:
            raw_relation = rec["relation"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"record {idx}: missing relation") from exc
        if raw_relation == "no_relation":
            continue
        try:
            tokens = rec.get("token") or rec["tokens"]
            text = " ".join(str(t) for t in tokens)
            head = _tacred_span(rec, tokens, "subj")
            tail = _tacred_span(rec, tokens, "obj")
        except (KeyError, IndexError, TypeError) as exc:
            raise ParseError(f"record {idx}: malformed record") from exc
        instance_id = str(rec.get("id") or f"tacred#{idx}")
        items.append(LabeledInstance(Instance(instance_id, text, head, tail), RelationName(raw_relation)))
    return Corpus(role="train", instances=tuple(items))


def _tacred_span(rec: dict, tokens: list, prefix: str) -> str:
    if isinstance(rec.get(prefix), str):
        return rec[prefix]
    start, end = int(rec[f"{prefix}_start"]), int(rec[f"{prefix}_end"])
    if not 0 <= start <= end < len(tokens):
        raise IndexError
    return " ".join(str(t) for t in tokens[start : end + 1])


def split_known_new(corpus: Corpus, spec: SplitSpec) -> Split:
    """Partition a labeled corpus into a labeled train corpus and an
    unlabeled test corpus plus its sealed gold map."""
    if not corpus.labeled:
        raise SplitError("split requires a fully labeled corpus")
    available = set(corpus.relations())
    missing = [r for r in (*spec.known_relations, *spec.new_relations) if r not in available]
    if missing:
        raise SplitError(f"relations not present in corpus: {missing}")
    uncovered = available - set(spec.known_relations) - set(spec.new_relations)
    if uncovered:
        raise SplitError(f"corpus relations not covered by the split spec: {sorted(uncovered)}")

    known = set(spec.known_relations)
    new = set(spec.new_relations)
    held_out: set[str] = set()
    if spec.mixed_test:
        for rel in spec.known_relations:
            ids = list(corpus.relation_index[rel])
            n_hold = max(1, math.ceil(spec.known_holdout_fraction * len(ids)))
            held_out.update(ids[-n_hold:])

    train_items: list[LabeledInstance] = []
    test_items: list[Instance] = []
    gold: dict[str, RelationName] = {}
    for item in corpus.instances:
        assert isinstance(item, LabeledInstance)
        if item.relation in new or item.id in held_out:
            test_items.append(item.instance)
            gold[item.id] = item.relation
        elif item.relation in known:
            train_items.append(item)
    return Split(
        train=Corpus(role="train", instances=tuple(train_items)),
        test=Corpus(role="test", instances=tuple(test_items)),
        gold=gold,
    )


def long_tail_target(relation_id: int, base: int = LT_BASE_COUNT) -> int:
    """Instances kept for the new relation at position ``relation_id``:
    floor(base / (0.5 * id + 1))."""
    return math.floor(base / (0.5 * relation_id + 1))


def build_fewrel_lt(corpus: Corpus, spec: SplitSpec, seed: int) -> Corpus:
    """Downsample each new relation to its long-tail target count.

    New relations take ids 0..len-1 in ``spec.new_relations`` order. Sampling
    is without replacement, seeded per relation, and preserves corpus order
    within each kept set.
    """
    if not corpus.labeled:
        raise SplitError("long-tail construction requires a labeled corpus")
    items: list[LabeledInstance] = []
    for rel_id, relation in enumerate(spec.new_relations):
        pool = corpus.instances_of(relation)
        target = long_tail_target(rel_id)
        if len(pool) < target:
            raise InsufficientInstances(
                f"relation {relation!r} (id {rel_id}) has {len(pool)} instances, needs {target}"
            )
        rng = derive_rng(seed, "long-tail", relation)
        positions = sorted(rng.sample(range(len(pool)), target))
        items.extend(pool[p] for p in positions)
    return Corpus(role="test", instances=tuple(items))


def write_normalized(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for item in corpus.instances:
            inst = item.instance if isinstance(item, LabeledInstance) else item
            rec = {
                "id": inst.id,
                "text": inst.text,
                "head": inst.head,
                "tail": inst.tail,
                "relation": str(item.relation) if isinstance(item, LabeledInstance) else None,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_normalized(path: str | Path, role: Role | None = None) -> Corpus:
    """Read the line-delimited format back.

    The format does not persist the corpus role; when ``role`` is not given,
    a fully labeled file reads as train and anything else as test.
    """
    path = Path(path)
    items: list[Instance | LabeledInstance] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                inst = Instance(str(rec["id"]), rec["text"], rec["head"], rec["tail"])
                relation = rec["relation"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed line") from exc
            items.append(LabeledInstance(inst, RelationName(relation)) if relation is not None else inst)
    if role is None:
        role = "train" if items and all(isinstance(i, LabeledInstance) for i in items) else "test"
    return Corpus(role=role, instances=tuple(items))


def write_gold(gold: Mapping[str, RelationName], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump({k: str(v) for k, v in gold.items()}, fh, ensure_ascii=False, indent=0, sort_keys=True)
        fh.write("\n")


def read_gold(path: str | Path) -> dict[str, RelationName]:
    with Path(path).open(encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    return {str(k): RelationName(v) for k, v in raw.items()}
