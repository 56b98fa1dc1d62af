"""Training example construction for the two roles.

Predictor (rp) inputs carry the target relation among their demonstrations;
discoverer (rd) inputs never do. Demonstrations are sampled from the labeled
train corpus only, and an instance is never its own demonstration.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Sequence

from openrex.domain import Corpus, RelationName
from openrex.errors import SamplingError

from .rendering import render

Demo = tuple[str, str, str, str]  # text, head, tail, relation


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    role: str  # "rp" | "rd"
    input_text: str
    target_text: str
    demos: tuple[Demo, ...]
    instance_text: str
    instance_head: str
    instance_tail: str

    def demo_relations(self) -> tuple[str, ...]:
        return tuple(d[3] for d in self.demos)


@dataclass(frozen=True)
class PairedExample:
    """One training instance rendered for both roles, sharing a target."""

    rp: TrainingExample
    rd: TrainingExample

    @property
    def target_text(self) -> str:
        return self.rp.target_text


def _rng_for(seed: int, *parts: object) -> random.Random:
    key = f"{seed}|" + "|".join(str(p) for p in parts)
    return random.Random(int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big"))


def _demo_tuple(labeled) -> Demo:
    inst = labeled.instance
    return (inst.text, inst.head, inst.tail, str(labeled.relation))


def _sample_one(pool: Sequence, rng: random.Random, exclude_id: str) -> Demo:
    usable = [li for li in pool if li.id != exclude_id]
    if not usable:
        raise SamplingError("relation has no demonstration instance besides the example itself")
    return _demo_tuple(usable[rng.randrange(len(usable))])


def _build_demos(corpus: Corpus, item, role: str, n: int, rng: random.Random) -> tuple[Demo, ...]:
    target = item.relation
    relations = list(corpus.relations())
    others = [r for r in relations if r != target]
    if role == "rp":
        if len(others) < n - 1:
            raise SamplingError(f"need {n - 1} non-target relations, corpus has {len(others)}")
        chosen = [target] + rng.sample(others, n - 1)
    elif role == "rd":
        if len(others) < n:
            raise SamplingError(f"need {n} relations besides the target, corpus has {len(others)}")
        chosen = rng.sample(others, n)
    else:
        raise ValueError(f"unknown role {role!r}")
    demos = [_sample_one(corpus.instances_of(rel), rng, item.id) for rel in chosen]
    rng.shuffle(demos)
    return tuple(demos)


def _example(corpus: Corpus, item, role: str, n: int, rng: random.Random) -> TrainingExample:
    demos = _build_demos(corpus, item, role, n, rng)
    inst = item.instance
    return TrainingExample(
        example_id=f"{item.id}:{role}",
        role=role,
        input_text=render(role, demos, inst.text, inst.head, inst.tail),
        target_text=str(item.relation),
        demos=demos,
        instance_text=inst.text,
        instance_head=inst.head,
        instance_tail=inst.tail,
    )


def build_examples(corpus: Corpus, role: str, n: int, seed: int) -> list[TrainingExample]:
    """One example per labeled instance, with role-appropriate demos."""
    if not corpus.labeled:
        raise SamplingError("training examples need a fully labeled corpus")
    return [
        _example(corpus, item, role, n, _rng_for(seed, role, item.id))
        for item in corpus.instances
    ]


def build_paired_examples(corpus: Corpus, n: int, seed: int) -> list[PairedExample]:
    """Both role renderings per instance, for teacher-guided training."""
    if not corpus.labeled:
        raise SamplingError("training examples need a fully labeled corpus")
    pairs = []
    for item in corpus.instances:
        rp = _example(corpus, item, "rp", n, _rng_for(seed, "rp", item.id))
        rd = _example(corpus, item, "rd", n, _rng_for(seed, "rd", item.id))
        pairs.append(PairedExample(rp=rp, rd=rd))
    return pairs
