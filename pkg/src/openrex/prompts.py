"""Demonstration sampling, prompt rendering, and output parsing.

Two prompt roles share one skeleton. The discoverer (``rd``) sees known
relations and must produce a relation outside the listed ones; the predictor
(``rp``) must pick among the listed ones. The skeletons live in versioned
template files shipped with the package so other components can render
byte-identical prompts from the same files.

Rendering is deterministic: the same demonstration set and test instance
always produce identical bytes. All sampling randomness comes from a
caller-supplied ``random.Random``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

from .domain import Corpus, Instance, LabeledInstance, RelationName
from .errors import SamplingError, UnparseableOutput

TEMPLATE_VERSION = "v1"

_FIELD = re.compile(r"\{(relations|demonstrations|text|head_entity|tail_entity)\}")
_STRIP_CHARS = " \t\r\n\"'`“”‘’.,;:!?()[]{}<>*"

DemoPool = Mapping[RelationName, Sequence[Instance]]


@dataclass(frozen=True)
class DemoSet:
    """An ordered list of demonstrations plus the relations announced in the
    prompt header (always the demo relations, in demo order)."""

    mode: str  # "rd" | "rp"
    demos: tuple[LabeledInstance, ...]
    candidate_relations: tuple[RelationName, ...]

    def __post_init__(self) -> None:
        if self.mode not in ("rd", "rp"):
            raise ValueError(f"unknown demo mode {self.mode!r}")
        relations = tuple(d.relation for d in self.demos)
        if len(set(relations)) != len(relations):
            raise ValueError("demo relations must be pairwise distinct")
        if self.candidate_relations != relations:
            raise ValueError("candidate_relations must equal the demo relations in order")


def template_text(name: str) -> str:
    """Raw contents of a versioned template file (``rd``, ``rp``, ``zero``)."""
    ref = resources.files("openrex").joinpath(f"templates/{name}_{TEMPLATE_VERSION}.txt")
    return ref.read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _segments(name: str) -> tuple[tuple[str, str], ...]:
    # Compile the template once into (kind, value) segments so user text is
    # never re-scanned for placeholders.
    text = template_text(name).rstrip("\n")
    out: list[tuple[str, str]] = []
    pos = 0
    for match in _FIELD.finditer(text):
        if match.start() > pos:
            out.append(("lit", text[pos : match.start()]))
        out.append(("field", match.group(1)))
        pos = match.end()
    if pos < len(text):
        out.append(("lit", text[pos:]))
    return tuple(out)


def _demo_block(demo: LabeledInstance) -> str:
    inst = demo.instance
    return (
        f"text: {inst.text}\n"
        f"head_entity: {inst.head}\n"
        f"tail_entity: {inst.tail}\n"
        f"relationship: {demo.relation}"
    )


def render_prompt(demos: DemoSet, test: Instance) -> str:
    """Instantiate the template for this demo set and test instance.

    An empty demo set renders the zero-shot variant, which carries no
    candidate list and no demonstration section.
    """
    name = demos.mode if demos.demos else "zero"
    values = {
        "relations": ", ".join(demos.candidate_relations),
        "demonstrations": "\n".join(_demo_block(d) for d in demos.demos),
        "text": test.text,
        "head_entity": test.head,
        "tail_entity": test.tail,
    }
    parts = []
    for kind, value in _segments(name):
        parts.append(value if kind == "lit" else values[value])
    return "".join(parts)


def parse_generated_relation(raw: str) -> RelationName:
    """Recover a canonical relation from generated text.

    Takes the first non-empty line, strips surrounding quotes and
    punctuation, and canonicalizes. Raises UnparseableOutput when nothing
    usable remains.
    """
    for line in raw.splitlines():
        candidate = line.strip(_STRIP_CHARS)
        if candidate:
            try:
                return RelationName(candidate)
            except Exception as exc:
                raise UnparseableOutput(f"no relation in line {line!r}") from exc
    raise UnparseableOutput(f"no relation in output {raw[:80]!r}")


def sample_rd_demos(
    train: Corpus,
    n: int,
    rng,
    exclude: RelationName | None = None,
) -> DemoSet:
    """n distinct known relations, one uniformly drawn instance each.

    ``exclude`` (the training target, when building discoverer training
    inputs) never appears among the demo relations.
    """
    banned = RelationName(exclude) if exclude is not None else None
    relations = [r for r in train.relations() if r != banned]
    if len(relations) < n:
        raise SamplingError(f"need {n} relations, pool offers {len(relations)}")
    chosen = rng.sample(relations, n)
    demos = []
    for rel in chosen:
        pool = train.instances_of(rel)
        if not pool:
            raise SamplingError(f"relation {rel!r} has no instances")
        demos.append(pool[rng.randrange(len(pool))])
    return DemoSet("rd", tuple(demos), tuple(d.relation for d in demos))


def sample_rp_demos(pool: DemoPool, target: RelationName, n: int, rng) -> DemoSet:
    """One instance of ``target`` plus one instance each of n-1 distinct other
    relations, in shuffled order."""
    target = RelationName(target)
    if not pool.get(target):
        raise SamplingError(f"target relation {target!r} missing from pool")
    others = [r for r in pool if r != target and pool[r]]
    if len(others) < n - 1:
        raise SamplingError(f"need {n - 1} non-target relations, pool offers {len(others)}")
    relations = [target] + rng.sample(others, n - 1)
    return _pool_demoset(pool, relations, rng)


def demoset_for_relations(pool: DemoPool, relations: Sequence[RelationName], rng) -> DemoSet:
    """Predictor-mode demo set over an explicit candidate relation list."""
    rels = [RelationName(r) for r in relations]
    for rel in rels:
        if not pool.get(rel):
            raise SamplingError(f"relation {rel!r} has no demo instances")
    return _pool_demoset(pool, rels, rng)


def _pool_demoset(pool: DemoPool, relations: list[RelationName], rng) -> DemoSet:
    demos = []
    for rel in relations:
        instances = pool[rel]
        demos.append(LabeledInstance(instances[rng.randrange(len(instances))], rel))
    rng.shuffle(demos)
    return DemoSet("rp", tuple(demos), tuple(d.relation for d in demos))


def auto_batch_count(num_discovered: int, n: int) -> int:
    """Smallest batch count whose n-1 slots per batch can cover every other
    discovered relation."""
    if num_discovered <= 1:
        return 1
    if n < 2:
        raise SamplingError("batches need at least one non-candidate slot (n >= 2)")
    return -(-(num_discovered - 1) // (n - 1))


def sample_denoise_batches(
    candidate: RelationName,
    discovered: Sequence[RelationName],
    pool: DemoPool,
    n: int,
    rng,
    d: int | None = None,
) -> list[DemoSet]:
    """d predictor-mode batches, each containing ``candidate``, whose other
    relations jointly cover every discovered relation besides the candidate.

    Short batches are padded with repeats from other groups so each batch
    carries n demos whenever enough relations exist; padding never changes
    the union.
    """
    candidate = RelationName(candidate)
    ordered = [RelationName(r) for r in discovered]
    if candidate not in ordered:
        raise SamplingError(f"candidate {candidate!r} not among discovered relations")
    others = [r for r in ordered if r != candidate]
    for rel in (candidate, *others):
        if not pool.get(rel):
            raise SamplingError(f"relation {rel!r} has no demo instances")
    m = len(others)
    if m and n < 2:
        raise SamplingError("cannot cover other relations with n < 2")
    if d is None:
        d = auto_batch_count(len(ordered), n) if m else 1
    if d < 1 or d * (n - 1) < m:
        raise SamplingError(f"d={d} batches of {n - 1} slots cannot cover {m} relations")

    order = rng.sample(others, m) if m else []
    batches: list[DemoSet] = []
    for i in range(d):
        group = list(order[i::d])
        want = min(n - 1, m)
        spare = [r for r in others if r not in group]
        while len(group) < want and spare:
            pick = spare[rng.randrange(len(spare))]
            spare.remove(pick)
            group.append(pick)
        batches.append(_pool_demoset(pool, [candidate] + group, rng))
    return batches
