"""Preliminary-study harness: how demonstration composition moves accuracy.

Runs three settings over a labeled pool for a grid of demonstration counts:
no demonstrations at all, demonstrations excluding the instance's relation,
and demonstrations including it. Against the simulator this validates the
harness structure; against a served model it reproduces the study shape.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backend import GenerationRequest, TextBackend
from .domain import Corpus, PipelineConfig, RelationName
from .errors import BackendError, SamplingError, UnparseableOutput
from .infer import _map_ordered
from .prompts import DemoSet, parse_generated_relation, render_prompt, sample_rp_demos
from .seeding import SeedStream

SETTINGS = ("no_demos", "demos_without_target", "demos_with_target")


@dataclass(frozen=True)
class ProbeRow:
    setting: str
    demo_count: int
    instances: int
    hits: int

    @property
    def accuracy(self) -> float:
        return self.hits / self.instances if self.instances else 0.0

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "demo_count": self.demo_count,
            "instances": self.instances,
            "hits": self.hits,
            "accuracy": self.accuracy,
        }


def _demoset(
    pool_map, setting: str, gold: RelationName, count: int, rng
) -> DemoSet:
    if setting == "no_demos":
        return DemoSet("rp", (), ())
    if setting == "demos_with_target":
        return sample_rp_demos(pool_map, gold, count, rng)
    others = {r: v for r, v in pool_map.items() if r != gold}
    if len(others) < count:
        raise SamplingError(f"need {count} non-target relations, pool offers {len(others)}")
    first = rng.sample(list(others), 1)[0]
    return sample_rp_demos(others, first, count, rng)


def run_probe(
    pool: Corpus,
    demo_counts: list[int],
    cfg: PipelineConfig,
    backend: TextBackend,
    limit: int | None = None,
) -> list[ProbeRow]:
    if not pool.labeled:
        raise SamplingError("the probe needs a labeled evaluation pool")
    items = list(pool.instances)[: limit or len(pool.instances)]
    pool_map = {rel: [li.instance for li in pool.instances_of(rel)] for rel in pool.relations()}
    stream = SeedStream(cfg.seed)

    jobs = [
        (item, setting, count)
        for setting in SETTINGS
        for count in demo_counts
        for item in items
    ]

    def ask(job) -> tuple[str, int, bool]:
        item, setting, count = job
        inst, gold = item.instance, item.relation
        rng = stream.child("probe", setting, count, inst.id).rng()
        # The test instance itself must never appear as a demonstration.
        view = dict(pool_map)
        own = [x for x in pool_map[gold] if x.id != inst.id]
        if own:
            view[gold] = own
        else:
            del view[gold]
        demos = _demoset(view, setting, gold, count, rng)
        request = GenerationRequest(
            prompt=render_prompt(demos, inst),
            max_tokens=cfg.max_new_tokens,
            tag=f"{inst.id}|probe|{setting}|{count}",
        )
        try:
            hit = parse_generated_relation(backend.generate(request)) == gold
        except (BackendError, UnparseableOutput):
            hit = False
        return setting, count, hit

    results = _map_ordered(ask, jobs, cfg.max_in_flight)
    rows = []
    for setting in SETTINGS:
        for count in demo_counts:
            hits = sum(1 for s, c, hit in results if s == setting and c == count and hit)
            rows.append(ProbeRow(setting, count, len(items), hits))
    return rows
