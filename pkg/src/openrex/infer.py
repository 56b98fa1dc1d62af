"""The three-stage self-correcting inference pipeline.

Stage 1 (discovery) asks the discoverer role for K independent relation
hypotheses per test instance, each with freshly sampled known-relation
demonstrations. Stage 2 (denoising) cross-validates every (instance,
relation) candidate with the predictor role over demonstration batches that
jointly cover all discovered relations, keeping candidates the predictor
consistently confirms; unresolved candidates are retried for T rounds.
Stage 3 (prediction) re-predicts every instance through a candidate
tournament: the winning relation advances, joined by n-1 not-yet-seen
relations, until every discovered relation has been considered.

Determinism: every random choice draws from a stream addressed by
(seed, stage, instance, round, ...), and results are aggregated in corpus
order, never completion order. Identical inputs plus a deterministic backend
give identical outputs at any concurrency level.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .backend import GenerationRequest, TextBackend
from .domain import (
    CandidatePrediction,
    Corpus,
    Instance,
    LabeledInstance,
    PipelineConfig,
    RelationName,
    ReliableSet,
)
from .errors import BackendError, DiscoveryAborted, SamplingError, UnparseableOutput
from .prompts import (
    TEMPLATE_VERSION,
    DemoSet,
    demoset_for_relations,
    parse_generated_relation,
    render_prompt,
    sample_denoise_batches,
    sample_rd_demos,
)
from .seeding import SeedStream

ABSTAINED = "abstained"


def _map_ordered(fn: Callable, items: Sequence, max_in_flight: int) -> list:
    # Order of results always follows `items`, regardless of completion order.
    if max_in_flight <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(fn, items))


def _plain_instances(corpus: Corpus) -> list[Instance]:
    return [
        item.instance if isinstance(item, LabeledInstance) else item
        for item in corpus.instances
    ]


@dataclass(frozen=True)
class DiscoveryAttempt:
    instance_id: str
    attempt_k: int
    relation: RelationName | None
    raw: str | None = None
    error: str | None = None


@dataclass
class DiscoveryResult:
    """Per-instance attempt lists plus the discovered relation universe."""

    attempts: dict[str, list[DiscoveryAttempt]]
    discovered: dict[RelationName, int]
    support_instances: dict[RelationName, list[str]]
    instance_support: dict[RelationName, dict[str, int]]
    failures: int = 0

    def relations_by_instance(self) -> dict[str, list[RelationName]]:
        return {
            iid: [a.relation for a in atts if a.relation is not None]
            for iid, atts in self.attempts.items()
        }

    def candidate_pairs(self) -> list[CandidatePrediction]:
        """Deduplicated (instance, relation) candidates, keeping the earliest
        attempt index for each pair."""
        out: list[CandidatePrediction] = []
        for iid, atts in self.attempts.items():
            seen: set[RelationName] = set()
            for att in atts:
                if att.relation is not None and att.relation not in seen:
                    seen.add(att.relation)
                    out.append(
                        CandidatePrediction(iid, att.relation, "discovery", att.attempt_k, 0)
                    )
        return out

    def first_parsed(self, instance_id: str) -> RelationName | None:
        for att in self.attempts.get(instance_id, []):
            if att.relation is not None:
                return att.relation
        return None


def run_discovery(
    test: Corpus, train: Corpus, cfg: PipelineConfig, backend: TextBackend
) -> DiscoveryResult:
    """K discoverer attempts per test instance, each with an independently
    sampled known-relation demo set.

    Backend failures and unparseable outputs become abstentions; the run
    aborts only when more than half of all attempts fail at the backend.
    """
    instances = _plain_instances(test)
    stream = SeedStream(cfg.seed)
    jobs = [(inst, k) for inst in instances for k in range(1, cfg.k + 1)]

    def attempt(job: tuple[Instance, int]) -> DiscoveryAttempt:
        inst, k = job
        rng = stream.child("discovery", inst.id, k).rng()
        demos = sample_rd_demos(train, cfg.n, rng)
        request = GenerationRequest(
            prompt=render_prompt(demos, inst),
            max_tokens=cfg.max_new_tokens,
            temperature=cfg.temperature_discovery,
            tag=f"{inst.id}|discovery|{k}",
        )
        try:
            raw = backend.generate(request)
        except BackendError as exc:
            return DiscoveryAttempt(inst.id, k, None, None, error=f"backend: {exc}")
        try:
            return DiscoveryAttempt(inst.id, k, parse_generated_relation(raw), raw)
        except UnparseableOutput:
            return DiscoveryAttempt(inst.id, k, None, raw, error="unparseable")

    results = _map_ordered(attempt, jobs, cfg.max_in_flight)
    failures = sum(1 for a in results if a.error and a.error.startswith("backend"))
    if jobs and failures * 2 > len(jobs):
        raise DiscoveryAborted(f"{failures} of {len(jobs)} discovery attempts failed")

    attempts: dict[str, list[DiscoveryAttempt]] = {inst.id: [] for inst in instances}
    discovered: dict[RelationName, int] = {}
    support: dict[RelationName, list[str]] = {}
    inst_support: dict[RelationName, dict[str, int]] = {}
    for att in results:
        attempts[att.instance_id].append(att)
    for inst in instances:
        for att in attempts[inst.id]:
            rel = att.relation
            if rel is None:
                continue
            discovered[rel] = discovered.get(rel, 0) + 1
            ids = support.setdefault(rel, [])
            if inst.id not in inst_support.setdefault(rel, {}):
                ids.append(inst.id)
            inst_support[rel][inst.id] = inst_support[rel].get(inst.id, 0) + 1
    return DiscoveryResult(attempts, discovered, support, inst_support, failures)


@dataclass(frozen=True)
class VerificationTrace:
    instance_id: str
    relation: RelationName
    round: int
    verdicts: tuple[RelationName | None, ...]
    reliable: bool
    note: str | None = None


@dataclass
class DenoisingResult:
    reliable: ReliableSet
    rounds: list[dict]
    traces: list[VerificationTrace]
    skipped: list[dict]
    survivor_relation: dict[str, RelationName]
    resolved_round: dict[str, int] = field(default_factory=dict)


def _verdict_ok(verdicts: Sequence[RelationName | None], relation: RelationName, rule: str) -> bool:
    hits = sum(1 for v in verdicts if v == relation)
    if rule == "majority":
        return hits * 2 > len(verdicts)
    return hits == len(verdicts)


def run_denoising(
    disc: DiscoveryResult, test: Corpus, cfg: PipelineConfig, backend: TextBackend
) -> DenoisingResult:
    """Cross-validate discovery candidates with the predictor role.

    A candidate (instance, relation) is reliable when the predictor's outputs
    over d demonstration batches satisfy the consistency rule (unanimity by
    default). An instance leaves the round loop once one of its relations is
    verified; if several verify in the same round, the one from the earliest
    discovery attempt wins and the others are traced as superseded. Later
    rounds draw demo material preferentially from already-verified instances.
    """
    discovered = list(disc.discovered)
    if not discovered:
        raise SamplingError("denoising requires a non-empty discovered relation set")
    d = cfg.resolve_d(len(discovered))
    by_id = test.by_id()
    stream = SeedStream(cfg.seed)

    candidates = disc.candidate_pairs()
    by_instance: dict[str, list[CandidatePrediction]] = {}
    for cand in candidates:
        by_instance.setdefault(cand.instance_id, []).append(cand)
    instance_order = [iid for iid in disc.attempts if iid in by_instance]

    reliable = ReliableSet()
    traces: list[VerificationTrace] = []
    skipped: list[dict] = []
    survivor: dict[str, RelationName] = {}
    resolved_round: dict[str, int] = {}
    rounds: list[dict] = []
    dead: set[tuple[str, RelationName]] = set()

    for round_index in range(1, cfg.t + 1):
        base_pool: dict[RelationName, list[Instance]] = {}
        member_of: dict[str, list[RelationName]] = {}
        for rel in discovered:
            ids = reliable.instances_of(rel) or disc.support_instances.get(rel, [])
            base_pool[rel] = [by_id[x] for x in ids]
            for x in ids:
                member_of.setdefault(x, []).append(rel)

        jobs: list[tuple[CandidatePrediction, int, GenerationRequest]] = []
        examined: list[CandidatePrediction] = []
        batch_counts: dict[tuple[str, RelationName], int] = {}
        for iid in instance_order:
            if iid in resolved_round:
                continue
            for cand in by_instance[iid]:
                key = (cand.instance_id, cand.relation)
                if key in dead:
                    continue
                pool_view = dict(base_pool)
                for rel in member_of.get(iid, ()):
                    filtered = [inst for inst in base_pool[rel] if inst.id != iid]
                    if filtered:
                        pool_view[rel] = filtered
                    else:
                        del pool_view[rel]
                if cand.relation not in pool_view:
                    dead.add(key)
                    skipped.append(
                        {
                            "instance_id": iid,
                            "relation": str(cand.relation),
                            "round": round_index,
                            "note": "no demo instance besides the candidate itself",
                        }
                    )
                    continue
                coverable = [rel for rel in discovered if rel in pool_view]
                rng = stream.child("denoise", round_index, iid, cand.relation).rng()
                batches = sample_denoise_batches(
                    cand.relation, coverable, pool_view, cfg.n, rng, d=d
                )
                examined.append(cand)
                batch_counts[key] = len(batches)
                for b_index, demoset in enumerate(batches):
                    request = GenerationRequest(
                        prompt=render_prompt(demoset, by_id[iid]),
                        max_tokens=cfg.max_new_tokens,
                        temperature=cfg.temperature_denoise,
                        tag=f"{iid}|denoise|{cand.relation}|{round_index}|{b_index}",
                    )
                    jobs.append((cand, b_index, request))

        def verify(job: tuple[CandidatePrediction, int, GenerationRequest]) -> RelationName | None:
            _, _, request = job
            try:
                return parse_generated_relation(backend.generate(request))
            except (BackendError, UnparseableOutput):
                return None

        outputs = _map_ordered(verify, jobs, cfg.max_in_flight)
        verdicts: dict[tuple[str, RelationName], list[RelationName | None]] = {
            (c.instance_id, c.relation): [None] * batch_counts[(c.instance_id, c.relation)]
            for c in examined
        }
        for (cand, b_index, _), output in zip(jobs, outputs):
            verdicts[(cand.instance_id, cand.relation)][b_index] = output

        confirmed: dict[str, list[CandidatePrediction]] = {}
        for cand in examined:
            key = (cand.instance_id, cand.relation)
            ok = _verdict_ok(verdicts[key], cand.relation, cfg.consistency)
            traces.append(
                VerificationTrace(
                    cand.instance_id, cand.relation, round_index, tuple(verdicts[key]), ok
                )
            )
            if ok:
                confirmed.setdefault(cand.instance_id, []).append(cand)

        for iid in instance_order:
            winners = confirmed.get(iid)
            if not winners:
                continue
            winners.sort(key=lambda c: c.attempt_k)
            chosen = winners[0]
            reliable.add(
                chosen.relation, iid, [v for v in verdicts[(iid, chosen.relation)]]
            )
            survivor[iid] = chosen.relation
            resolved_round[iid] = round_index
            for other in winners[1:]:
                traces.append(
                    VerificationTrace(
                        iid, other.relation, round_index,
                        tuple(verdicts[(iid, other.relation)]), True,
                        note=f"superseded by {chosen.relation}",
                    )
                )
        rounds.append(
            {
                "round": round_index,
                "examined": len(examined),
                "resolved": sum(1 for r in resolved_round.values() if r == round_index),
                "unresolved_instances": [
                    iid for iid in instance_order if iid not in resolved_round
                ],
            }
        )
    return DenoisingResult(reliable, rounds, traces, skipped, survivor, resolved_round)


@dataclass(frozen=True)
class TournamentRound:
    index: int
    candidates: tuple[RelationName, ...]
    raw: str | None
    winner: RelationName
    resolution: str  # "output" | "re-ask" | "retained"


@dataclass(frozen=True)
class FinalPrediction:
    instance_id: str
    relation: RelationName
    rounds: tuple[TournamentRound, ...]
    skipped_relations: tuple[RelationName, ...] = ()


@dataclass
class PredictionStage:
    predictions: list[FinalPrediction]
    fallback_relations: list[RelationName]
    re_asks: int = 0
    retained: int = 0


def run_prediction(
    test: Corpus,
    reliable: ReliableSet,
    disc: DiscoveryResult,
    cfg: PipelineConfig,
    backend: TextBackend,
    survivor_relation: Mapping[str, RelationName] | None = None,
) -> PredictionStage:
    """Tournament re-prediction of every test instance.

    Demo material for each relation comes from its verified instances,
    falling back to its best-supported discovery instance when none
    verified (the fallback is reported). The first candidate set seeds the
    instance's own verified relation when it has one; subsequent rounds pair
    the current winner with n-1 not-yet-seen relations, in a per-instance
    seeded traversal order. Outputs outside the candidate set resolve by
    exact canonical match, then one re-ask, then retention of the previous
    winner.
    """
    discovered = list(disc.discovered)
    survivor_relation = survivor_relation or {}
    stream = SeedStream(cfg.seed)
    by_id = test.by_id()

    material_ids: dict[RelationName, list[str]] = {}
    fallback: list[RelationName] = []
    for rel in discovered:
        ids = reliable.instances_of(rel)
        if not ids:
            counts = disc.instance_support.get(rel, {})
            best = max(counts, key=lambda x: (counts[x], -disc.support_instances[rel].index(x)))
            ids = [best]
            fallback.append(rel)
        material_ids[rel] = ids

    instances = _plain_instances(test)
    stage = PredictionStage(predictions=[], fallback_relations=fallback)

    def predict_one(inst: Instance) -> FinalPrediction:
        order = stream.child("predict-order", inst.id).rng().sample(discovered, len(discovered))
        usable, skipped = [], []
        for rel in order:
            if any(x != inst.id for x in material_ids[rel]):
                usable.append(rel)
            else:
                skipped.append(rel)
        if not usable:
            rel = survivor_relation.get(inst.id) or disc.first_parsed(inst.id) or discovered[0]
            return FinalPrediction(inst.id, rel, (), tuple(skipped))

        seed_rel = survivor_relation.get(inst.id)
        current: list[RelationName] = [seed_rel] if seed_rel in usable else []
        for rel in usable:
            if len(current) >= cfg.n:
                break
            if rel not in current:
                current.append(rel)
        queue = [rel for rel in usable if rel not in current]

        rounds: list[TournamentRound] = []
        winner: RelationName | None = None
        round_index = 0
        while current:
            round_index += 1
            previous = winner
            winner = None
            raw_last: str | None = None
            for retry in (1, 2):
                rng = stream.child("predict", inst.id, round_index, retry).rng()
                pool = {
                    rel: [by_id[x] for x in material_ids[rel] if x != inst.id]
                    for rel in current
                }
                demoset = demoset_for_relations(pool, current, rng)
                request = GenerationRequest(
                    prompt=render_prompt(demoset, inst),
                    max_tokens=cfg.max_new_tokens,
                    temperature=cfg.temperature_predict,
                    tag=f"{inst.id}|predict|{round_index}|{retry}",
                )
                try:
                    raw_last = backend.generate(request)
                    parsed = parse_generated_relation(raw_last)
                except (BackendError, UnparseableOutput):
                    parsed = None
                if parsed is not None and parsed in current:
                    winner = parsed
                    resolution = "output" if retry == 1 else "re-ask"
                    break
            if winner is None:
                if previous is not None:
                    winner = previous
                else:
                    support = disc.discovered
                    winner = max(current, key=lambda r: (support.get(r, 0), -current.index(r)))
                resolution = "retained"
            rounds.append(
                TournamentRound(round_index, tuple(current), raw_last, winner, resolution)
            )
            if not queue:
                break
            take = queue[: cfg.n - 1]
            del queue[: cfg.n - 1]
            current = [winner] + take
        return FinalPrediction(inst.id, winner, tuple(rounds), tuple(skipped))

    stage.predictions = _map_ordered(predict_one, instances, cfg.max_in_flight)
    for pred in stage.predictions:
        for rnd in pred.rounds:
            if rnd.resolution == "re-ask":
                stage.re_asks += 1
            elif rnd.resolution == "retained":
                stage.retained += 1
    return stage


@dataclass
class PipelineResult:
    discovery: DiscoveryResult
    denoising: DenoisingResult | None
    prediction: PredictionStage | None
    final: dict[str, RelationName | None]
    manifest: dict


def run_pipeline(
    test: Corpus,
    train: Corpus,
    cfg: PipelineConfig,
    backend: TextBackend,
    stop_after: str | None = None,
) -> PipelineResult:
    """Compose the three stages and assemble the run manifest.

    ``stop_after`` may be "discovery" or "denoising"; ``cfg.t == 0`` skips
    the denoising stage while still running prediction (all demo material
    then comes from discovery support). Final predictions for truncated runs
    come from the last completed stage: the first parsed discovery attempt,
    or the instance's verified relation when denoising ran.
    """
    if stop_after not in (None, "discovery", "denoising"):
        raise ValueError(f"stop_after must be None, 'discovery' or 'denoising', got {stop_after!r}")
    disc = run_discovery(test, train, cfg, backend)
    instances = _plain_instances(test)

    denoise: DenoisingResult | None = None
    prediction: PredictionStage | None = None
    final: dict[str, RelationName | None]
    if stop_after == "discovery":
        final = {inst.id: disc.first_parsed(inst.id) for inst in instances}
    else:
        empty_universe = not disc.discovered
        if cfg.t > 0 and not empty_universe:
            denoise = run_denoising(disc, test, cfg, backend)
        survivors = denoise.survivor_relation if denoise else {}
        if stop_after == "denoising" or empty_universe:
            final = {
                inst.id: survivors.get(inst.id) or disc.first_parsed(inst.id)
                for inst in instances
            }
        else:
            reliable = denoise.reliable if denoise else ReliableSet()
            prediction = run_prediction(test, reliable, disc, cfg, backend, survivors)
            final = {p.instance_id: p.relation for p in prediction.predictions}

    manifest = {
        "format": "openrex-run-manifest",
        "version": 1,
        "status": "ok",
        "seed": cfg.seed,
        "stop_after": stop_after,
        "templates": {
            "rd": f"rd_{TEMPLATE_VERSION}",
            "rp": f"rp_{TEMPLATE_VERSION}",
            "zero": f"zero_{TEMPLATE_VERSION}",
        },
        "backend": backend.describe(),
        "pipeline": {
            "n": cfg.n,
            "k": cfg.k,
            "t": cfg.t,
            "d": cfg.d,
            "d_resolved": cfg.resolve_d(len(disc.discovered)) if disc.discovered else None,
            "max_in_flight": cfg.max_in_flight,
            "max_new_tokens": cfg.max_new_tokens,
            "temperatures": {
                "discovery": cfg.temperature_discovery,
                "denoise": cfg.temperature_denoise,
                "predict": cfg.temperature_predict,
            },
            "consistency": cfg.consistency,
        },
        "stages": {
            "discovery": {
                "instances": len(instances),
                "attempts": sum(len(a) for a in disc.attempts.values()),
                "abstentions": sum(
                    1 for atts in disc.attempts.values() for a in atts if a.relation is None
                ),
                "backend_failures": disc.failures,
                "discovered_relations": len(disc.discovered),
            },
            "denoising": None
            if denoise is None
            else {
                "rounds": len(denoise.rounds),
                "reliable_entries": len(denoise.reliable),
                "skipped_candidates": len(denoise.skipped),
                "resolved_instances": len(denoise.resolved_round),
            },
            "prediction": None
            if prediction is None
            else {
                "instances": len(prediction.predictions),
                "fallback_relations": [str(r) for r in prediction.fallback_relations],
                "re_asks": prediction.re_asks,
                "retained_rounds": prediction.retained,
            },
        },
    }
    return PipelineResult(disc, denoise, prediction, final, manifest)
