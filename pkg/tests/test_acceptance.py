"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``. The heavyweight
behavioral criteria (7, 8, 9) share one set of five seeded simulator runs.
"""

from __future__ import annotations

import math
import random
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from _builders import make_labeled_pool, make_test_corpus, make_train_corpus
from _oracles import brute_aligned_macro, brute_ari, brute_b_cubed, brute_v_measure
from openrex.backend import SimulatedOracle, SimulatedOracleConfig
from openrex.data import SplitSpec, build_fewrel_lt, long_tail_target, split_known_new
from openrex.domain import (
    Corpus,
    Instance,
    LabeledInstance,
    PipelineConfig,
    RelationName,
)
from openrex.infer import run_pipeline
from openrex.lossmath import (
    DistributionSequence,
    TargetTokens,
    sequence_ce,
    sequence_kl,
    temperature_soften,
)
from openrex.metrics import (
    accuracy,
    aligned_macro_prf,
    ari,
    b_cubed,
    pass_at_k,
    v_measure,
)
from openrex.prompts import (
    DemoSet,
    auto_batch_count,
    render_prompt,
    sample_denoise_batches,
    sample_rd_demos,
    sample_rp_demos,
)
from openrex.runio import write_run_artifacts

FIXTURES = Path(__file__).parent / "fixtures"


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[criterion {number:02d}] FAIL  {description}")
        raise
    print(f"[criterion {number:02d}] PASS  {description}")


# --- criterion 1 -----------------------------------------------------------


def _random_partition(rng: random.Random):
    n = rng.randint(1, 30)
    p_labels = rng.randint(1, 5)
    g_labels = rng.randint(1, 5)
    pred = {f"i{j}": f"p{rng.randrange(p_labels)}" for j in range(n)}
    gold = {f"i{j}": f"g{rng.randrange(g_labels)}" for j in range(n)}
    return pred, gold


def test_criterion_1_metric_oracle_equivalence():
    with criterion(1, "metric families match brute force on 1000 partitions at 1e-9, < 1 min"):
        rng = random.Random(20_240_401)
        start = time.monotonic()
        for _ in range(1000):
            pred, gold = _random_partition(rng)
            assert b_cubed(pred, gold) == pytest.approx(brute_b_cubed(pred, gold), abs=1e-9)
            assert v_measure(pred, gold) == pytest.approx(brute_v_measure(pred, gold), abs=1e-9)
            assert ari(pred, gold) == pytest.approx(brute_ari(pred, gold), abs=1e-9)
            _, admissible = brute_aligned_macro(pred, gold)
            got = tuple(round(v, 12) for v in aligned_macro_prf(pred, gold))
            assert any(
                all(abs(a - b) <= 1e-9 for a, b in zip(got, triple)) for triple in admissible
            )
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


# --- criterion 2 -----------------------------------------------------------


def test_criterion_2_metric_fixed_points():
    with criterion(2, "identical partitions score exactly 1; single cluster scores 0"):
        labels = ["a", "a", "b", "c", "c", "c"]
        pred = {f"i{j}": lab for j, lab in enumerate(labels)}
        gold = dict(pred)
        assert b_cubed(pred, gold)[2] == 1.0
        assert v_measure(pred, gold)[2] == 1.0
        assert ari(pred, gold) == 1.0
        assert aligned_macro_prf(pred, gold)[2] == 1.0

        single = {k: "everything" for k in pred}
        assert abs(ari(single, gold)) <= 1e-12
        assert abs(v_measure(single, gold)[0]) <= 1e-12


# --- criterion 3 -----------------------------------------------------------


def test_criterion_3_loss_math():
    with criterion(3, "loss hand values, KL >= 0, argmax-preserving temperature"):
        p = DistributionSequence(np.array([[0.3, 0.7], [0.6, 0.4]]))
        assert abs(sequence_kl(p, p)) <= 1e-12

        teacher = DistributionSequence(np.array([[0.5, 0.5]]))
        student = DistributionSequence(np.array([[0.9, 0.1]]))
        assert sequence_kl(teacher, student) == pytest.approx(0.5108, abs=1e-4)
        assert sequence_kl(teacher, student) == pytest.approx(0.5108256237659907, abs=1e-6)

        ce_dist = DistributionSequence(np.array([[0.5, 0.5], [0.25, 0.75]]))
        assert sequence_ce(ce_dist, TargetTokens((0, 0))) == pytest.approx(
            1.0397207708399179, abs=1e-6
        )

        rng = np.random.default_rng(17)
        for _ in range(1000):
            vocab = int(rng.integers(2, 9))
            steps = int(rng.integers(1, 4))
            raw_p = rng.uniform(0.01, 1.0, size=(steps, vocab))
            raw_q = rng.uniform(0.01, 1.0, size=(steps, vocab))
            dp = DistributionSequence(raw_p / raw_p.sum(axis=1, keepdims=True))
            dq = DistributionSequence(raw_q / raw_q.sum(axis=1, keepdims=True))
            assert sequence_kl(dp, dq) >= -1e-12

        for _ in range(1000):
            row = rng.normal(size=(1, int(rng.integers(2, 12))))
            tau = float(rng.uniform(0.05, 20.0))
            soft = temperature_soften(row, tau)
            assert soft.steps[0].argmax() == row[0].argmax()
            assert abs(soft.steps[0].sum() - 1.0) <= 1e-9


# --- criterion 4 -----------------------------------------------------------


def test_criterion_4_sampling_constraints():
    with criterion(4, "demo sampling constraints hold over 1000 seeded cases each"):
        train = make_train_corpus(n_rel=9, per_rel=3)
        excluded = train.relations()[2]
        for seed in range(1000):
            demos = sample_rd_demos(train, 4, random.Random(seed), exclude=excluded)
            assert excluded not in demos.candidate_relations

        pool_corpus = make_labeled_pool(n_rel=10, per_rel=3)
        pool = {
            rel: [li.instance for li in pool_corpus.instances_of(rel)]
            for rel in pool_corpus.relations()
        }
        target = pool_corpus.relations()[4]
        for seed in range(1000):
            demos = sample_rp_demos(pool, target, 4, random.Random(seed))
            assert target in demos.candidate_relations

        pools_by_size: dict[int, dict] = {}
        rng = random.Random(99)
        for case in range(1000):
            n = rng.randint(2, 8)
            total = rng.randint(max(2, n), 60)
            if total not in pools_by_size:
                corpus = make_labeled_pool(n_rel=total, per_rel=2, prefix=f"c{total}-")
                pools_by_size[total] = {
                    rel: [li.instance for li in corpus.instances_of(rel)]
                    for rel in corpus.relations()
                }
            pool_n = pools_by_size[total]
            relations = list(pool_n)
            candidate = relations[rng.randrange(total)]
            batches = sample_denoise_batches(candidate, relations, pool_n, n, random.Random(case))
            assert len(batches) == auto_batch_count(total, n)
            assert auto_batch_count(total, n) == math.ceil((total - 1) / (n - 1))
            union = set()
            for batch in batches:
                assert candidate in batch.candidate_relations
                union.update(batch.candidate_relations)
            assert union - {candidate} == set(relations) - {candidate}


# --- criterion 5 -----------------------------------------------------------


def test_criterion_5_prompt_byte_exactness():
    with criterion(5, "rendered prompts equal the golden template fixtures byte-for-byte"):
        test_instance = Instance("q1", "Curie was born in Warsaw .", "Curie", "Warsaw")
        rp_demo = LabeledInstance(
            Instance("d1", "Obama was born in Honolulu .", "Obama", "Honolulu"),
            RelationName("place of birth"),
        )
        rp = DemoSet("rp", (rp_demo,), (rp_demo.relation,))
        assert render_prompt(rp, test_instance).encode("utf-8") == (
            FIXTURES / "prompt_rp_1demo.txt"
        ).read_bytes()

        rd_demos = (
            LabeledInstance(
                Instance("d2", "Paris is the capital of France .", "Paris", "France"),
                RelationName("capital of"),
            ),
            LabeledInstance(
                Instance("d3", "Marie married Pierre in 1895 .", "Marie", "Pierre"),
                RelationName("spouse"),
            ),
        )
        rd = DemoSet("rd", rd_demos, tuple(d.relation for d in rd_demos))
        assert render_prompt(rd, test_instance).encode("utf-8") == (
            FIXTURES / "prompt_rd_2demo.txt"
        ).read_bytes()

        zero = DemoSet("rp", (), ())
        assert render_prompt(zero, test_instance).encode("utf-8") == (
            FIXTURES / "prompt_zero.txt"
        ).read_bytes()
        prompt = render_prompt(rp, test_instance)
        assert prompt.startswith("You are an expert in relationship extraction.")


# --- criterion 6 -----------------------------------------------------------


def test_criterion_6_pipeline_determinism(tmp_path):
    with criterion(6, "two identical simulator runs write byte-identical artifacts"):
        test, gold = make_test_corpus(n_rel=6, per_rel=3)
        train = make_train_corpus(n_rel=6, per_rel=3)
        dirs = []
        for run_index in (1, 2):
            cfg = PipelineConfig(n=4, k=3, t=3, seed=31, max_in_flight=4)
            oracle = SimulatedOracle(
                SimulatedOracleConfig(
                    gold=gold,
                    p_hit_target_in_demos=0.9,
                    p_hit_otherwise=0.5,
                    confusion="novel",
                    seed=31,
                )
            )
            result = run_pipeline(test, train, cfg, oracle)
            out = tmp_path / f"run{run_index}"
            write_run_artifacts(result, out)
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == sorted(p.name for p in dirs[1].iterdir())
        for name in names:
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


# --- criteria 7, 8, 9 (shared simulator runs) -------------------------------

GAIN_SEEDS = (101, 202, 303, 404, 505)


def _criterion7_corpora():
    test_items, gold = [], {}
    for r in range(40):
        rel = RelationName(f"relation {r:02d}")
        for j in range(25):
            iid = f"g{r:02d}-{j:02d}"
            test_items.append(
                Instance(iid, f"observed pattern {r} case {j}", f"h{r}-{j}", f"t{r}-{j}")
            )
            gold[iid] = rel
    train_items = []
    for r in range(10):
        rel = RelationName(f"known {r:02d}")
        for j in range(5):
            train_items.append(
                LabeledInstance(
                    Instance(f"k{r:02d}-{j:02d}", f"known pattern {r} case {j}", f"kh{r}{j}", f"kt{r}{j}"),
                    rel,
                )
            )
    return (
        Corpus(role="test", instances=tuple(test_items)),
        Corpus(role="train", instances=tuple(train_items)),
        gold,
    )


@pytest.fixture(scope="module")
def gain_runs():
    test, train, gold = _criterion7_corpora()
    gold_str = {k: str(v) for k, v in gold.items()}
    runs = {}
    start = time.monotonic()
    for seed in GAIN_SEEDS:
        oracle_cfg = SimulatedOracleConfig(
            gold=gold,
            p_hit_target_in_demos=0.9,
            p_hit_otherwise=0.5,
            confusion="novel",
            seed=seed,
        )
        full = run_pipeline(
            test, train, PipelineConfig(n=4, k=3, t=3, seed=seed), SimulatedOracle(oracle_cfg)
        )
        single = run_pipeline(
            test,
            train,
            PipelineConfig(n=4, k=1, t=3, seed=seed),
            SimulatedOracle(oracle_cfg),
            stop_after="discovery",
        )
        final_acc = accuracy(
            {k: str(v) if v else "abstained" for k, v in full.final.items()}, gold_str
        )
        disc_acc = accuracy(
            {k: str(v) if v else "abstained" for k, v in single.final.items()}, gold_str
        )
        entries = list(full.denoising.reliable.entries())
        purity = (
            sum(1 for rel, iid in entries if gold[iid] == rel) / len(entries)
            if entries
            else None
        )
        attempts = full.discovery.relations_by_instance()
        single_attempts = single.discovery.relations_by_instance()
        runs[seed] = {
            "final_acc": final_acc,
            "disc_acc": disc_acc,
            "purity": purity,
            "pass3": pass_at_k(attempts, gold),
            "pass1": pass_at_k(single_attempts, gold),
        }
    runs["elapsed"] = time.monotonic() - start
    return runs


def test_criterion_7_self_correction_gain(gain_runs):
    with criterion(7, "final accuracy beats K=1 discovery by >= 0.10 on all five seeds, < 5 min"):
        for seed in GAIN_SEEDS:
            row = gain_runs[seed]
            gain = row["final_acc"] - row["disc_acc"]
            print(
                f"    seed {seed}: final {row['final_acc']:.3f}  discovery(K=1) "
                f"{row['disc_acc']:.3f}  gain {gain:+.3f}"
            )
            assert gain >= 0.10, f"seed {seed} gain {gain:.3f}"
        assert gain_runs["elapsed"] < 300.0, f"took {gain_runs['elapsed']:.0f}s"


def test_criterion_8_denoising_purity(gain_runs):
    with criterion(8, "reliable-set purity >= raw discovery accuracy on every seed"):
        for seed in GAIN_SEEDS:
            row = gain_runs[seed]
            assert row["purity"] is not None, f"seed {seed}: empty reliable set"
            assert row["purity"] >= row["disc_acc"], (
                f"seed {seed}: purity {row['purity']:.3f} < discovery {row['disc_acc']:.3f}"
            )


def test_criterion_9_pass_at_k_monotonicity(gain_runs):
    with criterion(9, "pass@3 >= pass@1 on every seed"):
        for seed in GAIN_SEEDS:
            row = gain_runs[seed]
            assert row["pass3"] >= row["pass1"], (
                f"seed {seed}: pass@3 {row['pass3']:.3f} < pass@1 {row['pass1']:.3f}"
            )


# --- criterion 10 -----------------------------------------------------------


def _balanced_corpus(n_rel: int, per_rel: int, prefix: str) -> Corpus:
    items = []
    for r in range(n_rel):
        rel = RelationName(f"{prefix} {r:02d}")
        for j in range(per_rel):
            items.append(
                LabeledInstance(
                    Instance(f"{prefix}{r:02d}-{j}", f"text {r} {j}", "h", "t"), rel
                )
            )
    return Corpus(role="train", instances=tuple(items))


def test_criterion_10_data_construction():
    with criterion(10, "long-tail counts match the formula; splits are disjoint on all three configurations"):
        corpus = _balanced_corpus(80, 700, "fw")
        relations = corpus.relations()
        spec = SplitSpec(relations[:40], relations[40:])
        lt = build_fewrel_lt(corpus, spec, seed=5)
        counts = {rel: len(ids) for rel, ids in lt.relation_index.items()}
        for rel_id, rel in enumerate(spec.new_relations):
            assert counts[rel] == math.floor(700 / (0.5 * rel_id + 1))
        assert long_tail_target(0) == 700
        assert long_tail_target(2) == 350
        assert long_tail_target(38) == 35
        assert long_tail_target(39) == 34

        split = split_known_new(corpus, spec)
        assert set(split.train.relations()).isdisjoint(set(split.gold.values()))
        assert len(split.train.relations()) == 40
        assert len(set(split.gold.values())) == 40

        tacred_like = _balanced_corpus(41, 5, "tc")
        tac_rel = tacred_like.relations()
        tac_split = split_known_new(tacred_like, SplitSpec(tac_rel[:20], tac_rel[20:]))
        assert set(tac_split.train.relations()).isdisjoint(set(tac_split.gold.values()))
        assert len(tac_split.train.relations()) == 20
        assert len(set(tac_split.gold.values())) == 21

        lt_train = Corpus(
            role="train",
            instances=tuple(
                item
                for item in corpus.instances
                if item.relation in set(spec.known_relations)
            )
            + lt.instances,
        )
        lt_split = split_known_new(lt_train, spec)
        assert set(lt_split.train.relations()).isdisjoint(set(lt_split.gold.values()))
        assert len(lt_split.gold) == sum(
            math.floor(700 / (0.5 * i + 1)) for i in range(40)
        )
