from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from _builders import make_labeled_pool, make_train_corpus
from openrex.domain import Instance, LabeledInstance, RelationName
from openrex.errors import SamplingError, UnparseableOutput
from openrex.prompts import (
    DemoSet,
    auto_batch_count,
    demoset_for_relations,
    parse_generated_relation,
    render_prompt,
    sample_denoise_batches,
    sample_rd_demos,
    sample_rp_demos,
)

FIXTURES = Path(__file__).parent / "fixtures"

TEST_INSTANCE = Instance("q1", "Curie was born in Warsaw .", "Curie", "Warsaw")


def _demoset(mode, rows):
    demos = tuple(
        LabeledInstance(Instance(f"d{i}", text, head, tail), RelationName(rel))
        for i, (text, head, tail, rel) in enumerate(rows)
    )
    return DemoSet(mode, demos, tuple(d.relation for d in demos))


def test_render_rp_matches_golden_fixture():
    demos = _demoset(
        "rp", [("Obama was born in Honolulu .", "Obama", "Honolulu", "place of birth")]
    )
    expected = (FIXTURES / "prompt_rp_1demo.txt").read_bytes()
    assert render_prompt(demos, TEST_INSTANCE).encode("utf-8") == expected


def test_render_rd_matches_golden_fixture():
    demos = _demoset(
        "rd",
        [
            ("Paris is the capital of France .", "Paris", "France", "capital of"),
            ("Marie married Pierre in 1895 .", "Marie", "Pierre", "spouse"),
        ],
    )
    expected = (FIXTURES / "prompt_rd_2demo.txt").read_bytes()
    assert render_prompt(demos, TEST_INSTANCE).encode("utf-8") == expected


def test_render_zero_shot_matches_golden_fixture():
    demos = DemoSet("rp", (), ())
    expected = (FIXTURES / "prompt_zero.txt").read_bytes()
    assert render_prompt(demos, TEST_INSTANCE).encode("utf-8") == expected
    assert "Demonstrations:" not in render_prompt(demos, TEST_INSTANCE)


def test_render_four_demo_blocks_in_order():
    rows = [(f"sentence {i} .", f"h{i}", f"t{i}", f"rel {i}") for i in range(4)]
    text = render_prompt(_demoset("rp", rows), TEST_INSTANCE)
    assert text.count("\ntext: ") == 5  # four demo blocks plus the test block
    assert sum(text.count(f"relationship: rel {i}") for i in range(4)) == 4
    positions = [text.index(f"relationship: rel {i}") for i in range(4)]
    assert positions == sorted(positions)
    assert text.endswith("relationship:")


def test_render_is_deterministic():
    demos = _demoset("rp", [("a sentence .", "a", "b", "r one")])
    assert render_prompt(demos, TEST_INSTANCE) == render_prompt(demos, TEST_INSTANCE)


def test_demoset_rejects_duplicate_relations():
    with pytest.raises(ValueError):
        _demoset("rp", [("s .", "a", "b", "same"), ("s2 .", "c", "d", "same")])


def test_demoset_rejects_mismatched_header():
    demo = LabeledInstance(Instance("d0", "s .", "a", "b"), RelationName("x"))
    with pytest.raises(ValueError):
        DemoSet("rp", (demo,), (RelationName("y"),))


def test_parse_generated_relation():
    assert parse_generated_relation("place of birth\nExplanation: because") == "place of birth"
    assert parse_generated_relation('"Director".') == "director"
    assert parse_generated_relation("  spouse  \n") == "spouse"
    with pytest.raises(UnparseableOutput):
        parse_generated_relation("\n\n")
    with pytest.raises(UnparseableOutput):
        parse_generated_relation("...")


def test_sample_rd_demos_basic():
    train = make_train_corpus(n_rel=8)
    demos = sample_rd_demos(train, 4, random.Random(0))
    assert demos.mode == "rd"
    assert len(demos.demos) == 4
    assert len(set(demos.candidate_relations)) == 4


def test_sample_rd_demos_excludes_relation():
    train = make_train_corpus(n_rel=5)
    excluded = train.relations()[0]
    for seed in range(200):
        demos = sample_rd_demos(train, 4, random.Random(seed), exclude=excluded)
        assert excluded not in demos.candidate_relations


def test_sample_rd_demos_too_few_relations():
    train = make_train_corpus(n_rel=3)
    with pytest.raises(SamplingError):
        sample_rd_demos(train, 4, random.Random(0))


def _pool_map(corpus):
    return {rel: [li.instance for li in corpus.instances_of(rel)] for rel in corpus.relations()}


def test_sample_rp_demos_contains_target():
    pool = _pool_map(make_labeled_pool(n_rel=10))
    target = RelationName("relation 03")
    for seed in range(200):
        demos = sample_rp_demos(pool, target, 4, random.Random(seed))
        assert target in demos.candidate_relations
        assert len(demos.demos) == 4


def test_sample_rp_demos_forced_pair():
    pool = _pool_map(make_labeled_pool(n_rel=2))
    demos = sample_rp_demos(pool, RelationName("relation 00"), 2, random.Random(1))
    assert set(demos.candidate_relations) == {"relation 00", "relation 01"}


def test_sample_rp_demos_missing_target():
    pool = _pool_map(make_labeled_pool(n_rel=3))
    with pytest.raises(SamplingError):
        sample_rp_demos(pool, RelationName("absent"), 2, random.Random(0))


def test_auto_batch_count():
    assert auto_batch_count(10, 4) == 3
    assert auto_batch_count(40, 4) == 13
    assert auto_batch_count(4, 4) == 1
    assert auto_batch_count(1, 4) == 1


def test_denoise_batches_cover_all_other_relations():
    pool = _pool_map(make_labeled_pool(n_rel=10))
    candidate = RelationName("relation 00")
    batches = sample_denoise_batches(candidate, list(pool), pool, 4, random.Random(3))
    assert len(batches) == 3
    union = set()
    for batch in batches:
        assert candidate in batch.candidate_relations
        union.update(r for r in batch.candidate_relations if r != candidate)
    assert union == set(pool) - {candidate}


def test_denoise_batches_single_batch_when_discovered_equals_n():
    pool = _pool_map(make_labeled_pool(n_rel=4))
    candidate = RelationName("relation 01")
    batches = sample_denoise_batches(candidate, list(pool), pool, 4, random.Random(0))
    assert len(batches) == 1
    assert set(batches[0].candidate_relations) == set(pool)


def test_denoise_batches_uncoverable():
    pool = _pool_map(make_labeled_pool(n_rel=3))
    with pytest.raises(SamplingError):
        sample_denoise_batches(
            RelationName("relation 00"), list(pool), pool, 4, random.Random(0), d=0
        )


def test_demoset_for_relations_uses_exact_list():
    pool = _pool_map(make_labeled_pool(n_rel=6))
    rels = [RelationName("relation 02"), RelationName("relation 05")]
    demos = demoset_for_relations(pool, rels, random.Random(0))
    assert set(demos.candidate_relations) == set(rels)


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(2, 8),
    total=st.integers(2, 60),
    seed=st.integers(0, 10_000),
)
def test_denoise_batches_property(n, total, seed):
    pool = _pool_map(make_labeled_pool(n_rel=total, per_rel=2))
    relations = list(pool)
    rng = random.Random(seed)
    candidate = relations[rng.randrange(len(relations))]
    batches = sample_denoise_batches(candidate, relations, pool, n, rng)
    assert len(batches) == auto_batch_count(total, n)
    union = set()
    for batch in batches:
        assert candidate in batch.candidate_relations
        assert len(set(batch.candidate_relations)) == len(batch.candidate_relations)
        union.update(batch.candidate_relations)
    assert union - {candidate} == set(relations) - {candidate}
