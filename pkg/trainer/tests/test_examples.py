from __future__ import annotations

import pytest

from _corpus import training_corpus
from openrex.data import read_normalized, write_normalized
from openrex.errors import SamplingError
from openrex_trainer import build_examples, build_paired_examples


def test_rp_examples_contain_target():
    corpus = training_corpus()
    examples = build_examples(corpus, "rp", 4, seed=0)
    assert len(examples) == len(corpus)
    for example in examples:
        assert example.target_text in example.demo_relations()
        assert len(example.demos) == 4


def test_rd_examples_exclude_target():
    corpus = training_corpus()
    for example in build_examples(corpus, "rd", 4, seed=0):
        assert example.target_text not in example.demo_relations()
        assert len(example.demos) == 4


def test_examples_never_use_the_instance_itself():
    corpus = training_corpus()
    for example in build_examples(corpus, "rp", 4, seed=1):
        assert all(d[0] != example.instance_text for d in example.demos)


def test_example_count_matches_instances():
    corpus = training_corpus(n_rel=40, per_rel=3)
    subset = build_examples(corpus, "rp", 4, seed=2)[:100]
    assert len(subset) == 100


def test_examples_deterministic():
    corpus = training_corpus()
    a = build_examples(corpus, "rd", 4, seed=9)
    b = build_examples(corpus, "rd", 4, seed=9)
    assert [e.input_text for e in a] == [e.input_text for e in b]
    c = build_examples(corpus, "rd", 4, seed=10)
    assert [e.input_text for e in a] != [e.input_text for e in c]


def test_too_few_relations_raises():
    corpus = training_corpus(n_rel=4)
    with pytest.raises(SamplingError):
        build_examples(corpus, "rd", 4, seed=0)  # needs n relations besides the target


def test_paired_examples_share_target():
    corpus = training_corpus()
    for pair in build_paired_examples(corpus, 4, seed=3):
        assert pair.rp.target_text == pair.rd.target_text
        assert pair.rp.target_text in pair.rp.demo_relations()
        assert pair.rp.target_text not in pair.rd.demo_relations()


def test_examples_from_normalized_file(tmp_path):
    corpus = training_corpus()
    path = tmp_path / "train.jsonl"
    write_normalized(corpus, path)
    loaded = read_normalized(path, role="train")
    examples = build_examples(loaded, "rp", 4, seed=0)
    assert examples == build_examples(corpus, "rp", 4, seed=0)
