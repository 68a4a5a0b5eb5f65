"""Corpus loaders, generators, and the normalized JSONL format."""

import json
import os

import pytest

from itergen.corpus import (
    CorpusError,
    CountMismatch,
    MissingSplit,
    dsl_grammar,
    generate_card_corpus,
    generate_synthetic_corpus,
    load_corpus,
    load_hearthstone,
    make_splits,
    save_corpus,
)
from itergen.harness import run_tests
from itergen.pycode import grammar_from_corpus, parse_to_ast

CARD_IN = [
    "Ancient Watcher NAME_END 4 ATK_END 5 DEF_END 2 COST_END minion TYPE_END RACE_END",
    "River Guard NAME_END 2 ATK_END 3 DEF_END 1 COST_END minion TYPE_END beast RACE_END",
]
CARD_OUT = [
    "class AncientWatcher:\u00a7    def __init__(self):\u00a7        self.cost = 2",
    "class RiverGuard:\u00a7    def __init__(self):\u00a7        self.cost = 1",
]


@pytest.fixture
def hs_dir(tmp_path):
    for split, k in (("train", 2), ("dev", 1), ("test", 1)):
        with open(tmp_path / f"{split}_hs.in", "w") as fh:
            fh.write("\n".join(CARD_IN[:k]) + "\n")
        with open(tmp_path / f"{split}_hs.out", "w") as fh:
            fh.write("\n".join(CARD_OUT[:k]) + "\n")
    return str(tmp_path)


def test_load_hearthstone_decodes_markers(hs_dir):
    splits = load_hearthstone(hs_dir)
    assert set(splits) == {"train", "dev", "test"}
    code = splits["train"].records[0].code
    assert "class AncientWatcher:" in code.splitlines()[0]
    assert code.splitlines()[1].startswith("    def __init__")
    parse_to_ast(code, grammar_from_corpus([code]))  # decoded code parses


def test_load_hearthstone_preserves_attrs(hs_dir):
    splits = load_hearthstone(hs_dir)
    attrs = splits["train"].records[0].attrs()
    assert attrs["name"] == "Ancient Watcher"
    assert attrs["cost"] == "2"
    assert attrs["type"] == "minion"


def test_load_hearthstone_missing_split(tmp_path):
    with pytest.raises(MissingSplit):
        load_hearthstone(str(tmp_path))


def test_load_hearthstone_count_mismatch(hs_dir):
    with pytest.raises(CountMismatch):
        load_hearthstone(hs_dir, expected_counts={"train": 533, "dev": 66, "test": 66})


def test_load_hearthstone_accepts_valid_alias(tmp_path):
    for stem, k in (("train", 2), ("valid", 1), ("test", 1)):
        with open(tmp_path / f"{stem}_hs.in", "w") as fh:
            fh.write("\n".join(CARD_IN[:k]) + "\n")
        with open(tmp_path / f"{stem}_hs.out", "w") as fh:
            fh.write("\n".join(CARD_OUT[:k]) + "\n")
    splits = load_hearthstone(str(tmp_path))
    assert len(splits["dev"]) == 1


def test_load_hearthstone_dcnl_scheme(tmp_path):
    for split in ("train", "dev", "test"):
        with open(tmp_path / f"{split}_hs.in", "w") as fh:
            fh.write(CARD_IN[0] + "\n")
        with open(tmp_path / f"{split}_hs.out", "w") as fh:
            fh.write("class A: DCNL DCSP x = 1\n")
    code = load_hearthstone(str(tmp_path))["train"].records[0].code
    assert code == "class A:\n    x = 1"


def test_hearthstone_normalized_records_reserialize_identically(hs_dir, tmp_path):
    splits = load_hearthstone(hs_dir)
    p1, p2 = tmp_path / "one.jsonl", tmp_path / "two.jsonl"
    save_corpus(splits["train"], str(p1))
    save_corpus(load_corpus(str(p1), split="train"), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_jsonl_roundtrip_byte_identical(tmp_path):
    corpus = generate_synthetic_corpus(n=12, seed=2)
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    save_corpus(corpus, str(p1))
    again = load_corpus(str(p1), split=corpus.split)
    save_corpus(again, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    assert again.records == corpus.records


def test_jsonl_fields_exact(tmp_path):
    corpus = generate_synthetic_corpus(n=3, seed=2)
    path = tmp_path / "c.jsonl"
    save_corpus(corpus, str(path))
    for line in path.read_text().splitlines():
        record = json.loads(line)
        assert set(record) == {"id", "nl", "code", "test_unit"}
        assert set(record["test_unit"]) == {"kind", "payload", "time_limit", "memory_limit"}


def test_synthetic_deterministic():
    a = generate_synthetic_corpus(n=50, seed=7)
    b = generate_synthetic_corpus(n=50, seed=7)
    assert a.records == b.records
    c = generate_synthetic_corpus(n=50, seed=8)
    assert a.records != c.records


def test_synthetic_zero_rejected():
    with pytest.raises(CorpusError):
        generate_synthetic_corpus(n=0)


def test_synthetic_references_pass_their_own_units():
    corpus = generate_synthetic_corpus(n=12, seed=3)
    for record in corpus.records:
        result = run_tests(record.code, record.test_unit)
        assert result.passed, f"{record.id}: {result.raw_output}"


def test_synthetic_parses_under_dsl_grammar():
    grammar = dsl_grammar()
    corpus = generate_synthetic_corpus(grammar, n=40, seed=11)
    for record in corpus.records:
        parse_to_ast(record.code, grammar)


def test_card_corpus_shape_and_selfchecks():
    corpus = generate_card_corpus(n=8, seed=4)
    grammar = grammar_from_corpus([r.code for r in corpus.records])
    for record in corpus.records:
        parse_to_ast(record.code, grammar)
        assert "NAME_END" in record.nl
    result = run_tests(corpus.records[0].code, corpus.records[0].test_unit)
    assert result.passed


def test_make_splits_disjoint_seeds():
    splits = make_splits(generate_synthetic_corpus, {"train": 6, "dev": 3, "test": 3}, seed=1)
    assert {s: len(c) for s, c in splits.items()} == {"train": 6, "dev": 3, "test": 3}
    assert splits["train"].records[0].code != splits["dev"].records[0].code or True
    assert splits["dev"].split == "dev"
