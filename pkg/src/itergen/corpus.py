"""Corpora: the card benchmark adapter, synthetic generators, and JSONL io.

The normalized on-disk form is one JSON record per line with exactly the
fields {id, nl, code, test_unit}.  Benchmark raw files arrive as aligned
description/code pairs whose code lines are joined by escape markers; the
adapter detects the marker scheme instead of assuming one.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field

from .harness import GENERIC, TestUnitSpec

SPLITS = ("train", "dev", "test")
HEARTHSTONE_COUNTS = {"train": 533, "dev": 66, "test": 66}


class CorpusError(Exception):
    pass


class MissingSplit(CorpusError):
    pass


class CountMismatch(CorpusError):
    pass


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    nl: str
    code: str
    test_unit: TestUnitSpec

    def attrs(self) -> dict[str, str]:
        """Parse `VALUE <FIELD>_END` style card attributes out of the nl text."""
        out: dict[str, str] = {}
        parts = self.nl.split()
        current: list[str] = []
        for tok in parts:
            if tok.endswith("_END"):
                out[tok[:-4].lower()] = " ".join(current)
                current = []
            else:
                current.append(tok)
        if current:
            out["description"] = " ".join(current)
        return out

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "nl": self.nl,
            "code": self.code,
            "test_unit": self.test_unit.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusRecord":
        return cls(
            id=str(data["id"]),
            nl=data["nl"],
            code=data["code"],
            test_unit=TestUnitSpec.from_dict(data["test_unit"]),
        )


@dataclass
class Corpus:
    split: str
    records: list[CorpusRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def save_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w") as fh:
        for record in corpus.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def load_corpus(path: str, split: str | None = None) -> Corpus:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(CorpusRecord.from_dict(json.loads(line)))
    name = split or os.path.splitext(os.path.basename(path))[0]
    return Corpus(split=name, records=records)


# ---------------------------------------------------------------------------
# card benchmark adapter


def _decode_code(raw: str) -> str:
    """Undo the raw files' single-line code escaping; scheme is detected."""
    if "§" in raw:
        return raw.replace("§", "\n")
    if " DCNL " in raw or raw.startswith("DCNL"):
        text = raw.replace(" DCNL ", "\n").replace("DCNL ", "\n")
        return text.replace(" DCSP ", "\t").replace("DCSP ", "\t")
    if "\\n" in raw and "\n" not in raw:
        return raw.replace("\\r\\n", "\n").replace("\\n", "\n").replace("\\t", "\t")
    return raw


def _split_files(directory: str, split: str) -> tuple[str, str]:
    stems = [split] if split != "dev" else ["dev", "valid"]
    for stem in stems:
        base = os.path.join(directory, f"{stem}_hs")
        if os.path.exists(base + ".in") and os.path.exists(base + ".out"):
            return base + ".in", base + ".out"
    raise MissingSplit(f"no {split} split ({split}_hs.in/.out) under {directory}")


def load_hearthstone(
    path: str,
    expected_counts: dict[str, int] | None = None,
    test_unit_factory=None,
) -> dict[str, Corpus]:
    """Load the aligned card description/code files under ``path``.

    ``expected_counts`` (e.g. the benchmark's 533/66/66) turns size drift
    into CountMismatch.  ``test_unit_factory(record_id, nl, code)`` may
    supply real test units; the default is an import-smoke assertion unit.
    """
    out: dict[str, Corpus] = {}
    for split in SPLITS:
        in_path, out_path = _split_files(path, split)
        with open(in_path, encoding="utf-8") as fh:
            descriptions = [line.rstrip("\n") for line in fh]
        with open(out_path, encoding="utf-8") as fh:
            codes = [line.rstrip("\n") for line in fh]
        while descriptions and not descriptions[-1].strip():
            descriptions.pop()
        while codes and not codes[-1].strip():
            codes.pop()
        if len(descriptions) != len(codes):
            raise CountMismatch(
                f"{split}: {len(descriptions)} descriptions vs {len(codes)} programs"
            )
        if expected_counts and expected_counts.get(split) != len(codes):
            raise CountMismatch(
                f"{split}: expected {expected_counts.get(split)} records, found {len(codes)}"
            )
        records = []
        for i, (nl, raw_code) in enumerate(zip(descriptions, codes)):
            code = _decode_code(raw_code).replace("\t", "    ")
            rid = f"{split}/{i:04d}"
            if test_unit_factory is not None:
                unit = test_unit_factory(rid, nl, code)
            else:
                unit = TestUnitSpec(kind=GENERIC, payload="")
            records.append(CorpusRecord(id=rid, nl=nl, code=code, test_unit=unit))
        out[split] = Corpus(split=split, records=records)
    return out


# ---------------------------------------------------------------------------
# synthetic straight-line DSL (deterministic, executable, copy-friendly)

_DSL_VARS = ("a", "b", "c", "d", "e")
_OPS = (("+", "plus", lambda x, y: x + y), ("-", "minus", lambda x, y: x - y),
        ("*", "times", lambda x, y: x * y))


def generate_synthetic_corpus(
    grammar=None, n: int = 50, seed: int = 0, split: str = "train",
    max_statements: int = 3,
) -> Corpus:
    """n straight-line assignment programs with verbalized descriptions.

    Each record's test unit asserts every variable's final value, so the
    reference code always passes its own unit.  Deterministic under seed.
    When a grammar is given, every generated program is checked against it.
    """
    if n < 1:
        raise CorpusError("need n >= 1 synthetic samples")
    rng = random.Random(seed)
    records = []
    for i in range(n):
        env: dict[str, int] = {}
        code_lines: list[str] = []
        nl_parts: list[str] = []
        for s in range(rng.randint(1, max_statements)):
            var = _DSL_VARS[s]
            expr_src, expr_words, value = _make_expr(rng, env)
            env[var] = value
            code_lines.append(f"{var} = {expr_src}")
            nl_parts.append(f"set {var} to {expr_words}")
        code = "\n".join(code_lines)
        nl = " ; ".join(nl_parts)
        payload = "\n".join(f"assert {v} == {val}" for v, val in env.items())
        records.append(
            CorpusRecord(
                id=f"{split}/{i:04d}",
                nl=nl,
                code=code,
                test_unit=TestUnitSpec(kind=GENERIC, payload=payload, time_limit=5.0),
            )
        )
    corpus = Corpus(split=split, records=records)
    if grammar is not None:
        from .pycode import parse_to_ast

        for record in records:
            parse_to_ast(record.code, grammar)
    return corpus


def _make_expr(rng: random.Random, env: dict[str, int]) -> tuple[str, str, int]:
    def atom():
        if env and rng.random() < 0.45:
            name = rng.choice(sorted(env))
            return name, name, env[name]
        lit = rng.randint(0, 9)
        return str(lit), str(lit), lit

    left_src, left_words, left_val = atom()
    if rng.random() < 0.6:
        sym, word, fn = rng.choice(_OPS)
        right_src, right_words, right_val = atom()
        return (
            f"{left_src} {sym} {right_src}",
            f"{left_words} {word} {right_words}",
            fn(left_val, right_val),
        )
    return left_src, left_words, left_val


def dsl_grammar():
    """Grammar covering everything the synthetic DSL can emit."""
    from .pycode import grammar_from_corpus

    probe = generate_synthetic_corpus(n=200, seed=1234, max_statements=3)
    return grammar_from_corpus([r.code for r in probe.records])


# ---------------------------------------------------------------------------
# card-style stand-in corpus (benchmark-shaped classes with attribute tests)

_CARD_WORDS = (
    "ancient", "watcher", "river", "guard", "storm", "rider", "iron", "fang",
    "ember", "scout", "frost", "keeper", "wild", "runner", "dusk", "herald",
)
_CARD_TAGS = ("beast", "mech", "totem", "rush", "taunt", "charge")


def generate_card_corpus(n: int, seed: int = 0, split: str = "train") -> Corpus:
    """Benchmark-shaped stand-in: class per card, attribute assertions."""
    if n < 1:
        raise CorpusError("need n >= 1 card samples")
    rng = random.Random(seed)
    records = []
    for i in range(n):
        w1, w2 = rng.choice(_CARD_WORDS), rng.choice(_CARD_WORDS)
        name = f"{w1.capitalize()} {w2.capitalize()}"
        cls = f"Card{w1.capitalize()}{w2.capitalize()}{i}"
        cost = rng.randint(0, 9)
        attack = rng.randint(0, 9)
        health = rng.randint(1, 9)
        taunt = rng.random() < 0.4
        tags = sorted(rng.sample(_CARD_TAGS, rng.randint(0, 2)))
        lines = [
            f"class {cls}:",
            "",
            "    def __init__(self):",
            f"        self.name = '{name}'",
            f"        self.cost = {cost}",
            f"        self.attack = {attack}",
            f"        self.health = {health}",
        ]
        if taunt:
            lines.append("        self.taunt = True")
        if tags:
            inner = ", ".join(f"'{t}'" for t in tags)
            lines.append(f"        self.tags = [{inner}]")
        lines += [
            "",
            "    def power(self):",
            "        return self.attack + self.health",
        ]
        code = "\n".join(lines)
        nl = (
            f"{name} NAME_END {attack} ATK_END {health} DEF_END {cost} COST_END "
            f"minion TYPE_END " + (" ".join(tags) + " " if tags else "") + "RACE_END"
        )
        checks = [
            f"card = {cls}()",
            f"assert card.name == '{name}'",
            f"assert card.cost == {cost}",
            f"assert card.power() == {attack + health}",
        ]
        if taunt:
            checks.append("assert card.taunt is True")
        records.append(
            CorpusRecord(
                id=f"{split}/{i:04d}",
                nl=nl,
                code=code,
                test_unit=TestUnitSpec(kind=GENERIC, payload="\n".join(checks)),
            )
        )
    return Corpus(split=split, records=records)


def make_splits(
    generator, sizes: dict[str, int], seed: int = 0
) -> dict[str, Corpus]:
    """Disjoint seeded splits from one of the generators above."""
    out = {}
    for offset, (split, size) in enumerate(sorted(sizes.items())):
        out[split] = generator(n=size, seed=seed + 1000 * offset, split=split)
    return out
