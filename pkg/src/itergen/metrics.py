"""Evaluation metrics for generated/reference code pairs.

Test accuracy is the fraction of samples whose generated program passes
its test unit, kept as an exact rational.  The text metrics (4-gram BLEU
with brevity penalty, LCS-based ROUGE-L) run over code tokens from the
shared tokenizer.  ``acc_plus_auto`` is exact match after canonical
renaming of locally bound variables, the automatable slice of
"renaming does not change the program".
"""

from __future__ import annotations

import ast
import json
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from .harness import TestResult
from .textdata import tokenize


class MetricError(Exception):
    pass


@dataclass(frozen=True)
class MetricReport:
    test_acc: float
    bleu: float
    rouge_l: float
    str_acc: float
    acc_plus_auto: float
    m_total: int
    n_pass: int

    def __post_init__(self):
        if not 0 <= self.n_pass <= self.m_total:
            raise MetricError("n_pass must lie in 0..m_total")
        # the exact ratio lives in the integer fields; the float must agree
        if self.m_total > 0 and self.test_acc != self.n_pass / self.m_total:
            raise MetricError("test_acc must equal n_pass / m_total")

    def exact_test_acc(self) -> Fraction:
        return Fraction(self.n_pass, self.m_total)

    def to_dict(self) -> dict:
        return {
            "test_acc": self.test_acc,
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
            "str_acc": self.str_acc,
            "acc_plus_auto": self.acc_plus_auto,
            "m_total": self.m_total,
            "n_pass": self.n_pass,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(**{k: data[k] for k in (
            "test_acc", "bleu", "rouge_l", "str_acc", "acc_plus_auto", "m_total", "n_pass",
        )})


def test_acc(results: list[TestResult]) -> Fraction:
    """Exact passing fraction N/M."""
    if not results:
        raise MetricError("test_acc needs at least one result")
    n_pass = sum(1 for r in results if r.passed)
    return Fraction(n_pass, len(results))


def _ngrams(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(candidates: list[str], references: list[str], max_n: int = 4) -> float:
    """Corpus-level n-gram BLEU with brevity penalty, no smoothing, 0..100.

    Orders with no candidate n-grams anywhere in the corpus are dropped
    (effective-order rule), so identical non-empty pairs always score 100
    even when shorter than max_n tokens.
    """
    if len(candidates) != len(references):
        raise MetricError("candidates and references must be aligned")
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        c = tokenize(cand).tokens
        r = tokenize(ref).tokens
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            c_counts = _ngrams(c, n)
            r_counts = _ngrams(r, n)
            total[n - 1] += max(0, len(c) - n + 1)
            matched[n - 1] += sum(min(cnt, r_counts[g]) for g, cnt in c_counts.items())
    orders = [(m, t) for m, t in zip(matched, total) if t > 0]
    if cand_len == 0 or not orders:
        return 0.0
    if any(m == 0 for m, _ in orders):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in orders) / len(orders)
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity * math.exp(log_precision)


def bleu(candidate: str, reference: str) -> float:
    return bleu_corpus([candidate], [reference])


def _lcs_length(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS F1 over tokens, 0..100."""
    c = tokenize(candidate).tokens
    r = tokenize(reference).tokens
    if not c or not r:
        return 0.0
    lcs = _lcs_length(c, r)
    if lcs == 0:
        return 0.0
    precision = lcs / len(c)
    recall = lcs / len(r)
    return 100.0 * (2 * precision * recall) / (precision + recall)


def rouge_l_corpus(candidates: list[str], references: list[str]) -> float:
    if len(candidates) != len(references):
        raise MetricError("candidates and references must be aligned")
    if not candidates:
        return 0.0
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


def _normalize_ws(text: str) -> str:
    lines = [line.rstrip() for line in text.strip().splitlines()]
    return "\n".join(line for line in lines if line)


def str_acc(candidates: list[str], references: list[str]) -> Fraction:
    """Exact-match fraction after whitespace normalization."""
    if len(candidates) != len(references):
        raise MetricError("candidates and references must be aligned")
    if not candidates:
        raise MetricError("str_acc needs at least one pair")
    hits = sum(
        1 for c, r in zip(candidates, references) if _normalize_ws(c) == _normalize_ws(r)
    )
    return Fraction(hits, len(candidates))


class _LocalRenamer(ast.NodeTransformer):
    """Rename locally bound names to v0, v1, ... in first-use order.

    Scope-aware enough for the corpus: each function gets its own table of
    names bound by params/assignments/for-targets; attribute names, globals
    and anything never bound stay untouched.
    """

    def __init__(self):
        self._scopes: list[dict[str, str]] = []
        self._bound: list[set[str]] = []

    def _collect_bound(self, node) -> set[str]:
        bound: set[str] = set()
        skip: set[str] = set()

        class Collector(ast.NodeVisitor):
            def visit_FunctionDef(self, inner):
                if inner is not node:
                    return  # nested scope
                self.generic_visit(inner)

            visit_AsyncFunctionDef = visit_FunctionDef

            def visit_Lambda(self, inner):
                if inner is not node:
                    return
                self.generic_visit(inner)

            def visit_Global(self, inner):
                skip.update(inner.names)

            def visit_Nonlocal(self, inner):
                skip.update(inner.names)

            def visit_Name(self, inner):
                if isinstance(inner.ctx, (ast.Store, ast.Del)):
                    bound.add(inner.id)

        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            for arg in (
                node.args.posonlyargs + node.args.args + node.args.kwonlyargs
            ):
                bound.add(arg.arg)
            for extra in (node.args.vararg, node.args.kwarg):
                if extra is not None:
                    bound.add(extra.arg)
            for stmt in node.body:
                Collector().visit(stmt)
        return bound - skip

    def visit_FunctionDef(self, node):
        bound = self._collect_bound(node)
        self._scopes.append({})
        self._bound.append(bound)
        node = self.generic_visit(node)
        self._scopes.pop()
        self._bound.pop()
        return node

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_arg(self, node):
        if self._scopes and node.arg in self._bound[-1]:
            node.arg = self._rename(node.arg)
        return node

    def visit_Name(self, node):
        if self._scopes and node.id in self._bound[-1]:
            node.id = self._rename(node.id)
        return node

    def visit_Global(self, node):
        return node

    def _rename(self, name: str) -> str:
        table = self._scopes[-1]
        if name not in table:
            table[name] = f"v{len(table)}"
        return table[name]


def _canonical_dump(source: str) -> str:
    tree = ast.parse(source)
    tree = _LocalRenamer().visit(tree)
    return ast.dump(tree)


def acc_plus_auto(candidates: list[str], references: list[str]) -> Fraction:
    """Exact-match fraction after canonical local-variable renaming.

    Falls back to whitespace-normalized string equality when either side
    does not parse, so renaming can only ever add matches over str_acc.
    """
    if len(candidates) != len(references):
        raise MetricError("candidates and references must be aligned")
    if not candidates:
        raise MetricError("acc_plus_auto needs at least one pair")
    hits = 0
    for cand, ref in zip(candidates, references):
        if _normalize_ws(cand) == _normalize_ws(ref):
            hits += 1
            continue
        try:
            if _canonical_dump(cand) == _canonical_dump(ref):
                hits += 1
        except SyntaxError:
            pass
    return Fraction(hits, len(candidates))


def evaluate(
    candidates: list[str],
    references: list[str],
    results: list[TestResult],
) -> MetricReport:
    """Assemble the full report for one round/split."""
    n_pass = sum(1 for r in results if r.passed)
    return MetricReport(
        test_acc=n_pass / len(results),
        bleu=bleu_corpus(candidates, references),
        rouge_l=rouge_l_corpus(candidates, references),
        str_acc=float(str_acc(candidates, references)),
        acc_plus_auto=float(acc_plus_auto(candidates, references)),
        m_total=len(results),
        n_pass=n_pass,
    )
