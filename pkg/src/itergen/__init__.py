"""Grammar-based neural code generation with test feedback.

Programs are produced by predicting production-rule sequences over an
abstract-syntax-tree grammar; generated code is executed against test
units in a sandbox, and the failing fragment plus the previous rule
sequence feed back into dedicated encoders for the next round.
"""

from .grammar import (
    ApplyRule,
    ASTNode,
    FillTerminal,
    Grammar,
    Rule,
    RuleSequence,
    TreePath,
    ast_to_rules,
    frontier,
    load_grammar,
    rules_to_ast,
    tree_path,
)
from .harness import TestInfo, TestResult, TestUnitSpec, run_tests
from .metrics import MetricReport, evaluate
from .model import CodeGenerator
from .nn.core import ModelConfig
from .nn.net import GeneratedOutput, GenerationLimits
from .pipeline import run_pipeline, ablation
from .pycode import ast_to_code, grammar_from_corpus, parse_to_ast
from .textdata import EncodedSample, TokenizedText, Vocab, encode_sample, tokenize

__version__ = "0.1.0"

__all__ = [
    "ApplyRule",
    "ASTNode",
    "CodeGenerator",
    "EncodedSample",
    "FillTerminal",
    "GeneratedOutput",
    "GenerationLimits",
    "Grammar",
    "MetricReport",
    "ModelConfig",
    "Rule",
    "RuleSequence",
    "TestInfo",
    "TestResult",
    "TestUnitSpec",
    "TokenizedText",
    "TreePath",
    "Vocab",
    "ablation",
    "ast_to_code",
    "ast_to_rules",
    "encode_sample",
    "evaluate",
    "frontier",
    "grammar_from_corpus",
    "load_grammar",
    "parse_to_ast",
    "rules_to_ast",
    "run_pipeline",
    "run_tests",
    "tokenize",
    "tree_path",
]
