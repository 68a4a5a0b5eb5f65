"""Command-line entry point.

Subcommands: prepare-data, pipeline, train, generate, test, evaluate,
ablate.  Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import corpus as corpus_mod
from .config import ConfigFileError, build_run_config
from .corpus import (
    Corpus,
    CorpusError,
    load_corpus,
    load_hearthstone,
    save_corpus,
)
from .grammar import GrammarError, load_grammar, load_rules
from .harness import HarnessError, TestUnitSpec, run_tests
from .metrics import MetricReport
from .model import CodeGenerator
from .nn.net import GenerationLimits
from .pipeline import ablation, run_pipeline
from .pycode import grammar_from_corpus
from .textdata import EncodedSample, UnparseableReference, tokenize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--run-dir", help="output directory for this run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itergen",
        description="grammar-based code generation with test feedback",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="normalize a corpus to JSONL splits")
    p.add_argument("--input", required=False, help="benchmark directory")
    p.add_argument("--format", required=True, choices=("hearthstone", "synthetic", "cards"))
    p.add_argument("--out", required=True, help="output directory for split files")
    p.add_argument("--n", type=int, default=50, help="samples per generated split")
    p.add_argument("--allow-any-counts", action="store_true",
                   help="skip the 533/66/66 benchmark size check")
    _add_common(p)

    p = sub.add_parser("pipeline", help="run the full N-round protocol")
    p.add_argument("--corpus", required=True, help="directory of {split}.jsonl files")
    p.add_argument("--rounds", type=int, help="override round count")
    _add_common(p)

    p = sub.add_parser("train", help="single teacher-forced training round")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="model directory to write")
    _add_common(p)

    p = sub.add_parser("generate", help="generate code for one description")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--nl", required=True, help="natural-language description")
    p.add_argument("--test-info", default="", help="feedback text from a failed test")
    p.add_argument("--last-rules", help="rule-sequence file from the previous round")
    p.add_argument("--rules-out", help="write the chosen rule sequence here")
    _add_common(p)

    p = sub.add_parser("test", help="run one program against a test unit")
    p.add_argument("--code", required=True, help="program file")
    p.add_argument("--spec", required=True, help="test unit JSON file")
    _add_common(p)

    p = sub.add_parser("evaluate", help="print a finished round's metrics")
    p.add_argument("--run", required=True, help="pipeline run directory")
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--split", default="test")
    _add_common(p)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--variants", nargs="*", help="subset of variants to run")
    _add_common(p)
    return parser


def _config_from_args(args) -> "RunConfig":
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "run_dir", None):
        overrides["run_dir"] = args.run_dir
    if getattr(args, "rounds", None):
        overrides["n_rounds"] = args.rounds
    return build_run_config(getattr(args, "config", None), overrides)


def _load_splits(directory: str) -> dict[str, Corpus]:
    splits = {}
    for split in corpus_mod.SPLITS:
        path = os.path.join(directory, f"{split}.jsonl")
        if os.path.exists(path):
            splits[split] = load_corpus(path, split=split)
    if "train" not in splits:
        raise CorpusError(f"no train.jsonl under {directory}")
    return splits


def _estimator(cfg, grammar) -> CodeGenerator:
    return CodeGenerator(grammar=grammar, **cfg.model_kwargs())


def _grammar_for(cfg, splits) -> "Grammar":
    if cfg.grammar_path:
        with open(cfg.grammar_path) as fh:
            return load_grammar(fh.read())
    sources = []
    for corpus in splits.values():
        for record in corpus.records:
            try:
                import ast as pyast

                pyast.parse(record.code)
                sources.append(record.code)
            except SyntaxError:
                continue
    return grammar_from_corpus(sources)


def cmd_prepare_data(args) -> int:
    cfg = _config_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    if args.format == "hearthstone":
        if not args.input:
            print("prepare-data --format hearthstone requires --input", file=sys.stderr)
            return EXIT_USAGE
        expected = None if args.allow_any_counts else dict(corpus_mod.HEARTHSTONE_COUNTS)
        splits = load_hearthstone(args.input, expected_counts=expected)
    elif args.format == "synthetic":
        splits = corpus_mod.make_splits(
            corpus_mod.generate_synthetic_corpus,
            {"train": args.n, "dev": max(2, args.n // 5), "test": max(2, args.n // 5)},
            seed=cfg.seed,
        )
    else:
        splits = corpus_mod.make_splits(
            corpus_mod.generate_card_corpus,
            {"train": args.n, "dev": max(2, args.n // 5), "test": max(2, args.n // 5)},
            seed=cfg.seed,
        )
    for split, corpus in sorted(splits.items()):
        path = os.path.join(args.out, f"{split}.jsonl")
        save_corpus(corpus, path)
        print(f"{split}: {len(corpus)} records -> {path}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    splits = _load_splits(args.corpus)
    grammar = _grammar_for(cfg, splits)
    est = _estimator(cfg, grammar)
    limits = GenerationLimits(max_actions=cfg.max_actions, beam_width=cfg.beam_width)
    result = run_pipeline(
        splits, est, cfg.n_rounds, limits=limits, run_dir=cfg.run_dir,
        parallelism=cfg.parallelism,
        disable_test_info=cfg.disable_test_info,
        disable_code_encoder=cfg.disable_code_encoder,
        fresh_per_round=cfg.fresh_per_round,
    )
    print(json.dumps(result.manifest, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    splits = _load_splits(args.corpus)
    grammar = _grammar_for(cfg, splits)
    est = _estimator(cfg, grammar)
    from .textdata import encode_sample

    samples = []
    for record in splits["train"].records:
        try:
            samples.append(encode_sample(record.id, record.nl, record.code, grammar))
        except UnparseableReference:
            continue
    est.fit(samples)
    est.save(args.out)
    print(f"trained on {len(samples)} samples; model saved to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    est = CodeGenerator.load(args.model_dir)
    cfg = _config_from_args(args)
    last_rules = None
    if args.last_rules:
        with open(args.last_rules) as fh:
            last_rules = load_rules(fh.read())
    from .textdata import EMPTY_RULES, EMPTY_TEXT

    sample = EncodedSample(
        sample_id="cli",
        nl=tokenize(args.nl),
        test_info=tokenize(args.test_info) if args.test_info else EMPTY_TEXT,
        last_rules=last_rules or EMPTY_RULES,
    )
    limits = GenerationLimits(max_actions=cfg.max_actions, beam_width=cfg.beam_width)
    out = est.predict([sample], limits)[0]
    print(out.code)
    if args.rules_out:
        from .grammar import dump_rules

        with open(args.rules_out, "w") as fh:
            fh.write(dump_rules(out.rules))
    return EXIT_OK if out.complete else EXIT_RUNTIME


def cmd_test(args) -> int:
    with open(args.code) as fh:
        code = fh.read()
    with open(args.spec) as fh:
        spec = TestUnitSpec.loads(fh.read())
    result = run_tests(code, spec)
    print(result.category)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    path = os.path.join(args.run, f"round-{args.round}", "metrics.json")
    if not os.path.exists(path):
        print(f"no metrics at {path}", file=sys.stderr)
        return EXIT_DATA
    with open(path) as fh:
        data = json.load(fh)
    if args.split not in data:
        print(f"split {args.split!r} not in {sorted(data)}", file=sys.stderr)
        return EXIT_DATA
    report = MetricReport.from_dict(data[args.split])
    print(report.dumps())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    splits = _load_splits(args.corpus)
    grammar = _grammar_for(cfg, splits)
    limits = GenerationLimits(max_actions=cfg.max_actions, beam_width=cfg.beam_width)
    grid = ablation(
        splits,
        lambda: _estimator(cfg, grammar),
        cfg.n_rounds,
        variants=args.variants or None,
        limits=limits,
        run_dir=cfg.run_dir,
        parallelism=cfg.parallelism,
        fresh_per_round=cfg.fresh_per_round,
    )
    print(json.dumps(grid, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "pipeline": cmd_pipeline,
    "train": cmd_train,
    "generate": cmd_generate,
    "test": cmd_test,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (CorpusError, UnparseableReference, ConfigFileError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (GrammarError, HarnessError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
