"""The iterative train/generate/test protocol.

Round 1 trains on the full training split from descriptions alone and
generates everything.  Every later round trains only on the samples whose
previous output failed its test unit (those are the ones with feedback to
learn from), regenerates exactly those, and copies passing outputs through
verbatim.  Copy-through makes per-round test accuracy non-decreasing by
construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .corpus import Corpus
from .grammar import RuleSequence, dump_rules
from .harness import (
    EMPTY_TEST_INFO,
    TestInfo,
    TestResult,
    corpus_test_sweep,
    extract_test_info,
)
from .metrics import MetricReport, evaluate
from .model import CodeGenerator
from .nn.net import GenerationLimits
from .textdata import (
    EMPTY_RULES,
    EMPTY_TEXT,
    EncodedSample,
    UnparseableReference,
    encode_sample,
    tokenize,
)


class PipelineError(Exception):
    pass


class EmptySubset(PipelineError):
    """No failing training samples remain; the loop has converged."""


@dataclass
class RoundOutput:
    code: str
    rules: RuleSequence
    result: TestResult
    info: TestInfo
    copied: bool = False


@dataclass
class RoundState:
    round_index: int
    outputs: dict[str, RoundOutput] = field(default_factory=dict)
    train_subset: list[str] = field(default_factory=list)
    metrics: dict[str, MetricReport] = field(default_factory=dict)

    def failing_ids(self, split: str) -> list[str]:
        prefix = f"{split}/"
        return [
            sid for sid, out in sorted(self.outputs.items())
            if sid.startswith(prefix) and not out.result.passed
        ]

    def passing_ids(self, split: str) -> set[str]:
        prefix = f"{split}/"
        return {
            sid for sid, out in self.outputs.items()
            if sid.startswith(prefix) and out.result.passed
        }


@dataclass
class PipelineResult:
    rounds: list[RoundState]
    best_round: int
    manifest: dict


def _round_sample(
    record, grammar, prev_output: RoundOutput | None,
    disable_test_info: bool, disable_code_encoder: bool, with_target: bool,
) -> EncodedSample:
    """Model input for one record in the current round."""
    test_text = ""
    last_rules = EMPTY_RULES
    if prev_output is not None:
        if not disable_test_info:
            test_text = prev_output.info.text()
        if not disable_code_encoder:
            last_rules = prev_output.rules
    if with_target:
        return encode_sample(
            record.id, record.nl, record.code, grammar,
            test_info_text=test_text, last_rules=last_rules,
        )
    return EncodedSample(
        sample_id=record.id,
        nl=tokenize(record.nl),
        test_info=tokenize(test_text) if test_text else EMPTY_TEXT,
        last_rules=last_rules,
    )


def train_round(
    estimator: CodeGenerator,
    corpus: Corpus,
    subset_ids: list[str] | None,
    grammar,
    round_index: int,
    prev: RoundState | None,
    disable_test_info: bool = False,
    disable_code_encoder: bool = False,
    epochs: int | None = None,
    fresh: bool = False,
) -> CodeGenerator:
    """Fit on the full split (round 1) or the previous round's failures."""
    records = {r.id: r for r in corpus.records}
    if round_index == 1:
        chosen = sorted(records)
    else:
        chosen = subset_ids or []
        if not chosen:
            raise EmptySubset(f"round {round_index}: no failing training samples")
    samples = []
    skipped = 0
    for sid in chosen:
        prev_out = prev.outputs.get(sid) if prev is not None else None
        try:
            samples.append(
                _round_sample(
                    records[sid], grammar, prev_out,
                    disable_test_info, disable_code_encoder, with_target=True,
                )
            )
        except UnparseableReference:
            skipped += 1
    if not samples:
        raise EmptySubset(f"round {round_index}: no trainable samples (skipped {skipped})")
    estimator.warm_start = not fresh and round_index > 1
    estimator.fit(samples, epochs=epochs)
    return estimator


def infer_round(
    estimator: CodeGenerator,
    splits: dict[str, Corpus],
    grammar,
    prev: RoundState | None,
    round_index: int,
    limits: GenerationLimits,
    parallelism: int = 4,
    disable_test_info: bool = False,
    disable_code_encoder: bool = False,
) -> RoundState:
    """Generate (or copy through) and re-test every sample of every split."""
    state = RoundState(round_index=round_index)
    for split, corpus in sorted(splits.items()):
        pending: list[tuple] = []  # (record, code, rules, copied)
        to_generate = []
        for record in corpus.records:
            prev_out = prev.outputs.get(record.id) if prev is not None else None
            if prev_out is not None and prev_out.result.passed:
                # copy-through: passing code is emitted verbatim
                pending.append((record, prev_out.code, prev_out.rules, True))
            else:
                to_generate.append((record, prev_out))
        if to_generate:
            samples = [
                _round_sample(
                    record, grammar, prev_out,
                    disable_test_info, disable_code_encoder, with_target=False,
                )
                for record, prev_out in to_generate
            ]
            outputs = estimator.predict(samples, limits)
            pending.extend(
                (record, out.code, out.rules, False)
                for (record, _), out in zip(to_generate, outputs)
            )
        sweep = corpus_test_sweep(
            [code for _, code, _, _ in pending],
            [record.test_unit for record, _, _, _ in pending],
            parallelism=parallelism,
        )
        for (record, code, rules, copied), result in zip(pending, sweep.results):
            info = EMPTY_TEST_INFO if result.passed else extract_test_info(
                result.raw_output, code
            )
            state.outputs[record.id] = RoundOutput(
                code=code, rules=rules, result=result, info=info, copied=copied,
            )
        ordered = corpus.records
        state.metrics[split] = evaluate(
            [state.outputs[r.id].code for r in ordered],
            [r.code for r in ordered],
            [state.outputs[r.id].result for r in ordered],
        )
    return state


def run_pipeline(
    splits: dict[str, Corpus],
    estimator: CodeGenerator,
    n_rounds: int,
    limits: GenerationLimits | None = None,
    run_dir: str | None = None,
    parallelism: int = 4,
    disable_test_info: bool = False,
    disable_code_encoder: bool = False,
    fresh_per_round: bool = False,
    epochs_per_round: int | None = None,
) -> PipelineResult:
    if n_rounds < 1:
        raise PipelineError("need at least one round")
    if "train" not in splits:
        raise PipelineError("pipeline needs a train split")
    grammar = estimator.grammar
    if grammar is None:
        raise PipelineError("estimator must carry a grammar")
    limits = limits or GenerationLimits()
    flags = dict(
        disable_test_info=disable_test_info,
        disable_code_encoder=disable_code_encoder,
    )
    rounds: list[RoundState] = []
    prev: RoundState | None = None
    subset: list[str] | None = None
    stopped_early = False
    for r in range(1, n_rounds + 1):
        try:
            train_round(
                estimator, splits["train"], subset, grammar, r, prev,
                epochs=epochs_per_round, fresh=fresh_per_round, **flags,
            )
        except EmptySubset:
            stopped_early = True
            break
        state = infer_round(
            estimator, splits, grammar, prev, r, limits,
            parallelism=parallelism, **flags,
        )
        if r == 1:
            state.train_subset = sorted(rec.id for rec in splits["train"].records)
        else:
            state.train_subset = list(subset)
        for split, corpus in splits.items():
            got = sum(1 for sid in state.outputs if sid.startswith(f"{split}/"))
            if got != len(corpus):
                raise PipelineError(f"round {r}: {split} produced {got}/{len(corpus)} outputs")
        rounds.append(state)
        if run_dir:
            _persist_round(run_dir, state, estimator)
        subset = state.failing_ids("train")
        prev = state
    if not rounds:
        raise PipelineError("pipeline produced no rounds")
    eval_split = "dev" if "dev" in splits else "train"
    best_round = max(
        range(len(rounds)),
        key=lambda i: (
            rounds[i].metrics[eval_split].test_acc,
            rounds[i].metrics[eval_split].bleu,
        ),
    ) + 1
    manifest = {
        "seed": estimator.seed,
        "n_rounds_requested": n_rounds,
        "n_rounds_completed": len(rounds),
        "stopped_early": stopped_early,
        "best_round": best_round,
        "selection_split": eval_split,
        "disable_test_info": disable_test_info,
        "disable_code_encoder": disable_code_encoder,
        "rounds": [
            {
                "round": st.round_index,
                "train_subset_size": len(st.train_subset),
                "metrics": {s: m.to_dict() for s, m in sorted(st.metrics.items())},
            }
            for st in rounds
        ],
    }
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        # the exact configuration this run used
        params = {
            k: v for k, v in estimator.get_params().items()
            if isinstance(v, (int, float, str, bool, type(None)))
        }
        params.update(
            n_rounds=n_rounds,
            max_actions=limits.max_actions,
            beam_width=limits.beam_width,
            parallelism=parallelism,
            fresh_per_round=fresh_per_round,
            **flags,
        )
        with open(os.path.join(run_dir, "config.json"), "w") as fh:
            json.dump(params, fh, indent=2, sort_keys=True)
    return PipelineResult(rounds=rounds, best_round=best_round, manifest=manifest)


def _persist_round(run_dir: str, state: RoundState, estimator: CodeGenerator) -> None:
    rdir = os.path.join(run_dir, f"round-{state.round_index}")
    os.makedirs(rdir, exist_ok=True)
    estimator.save(rdir)
    with open(os.path.join(rdir, "training-log.json"), "w") as fh:
        json.dump({"loss_per_step": estimator.loss_log_}, fh)
    with open(os.path.join(rdir, "outputs.jsonl"), "w") as fh:
        for sid, out in sorted(state.outputs.items()):
            fh.write(json.dumps({
                "id": sid,
                "code": out.code,
                "rules": dump_rules(out.rules),
                "category": out.result.category,
                "passed": out.result.passed,
                "copied": out.copied,
                "test_info": out.info.text(),
            }, sort_keys=True) + "\n")
    with open(os.path.join(rdir, "test-results.jsonl"), "w") as fh:
        for sid, out in sorted(state.outputs.items()):
            fh.write(json.dumps({
                "id": sid, "category": out.result.category, "passed": out.result.passed,
            }, sort_keys=True) + "\n")
    with open(os.path.join(rdir, "metrics.json"), "w") as fh:
        json.dump(
            {split: m.to_dict() for split, m in sorted(state.metrics.items())},
            fh, indent=2, sort_keys=True,
        )


ABLATION_VARIANTS = {
    "full": {},
    "no-test-info": {"disable_test_info": True},
    "no-code-encoder": {"disable_code_encoder": True},
    "base": {"disable_test_info": True, "disable_code_encoder": True},
}


def ablation(
    splits: dict[str, Corpus],
    estimator_factory,
    n_rounds: int,
    variants: list[str] | None = None,
    limits: GenerationLimits | None = None,
    run_dir: str | None = None,
    **kwargs,
) -> dict:
    """Run the pipeline per variant and assemble the variant x round grid.

    ``estimator_factory()`` must return a fresh, identically seeded
    estimator so the variants differ only in the disabled memories.
    """
    chosen = variants or list(ABLATION_VARIANTS)
    grid: dict[str, list[dict]] = {}
    for name in chosen:
        if name not in ABLATION_VARIANTS:
            raise PipelineError(f"unknown ablation variant {name!r}")
        flags = ABLATION_VARIANTS[name]
        sub_dir = os.path.join(run_dir, name) if run_dir else None
        result = run_pipeline(
            splits, estimator_factory(), n_rounds, limits=limits,
            run_dir=sub_dir, **flags, **kwargs,
        )
        grid[name] = [
            {"round": st.round_index,
             "metrics": {s: m.to_dict() for s, m in sorted(st.metrics.items())}}
            for st in result.rounds
        ]
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "ablation.json"), "w") as fh:
            json.dump(grid, fh, indent=2, sort_keys=True)
    return grid
