"""Decoder: path queries, masked distributions, search, and trainability."""

import math
import random

import pytest
import torch

from itergen.corpus import generate_synthetic_corpus
from itergen.grammar import (
    ApplyRule,
    FillTerminal,
    load_grammar,
    replay_with_paths,
    rules_to_ast,
)
from itergen.model import CodeGenerator
from itergen.nn.batching import ActionSpace, collate, prepare_sample
from itergen.nn.core import HiddenSequence, ModelConfig
from itergen.nn.decoder import EncoderOutputs, PathEmbedding, RulePrediction, terminal_fill
from itergen.nn.net import GeneratedOutput, GenerationLimits, Seq2TreeNet, generate
from itergen.pycode import grammar_from_corpus
from itergen.textdata import EncodedSample, Vocab, Vocabs, encode_sample, tokenize

CFG = ModelConfig(
    d=16, n_heads=2, window=3, conv_layers=1, nl_blocks=1, ast_blocks=1,
    test_blocks=1, code_blocks=1, ff_first=32, dropout=0.0, s_max=4, path_max=6,
)


def _tiny_setup(n=8, seed=1):
    corpus = generate_synthetic_corpus(n=n, seed=seed)
    grammar = grammar_from_corpus([r.code for r in corpus.records])
    samples = [encode_sample(r.id, r.nl, r.code, grammar) for r in corpus.records]
    est = CodeGenerator(
        grammar=grammar, d=16, n_heads=2, window=3, conv_layers=1, nl_blocks=1,
        ast_blocks=1, test_blocks=1, code_blocks=1, ff_first=32, dropout=0.0,
        s_max=4, path_max=6, epochs=1, batch_size=4, seed=0, min_freq_text=1,
    )
    est._ensure_net(samples)
    return corpus, grammar, samples, est


# --- path embedding ----------------------------------------------------------


def test_path_embedding_single_node():
    pe = PathEmbedding(d=8, path_max=4, n_kinds=10)
    out = pe(torch.tensor([[[0, 0, 0, 3]]]))
    assert out.shape == (1, 1, 8)


def test_path_embedding_order_sensitivity():
    pe = PathEmbedding(d=8, path_max=4, n_kinds=10).eval()
    a = pe(torch.tensor([[[0, 0, 2, 3]]]))
    b = pe(torch.tensor([[[0, 0, 3, 2]]]))
    assert not torch.allclose(a, b)


def test_fig_one_assign_path_has_length_four():
    _, grammar, samples, est = _tiny_setup()
    # paths recorded during replay: depth grows root -> Module -> body -> stmt
    _, steps = replay_with_paths(samples[0].target_rules, grammar)
    kinds = [p.kinds() for _, p in steps]
    assert any(k[:4] == ("root", "Module", "body", "Assign") and len(k) == 4 for k in kinds)


# --- decode_step -------------------------------------------------------------


def _first_step_prediction(est, grammar, sample, kind="root"):
    prepared = prepare_sample(sample, est.space_, grammar, est.path_max, need_target=False)
    net = est.net_.eval()
    batch = collate([prepared], est.space_, est.path_max)
    nl = net.encode_nl(batch.nl_ids, batch.nl_mask, batch.nl_char_ids)
    empty = HiddenSequence.empty(1, est.d)
    memories = EncoderOutputs(nl=nl, ast=empty, test_info=empty, code=empty)
    row = est.space_.path_ids(replay_with_paths(sample.target_rules, grammar)[1][0][1], est.path_max)
    return net.decode_step(torch.tensor([[row]], dtype=torch.long), memories, kind)


def test_decode_step_valid_distribution_with_empty_memories():
    _, grammar, samples, est = _tiny_setup()
    pred = _first_step_prediction(est, grammar, samples[0])
    assert pred.rule_dist.sum().item() == pytest.approx(1.0, abs=1e-6)
    assert (pred.rule_dist >= 0).all()
    assert 0.0 <= pred.copy_gate <= 1.0
    assert pred.copy_dist.sum().item() == pytest.approx(1.0, abs=1e-6)


def test_decode_step_masks_illegal_actions():
    _, grammar, samples, est = _tiny_setup()
    pred = _first_step_prediction(est, grammar, samples[0], kind="root")
    legal = set(grammar.legal_rule_ids("root"))
    for rid in range(len(grammar)):
        if rid not in legal:
            assert pred.rule_dist[rid].item() == 0.0
    assert pred.rule_dist[len(grammar):].sum().item() == 0.0  # terminals illegal here


def test_decode_step_terminal_kind_masks_all_rules():
    _, grammar, samples, est = _tiny_setup()
    pred = _first_step_prediction(est, grammar, samples[0], kind="t_ident")
    assert pred.rule_dist[: len(grammar)].sum().item() == 0.0
    assert pred.rule_dist.sum().item() == pytest.approx(1.0, abs=1e-6)


# --- terminal fill -----------------------------------------------------------


def _fill_pred(n_rules, vocab, gen, copy, gate):
    dist = torch.zeros(n_rules + len(vocab))
    for tok, p in gen.items():
        dist[n_rules + vocab.encode(tok)] = p
    cdist = torch.zeros(len(copy))
    for i, p in enumerate(copy):
        cdist[i] = p
    return RulePrediction(rule_dist=dist, copy_dist=cdist, copy_gate=gate)


def test_terminal_fill_pure_copy():
    vocab = Vocab(["alpha", "beta"])
    pred = _fill_pred(0, vocab, {"alpha": 1.0}, [0.0, 0.0, 1.0], gate=1.0)
    assert terminal_fill(pred, ("x", "y", "z"), vocab) == "z"


def test_terminal_fill_pure_generation():
    vocab = Vocab(["alpha", "beta"])
    pred = _fill_pred(0, vocab, {"beta": 0.9, "alpha": 0.1}, [1.0, 0.0], gate=0.0)
    assert terminal_fill(pred, ("x", "y"), vocab) == "beta"


def test_terminal_fill_mixed_matches_enumeration_oracle():
    rng = random.Random(5)
    vocab = Vocab(["aa", "bb", "cc"])
    nl_tokens = ("aa", "zz", "bb")
    for _ in range(50):
        gate = rng.random()
        gen_raw = [rng.random() for _ in range(3)]
        z = sum(gen_raw)
        gen = {t: p / z for t, p in zip(("aa", "bb", "cc"), gen_raw)}
        copy_raw = [rng.random() for _ in range(3)]
        z2 = sum(copy_raw)
        copy = [p / z2 for p in copy_raw]
        pred = _fill_pred(0, vocab, gen, copy, gate)
        # oracle: enumerate the combined distribution over concrete tokens
        combined: dict[str, float] = {}
        for tok, p in gen.items():
            combined[tok] = combined.get(tok, 0.0) + (1 - gate) * p
        for pos, tok in enumerate(nl_tokens):
            combined[tok] = combined.get(tok, 0.0) + gate * copy[pos]
        want = max(combined.items(), key=lambda kv: (kv[1], kv[0]))[0]
        assert terminal_fill(pred, nl_tokens, vocab) == want


# --- generation --------------------------------------------------------------


def test_generate_single_forced_derivation_ignores_parameters():
    # grammar with exactly one choice at every step
    g = load_grammar("root -> S\nS -> t_x\n")
    vocabs = Vocabs(
        text=Vocab(["go"]), chars=Vocab(list("gox")), terminals=Vocab(["only"]), s_max=4
    )
    space = ActionSpace(g, vocabs)
    cfg = ModelConfig(
        d=8, n_heads=2, window=1, conv_layers=1, nl_blocks=1, ast_blocks=1,
        test_blocks=1, code_blocks=1, ff_first=16, dropout=0.0, s_max=4, path_max=4,
    )
    net = Seq2TreeNet(cfg, space, seed=123)
    sample = EncodedSample(sample_id="t", nl=tokenize("go"))
    prepared = prepare_sample(sample, space, g, cfg.path_max, need_target=False)
    out = generate(
        net, g, prepared, GenerationLimits(max_actions=10),
        printer=lambda tree, grammar: "<toy>",
    )
    assert out.complete
    assert [a for a in out.rules.actions[:2]] == [ApplyRule(0), ApplyRule(1)]
    assert isinstance(out.rules.actions[2], FillTerminal)
    tree = rules_to_ast(out.rules, g)
    assert tree.children[0].children[0].token == out.rules.actions[2].token


def test_generate_max_actions_flags_partial():
    _, grammar, samples, est = _tiny_setup()
    out = est.predict(samples[:1], GenerationLimits(max_actions=1))[0]
    assert not out.complete
    assert out.rules.partial
    assert len(out.rules) <= 1


def test_generate_legal_replay_even_untrained():
    _, grammar, samples, est = _tiny_setup()
    outs = est.predict(samples[:3], GenerationLimits(max_actions=40))
    for out in outs:
        rules_to_ast(out.rules, grammar)  # no IllegalExpansion


def test_generate_with_empty_description():
    # no NL tokens: the pointer has nothing to point at; generation must
    # still run on the vocabulary side alone
    _, grammar, _, est = _tiny_setup()
    sample = EncodedSample(sample_id="edge", nl=tokenize(""))
    out = est.predict([sample], GenerationLimits(max_actions=30))[0]
    rules_to_ast(out.rules, grammar)


def test_beam_width_two_runs_and_scores():
    _, grammar, samples, est = _tiny_setup()
    out = est.predict(samples[:1], GenerationLimits(max_actions=40, beam_width=2))[0]
    assert isinstance(out, GeneratedOutput)
    rules_to_ast(out.rules, grammar)


def test_teacher_forced_loss_decreases_on_toy_corpus():
    corpus = generate_synthetic_corpus(n=5, seed=3)
    grammar = grammar_from_corpus([r.code for r in corpus.records])
    samples = [encode_sample(r.id, r.nl, r.code, grammar) for r in corpus.records]
    est = CodeGenerator(
        grammar=grammar, d=16, n_heads=2, window=3, conv_layers=1, nl_blocks=1,
        ast_blocks=1, test_blocks=1, code_blocks=1, ff_first=32, dropout=0.0,
        s_max=4, path_max=6, epochs=50, batch_size=5, seed=0, min_freq_text=1,
    )
    est.fit(samples)
    first = sum(est.loss_log_[:5]) / 5
    last = sum(est.loss_log_[-5:]) / 5
    assert last < first
