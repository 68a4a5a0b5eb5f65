"""The full generation network and its teacher-forced loss.

One module owns the embeddings, the four encoders, the decoder stack, and
the output heads, so a checkpoint is a flat name->tensor map.  Generation
walks the grammar: encode the inputs once, then repeatedly re-encode the
applied-action prefix, embed the frontier's tree path, decode one step,
and apply the best legal action until the tree completes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .. import grammar as G
from ..grammar import ApplyRule, FillTerminal, Grammar, RuleSequence
from .batching import ActionSpace, Batch, PreparedSample, collate
from .core import HiddenSequence, ModelConfig, init_parameters
from .decoder import DecoderStack, EncoderOutputs, PointerHead, RulePrediction
from .encoders import CodeEncoder, TextEncoder


@dataclass(frozen=True)
class GenerationLimits:
    max_actions: int = 350
    beam_width: int = 1

    def __post_init__(self):
        if self.max_actions < 1 or self.beam_width < 1:
            raise ValueError("max_actions and beam_width must be >= 1")


@dataclass
class GeneratedOutput:
    code: str
    rules: RuleSequence
    complete: bool


class Seq2TreeNet(nn.Module):
    def __init__(self, cfg: ModelConfig, space: ActionSpace, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.space = space
        vocabs = space.vocabs
        self.text_embed = nn.Embedding(len(vocabs.text), cfg.d, padding_idx=0)
        self.char_embed = nn.Embedding(len(vocabs.chars), cfg.d, padding_idx=0)
        self.action_embed = nn.Embedding(
            space.n_actions, cfg.d, padding_idx=space.pad_index
        )
        self.nl_encoder = TextEncoder(cfg, cfg.nl_blocks, use_gating=True)
        self.test_encoder = TextEncoder(cfg, cfg.test_blocks, use_gating=True)
        self.ast_encoder = TextEncoder(cfg, cfg.ast_blocks, use_gating=False, causal=True)
        self.code_encoder = CodeEncoder(cfg, cfg.code_blocks)
        self.decoder = DecoderStack(cfg, space.n_kinds)
        self.rule_head = nn.Linear(cfg.d, space.n_actions)
        self.pointer = PointerHead(cfg.d)
        self.register_buffer("legality", space.legality_matrix(), persistent=False)
        init_parameters(self, seed)

    # --- encoding -----------------------------------------------------------

    def encode_nl(self, ids, mask, char_ids) -> HiddenSequence:
        return self.nl_encoder(self.text_embed(ids), mask, self.char_embed(char_ids))

    def encode_test_info(self, ids, mask, char_ids) -> HiddenSequence:
        if ids.shape[1] == 0:
            return HiddenSequence.empty(
                ids.shape[0], self.cfg.d, dtype=self.text_embed.weight.dtype,
                device=ids.device,
            )
        return self.test_encoder(self.text_embed(ids), mask, self.char_embed(char_ids))

    def encode_ast(self, action_ids, mask) -> HiddenSequence:
        if action_ids.shape[1] == 0:
            return HiddenSequence.empty(
                action_ids.shape[0], self.cfg.d,
                dtype=self.action_embed.weight.dtype, device=action_ids.device,
            )
        return self.ast_encoder(self.action_embed(action_ids), mask)

    def encode_code(self, action_ids, mask, test_memory: HiddenSequence) -> HiddenSequence:
        if action_ids.shape[1] == 0:
            return HiddenSequence.empty(
                action_ids.shape[0], self.cfg.d,
                dtype=self.action_embed.weight.dtype, device=action_ids.device,
            )
        return self.code_encoder(self.action_embed(action_ids), mask, test_memory)

    def encode_inputs(self, batch: Batch) -> EncoderOutputs:
        nl = self.encode_nl(batch.nl_ids, batch.nl_mask, batch.nl_char_ids)
        test = self.encode_test_info(batch.test_ids, batch.test_mask, batch.test_char_ids)
        ast = self.encode_ast(batch.target_ids, batch.target_mask)
        code = self.encode_code(batch.code_ids, batch.code_mask, test)
        return EncoderOutputs(nl=nl, ast=ast, test_info=test, code=code)

    # --- teacher-forced loss --------------------------------------------------

    def forward_loss(self, batch: Batch) -> torch.Tensor:
        memories = self.encode_inputs(batch)
        states = self.decoder(batch.path_ids, memories, step_mask=batch.target_mask)
        logits = self.rule_head(states)
        legal = self.legality[batch.step_kind_ids]  # (B, T, n_actions)
        logits = logits.masked_fill(~legal, float("-inf"))
        probs = torch.softmax(logits, dim=-1)
        # padding rows have no legal action; keep them finite
        probs = torch.nan_to_num(probs, nan=0.0)
        p_target = probs.gather(-1, batch.target_ids.unsqueeze(-1)).squeeze(-1)
        copy_dist, gate = self.pointer(states, memories.nl)
        p_copy = (copy_dist * batch.copy_targets).sum(-1)
        p_mixed = gate * p_copy + (1.0 - gate) * p_target
        p = torch.where(batch.step_is_terminal, p_mixed, p_target)
        nll = -torch.log(p.clamp_min(1e-9))
        denom = batch.target_mask.sum().clamp_min(1)
        return (nll * batch.target_mask).sum() / denom

    # --- stepwise decoding ----------------------------------------------------

    def decode_states(
        self, path_ids: torch.Tensor, memories: EncoderOutputs
    ) -> torch.Tensor:
        return self.decoder(path_ids, memories)

    def decode_step(
        self, path_ids: torch.Tensor, memories: EncoderOutputs, frontier_kind: str
    ) -> RulePrediction:
        """Distributions for the latest step; path_ids is (1, T, path_max)."""
        states = self.decode_states(path_ids, memories)
        last = states[:, -1:, :]
        logits = self.rule_head(last)
        row = self.space.kind_index.get(frontier_kind, 0)
        logits = logits.masked_fill(~self.legality[row].view(1, 1, -1), float("-inf"))
        rule_dist = torch.softmax(logits, dim=-1)[0, 0]
        rule_dist = torch.nan_to_num(rule_dist, nan=0.0)
        copy_dist, gate = self.pointer(last, memories.nl)
        return RulePrediction(
            rule_dist=rule_dist,
            copy_dist=copy_dist[0, 0],
            copy_gate=gate[0, 0].detach().item(),
        )


@dataclass
class _Beam:
    actions: list
    paths: list[list[int]]
    tree: G.ASTNode
    score: float
    done: bool = False


@torch.no_grad()
def generate(
    net: Seq2TreeNet,
    grammar: Grammar,
    sample: PreparedSample,
    limits: GenerationLimits | None = None,
    root_kind: str = "root",
    printer=None,
) -> GeneratedOutput:
    """Grammar-constrained search from the encoded inputs of one sample.

    ``printer(tree, grammar) -> str`` renders the finished tree; the default
    is the Python reprinter.
    """
    if printer is None:
        from ..pycode import ast_to_code as printer

    limits = limits or GenerationLimits()
    net.eval()
    space = net.space
    batch = collate([sample], space, net.cfg.path_max)
    nl = net.encode_nl(batch.nl_ids, batch.nl_mask, batch.nl_char_ids)
    test = net.encode_test_info(batch.test_ids, batch.test_mask, batch.test_char_ids)
    code = net.encode_code(batch.code_ids, batch.code_mask, test)

    beams = [_Beam(actions=[], paths=[], tree=G.new_tree(root_kind), score=0.0)]
    for _ in range(limits.max_actions):
        if all(b.done for b in beams):
            break
        proposals: list[tuple[_Beam, object, list, float]] = []
        finished: list[_Beam] = [b for b in beams if b.done]
        for beam in beams:
            if beam.done:
                continue
            node = G.frontier(beam.tree, grammar)
            path = G.tree_path(beam.tree, node)
            path_row = space.path_ids(path, net.cfg.path_max)
            paths = beam.paths + [path_row]
            action_ids = [space.action_index(a) for a in beam.actions]
            ast_mem = net.encode_ast(
                torch.tensor([action_ids], dtype=torch.long),
                torch.ones(1, len(action_ids), dtype=torch.bool),
            )
            memories = EncoderOutputs(nl=nl, ast=ast_mem, test_info=test, code=code)
            pred = net.decode_step(
                torch.tensor([paths], dtype=torch.long), memories, node.kind
            )
            for action, logp in _top_actions(
                pred, node, grammar, space, sample.nl_tokens, limits.beam_width
            ):
                proposals.append((beam, action, paths, beam.score + logp))
        proposals.sort(key=lambda p: -p[3])
        next_beams: list[_Beam] = []
        consumed: set[int] = set()
        for parent, action, paths, score in proposals[: limits.beam_width]:
            if id(parent) in consumed:
                # parent's tree already moved into another branch: replay
                tree = G.rules_to_ast(
                    RuleSequence(actions=tuple(parent.actions)), grammar, root_kind
                )
            else:
                consumed.add(id(parent))
                tree = parent.tree
            new = _Beam(
                actions=parent.actions + [action], paths=paths, tree=tree, score=score,
            )
            G.apply_action(new.tree, action, grammar)
            new.done = G.is_complete(new.tree, grammar)
            next_beams.append(new)
        beams = sorted(finished + next_beams, key=lambda b: -b.score)[: limits.beam_width]
        if not beams:
            break

    best = max(beams, key=lambda b: (b.done, b.score))
    rules = RuleSequence(actions=tuple(best.actions), partial=not best.done)
    if not best.done:
        return GeneratedOutput(code="", rules=rules, complete=False)
    try:
        code_text = printer(best.tree, grammar)
    except Exception:
        return GeneratedOutput(code="", rules=rules, complete=False)
    return GeneratedOutput(code=code_text, rules=rules, complete=True)


def _top_actions(
    pred: RulePrediction,
    node: G.ASTNode,
    grammar: Grammar,
    space: ActionSpace,
    nl_tokens: tuple[str, ...],
    width: int,
):
    """Best legal (action, log-prob) pairs at the current frontier.

    For terminals, only the top-width vocabulary entries and the NL tokens
    can reach the final top width: anything else has strictly less
    generation mass and no copy mass.
    """
    if grammar.is_terminal(node.kind):
        vocab = space.vocabs.terminals
        gen = pred.rule_dist[space.n_rules:]
        gen_part: dict[str, float] = {}
        k = min(max(width, 1), gen.shape[0])
        top = torch.topk(gen, k)
        for p, idx in zip(top.values.tolist(), top.indices.tolist()):
            if p > 0:
                gen_part[vocab.decode(idx)] = p
        for token in set(nl_tokens):
            idx = vocab.token_to_id.get(token)
            if idx is not None:
                gen_part[token] = float(gen[idx])
        scores = {tok: (1.0 - pred.copy_gate) * p for tok, p in gen_part.items()}
        for pos, token in enumerate(nl_tokens):
            p = float(pred.copy_dist[pos]) * pred.copy_gate
            if p > 0:
                scores[token] = scores.get(token, 0.0) + p
        if not scores:
            scores = {vocab.decode(vocab.unk_id): 1.0}
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:width]
        return [(FillTerminal(tok), math.log(max(p, 1e-12))) for tok, p in ranked]
    legal = grammar.legal_rule_ids(node.kind)
    ranked = sorted(legal, key=lambda rid: -float(pred.rule_dist[rid]))[:width]
    return [
        (ApplyRule(rid), math.log(max(float(pred.rule_dist[rid]), 1e-12)))
        for rid in ranked
    ]
