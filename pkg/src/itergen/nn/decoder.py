"""Expansion-step decoder: tree-path queries fused with all four memories.

Queries are per-step tree paths pushed through a fully-connected layer.
The stack runs, in order: causal self-attention over the step sequence,
attention into the partial-tree reader, the NL reader, the test-info
reader, and the feedback-code reader, a second independent pass over the
tree and NL memories, and a wide feed-forward layer.  Heads on top emit
the action distribution, a pointer distribution over NL positions, and
the generate-vs-copy gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import HiddenSequence, ModelConfig, FeedForward, MultiHeadAttention, Sublayer, positional_encoding
from .encoders import _causal_mask


@dataclass
class EncoderOutputs:
    """All memories the decoder fuses; zero-length means "not available"."""

    nl: HiddenSequence
    ast: HiddenSequence
    test_info: HiddenSequence
    code: HiddenSequence


@dataclass
class RulePrediction:
    """Distributions for one expansion step."""

    rule_dist: torch.Tensor   # (n_actions,) sums to 1 over legal entries
    copy_dist: torch.Tensor   # (L_nl,) sums to 1 over valid NL positions
    copy_gate: float          # in [0, 1]


class PathEmbedding(nn.Module):
    """Pad/truncate the root-to-frontier kind chain and map it to one query."""

    def __init__(self, d: int, path_max: int, n_kinds: int):
        super().__init__()
        self.path_max = path_max
        self.kinds = nn.Embedding(n_kinds + 1, d, padding_idx=0)
        self.project = nn.Linear(path_max * d, d)

    def forward(self, path_ids: torch.Tensor) -> torch.Tensor:
        """(B, T, path_max) kind ids -> (B, T, d) queries."""
        b, t, p = path_ids.shape
        if p != self.path_max:
            raise ValueError(f"expected path length {self.path_max}, got {p}")
        emb = self.kinds(path_ids)  # (B, T, P, d)
        return self.project(emb.reshape(b, t, -1))


class DecoderStack(nn.Module):
    def __init__(self, cfg: ModelConfig, n_kinds: int):
        super().__init__()
        self.cfg = cfg
        self.path_embed = PathEmbedding(cfg.d, cfg.path_max, n_kinds)
        self.self_attn = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.attn_ast = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.attn_nl = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.attn_test = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.attn_code = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.attn_ast_2 = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.attn_nl_2 = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.ff = FeedForward(cfg.d, cfg.ff_first, cfg.dropout)
        self.subs = nn.ModuleList(Sublayer(cfg.d, cfg.dropout) for _ in range(8))
        self.final_norm = nn.LayerNorm(cfg.d)

    def forward(
        self,
        path_ids: torch.Tensor,
        memories: EncoderOutputs,
        step_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """(B, T, path_max) -> (B, T, d) decoder states, causal over steps."""
        x = self.path_embed(path_ids)
        b, t, d = x.shape
        pe = positional_encoding(0, t, d, dtype=x.dtype, device=x.device)
        x = x + pe.unsqueeze(0)
        if step_mask is None:
            step_mask = torch.ones(b, t, dtype=torch.bool, device=x.device)
        x = x * step_mask.unsqueeze(-1)
        causal = _causal_mask(t, x.device)
        # step i may read partial-tree rows j < i (row j encodes action j)
        strict = torch.tril(
            torch.ones(t, memories.ast.length, dtype=torch.bool, device=x.device),
            diagonal=-1,
        )
        layers = [
            lambda y: self.self_attn(y, y, y, key_mask=step_mask, attn_mask=causal),
            lambda y: self.attn_ast(
                y, memories.ast.states, memories.ast.states,
                key_mask=memories.ast.mask, attn_mask=strict,
            ),
            lambda y: self.attn_nl(
                y, memories.nl.states, memories.nl.states, key_mask=memories.nl.mask
            ),
            lambda y: self.attn_test(
                y, memories.test_info.states, memories.test_info.states,
                key_mask=memories.test_info.mask,
            ),
            lambda y: self.attn_code(
                y, memories.code.states, memories.code.states,
                key_mask=memories.code.mask,
            ),
            lambda y: self.attn_ast_2(
                y, memories.ast.states, memories.ast.states,
                key_mask=memories.ast.mask, attn_mask=strict,
            ),
            lambda y: self.attn_nl_2(
                y, memories.nl.states, memories.nl.states, key_mask=memories.nl.mask
            ),
            self.ff,
        ]
        for sub, layer in zip(self.subs, layers):
            x = sub(x, layer)
            x = x * step_mask.unsqueeze(-1)
        return self.final_norm(x)


class PointerHead(nn.Module):
    """Additive pointer scores over NL positions plus the mixing gate."""

    def __init__(self, d: int):
        super().__init__()
        self.map_state = nn.Linear(d, d)
        self.map_memory = nn.Linear(d, d)
        self.score = nn.Linear(d, 1)
        self.gate = nn.Linear(d, 1)

    def forward(
        self, states: torch.Tensor, nl: HiddenSequence
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """states (B,T,d) -> copy_dist (B,T,L_nl), copy_gate (B,T)."""
        b, t, d = states.shape
        if nl.length == 0:
            return (
                states.new_zeros(b, t, 0),
                torch.sigmoid(self.gate(states)).squeeze(-1),
            )
        mixed = torch.tanh(
            self.map_state(states).unsqueeze(2) + self.map_memory(nl.states).unsqueeze(1)
        )
        scores = self.score(mixed).squeeze(-1)  # (B, T, L)
        scores = scores.masked_fill(~nl.mask.unsqueeze(1), float("-inf"))
        dist = torch.softmax(scores, dim=-1)
        dist = torch.where(
            nl.mask.any(dim=-1, keepdim=True).unsqueeze(1), dist, torch.zeros_like(dist)
        )
        gate = torch.sigmoid(self.gate(states)).squeeze(-1)
        return dist, gate


def terminal_fill(pred: RulePrediction, nl_tokens: tuple[str, ...], vocab) -> str:
    """Argmax over the mixed copy/generate distribution of concrete tokens."""
    scores: dict[str, float] = {}
    n_rules = pred.rule_dist.shape[0] - len(vocab)
    gen = pred.rule_dist[n_rules:]
    for idx in range(len(vocab)):
        p = float(gen[idx]) * (1.0 - pred.copy_gate)
        if p > 0:
            token = vocab.decode(idx)
            scores[token] = scores.get(token, 0.0) + p
    for pos, token in enumerate(nl_tokens):
        p = float(pred.copy_dist[pos]) * pred.copy_gate
        if p > 0:
            scores[token] = scores.get(token, 0.0) + p
    if not scores:
        return vocab.decode(vocab.unk_id)
    # deterministic tie-break on the token text
    return max(scores.items(), key=lambda kv: (kv[1], kv[0]))[0]
