"""The four sequence encoders.

The text readers (natural language and test information) stack blocks of
self-attention, character gating, and windowed convolution.  The action
reader over the partial tree's applied rules drops the gating (rules have
no characters) and is fully causal so one teacher-forced pass matches
step-by-step generation.  The feedback-code encoder replaces gating with
cross-attention into the test-information memory.

Every block adds its own block-shifted positional table to its input, and
every sublayer output is re-masked so padding stays exactly zero.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import (
    CharGating,
    HiddenSequence,
    ModelConfig,
    MultiHeadAttention,
    Sublayer,
    WindowConv,
    positional_encoding,
)


def _causal_mask(length: int, device) -> torch.Tensor:
    return torch.tril(torch.ones(length, length, dtype=torch.bool, device=device))


class TextEncoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, use_gating: bool, causal: bool):
        super().__init__()
        self.causal = causal
        self.self_attn = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.sub_attn = Sublayer(cfg.d, cfg.dropout)
        self.gate = CharGating(cfg.d, cfg.n_heads, cfg.s_max) if use_gating else None
        self.sub_gate = Sublayer(cfg.d, cfg.dropout) if use_gating else None
        self.conv = WindowConv(cfg.d, cfg.window, cfg.conv_layers, causal=causal)
        self.sub_conv = Sublayer(cfg.d, cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        block_index: int,
        char_embeds: torch.Tensor | None = None,
        cross: "CrossAttachment | None" = None,
    ) -> torch.Tensor:
        b, length, d = x.shape
        pe = positional_encoding(block_index, length, d, dtype=x.dtype, device=x.device)
        x = (x + pe.unsqueeze(0)) * mask.unsqueeze(-1)
        attn_mask = _causal_mask(length, x.device) if self.causal else None
        x = self.sub_attn(
            x, lambda y: self.self_attn(y, y, y, key_mask=mask, attn_mask=attn_mask)
        )
        x = x * mask.unsqueeze(-1)
        if self.gate is not None:
            x = self.sub_gate(x, lambda y: self.gate(y, char_embeds))
            x = x * mask.unsqueeze(-1)
        if cross is not None:
            x = cross(x)
            x = x * mask.unsqueeze(-1)
        x = self.sub_conv(x, lambda y: self.conv(y, mask=mask))
        return x * mask.unsqueeze(-1)


class CrossAttachment(nn.Module):
    """Cross-attention sublayer bound to a fixed memory at call time."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d, cfg.n_heads)
        self.sub = Sublayer(cfg.d, cfg.dropout)
        self._memory: HiddenSequence | None = None

    def bind(self, memory: HiddenSequence) -> "CrossAttachment":
        self._memory = memory
        return self

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        memory = self._memory
        # zero-length memory: attention output is exactly zero, so the
        # sublayer reduces to the identity and round 1 needs no branch
        return self.sub(
            x,
            lambda y: self.attn(
                y, memory.states, memory.states, key_mask=memory.mask
            ),
        )


class TextEncoder(nn.Module):
    """Stack for the NL reader and the test-information reader."""

    def __init__(self, cfg: ModelConfig, blocks: int, use_gating: bool = True,
                 causal: bool = False):
        super().__init__()
        self.l_max = cfg.l_max
        self.blocks = nn.ModuleList(
            TextEncoderBlock(cfg, use_gating=use_gating, causal=causal)
            for _ in range(blocks)
        )

    def forward(
        self,
        embeddings: torch.Tensor,
        mask: torch.Tensor,
        char_embeds: torch.Tensor | None = None,
    ) -> HiddenSequence:
        if embeddings.shape[1] > self.l_max:
            raise ValueError(f"sequence length {embeddings.shape[1]} exceeds {self.l_max}")
        x = embeddings * mask.unsqueeze(-1)
        for b, block in enumerate(self.blocks):
            x = block(x, mask, block_index=b, char_embeds=char_embeds)
        return HiddenSequence(states=x, mask=mask)


class CodeEncoder(nn.Module):
    """Feedback-code reader: self-attention, test-info fusion, convolution."""

    def __init__(self, cfg: ModelConfig, blocks: int):
        super().__init__()
        self.l_max = cfg.l_max
        self.blocks = nn.ModuleList(
            TextEncoderBlock(cfg, use_gating=False, causal=False) for _ in range(blocks)
        )
        self.fusions = nn.ModuleList(CrossAttachment(cfg) for _ in range(blocks))

    def forward(
        self,
        embeddings: torch.Tensor,
        mask: torch.Tensor,
        test_memory: HiddenSequence,
    ) -> HiddenSequence:
        if embeddings.shape[1] > self.l_max:
            raise ValueError(f"sequence length {embeddings.shape[1]} exceeds {self.l_max}")
        x = embeddings * mask.unsqueeze(-1)
        for b, (block, fusion) in enumerate(zip(self.blocks, self.fusions)):
            x = block(x, mask, block_index=b, cross=fusion.bind(test_memory))
        return HiddenSequence(states=x, mask=mask)
