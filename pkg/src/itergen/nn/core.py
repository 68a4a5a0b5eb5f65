"""Differentiable building blocks: block-indexed positional encoding,
multi-head attention, character gating, and windowed convolution, plus the
pre-norm residual sublayer wrapper they all share.

Everything operates on batched sequences (B, L, d) with a boolean validity
mask (B, L); masked positions are zeroed after every sublayer so they never
contribute to attention or convolution outputs.  Zero-length memories are
legal everywhere and contribute exactly nothing, which is what makes the
round-1 "no feedback yet" case a plain special case instead of a branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..validation import check_config


@dataclass(frozen=True)
class ModelConfig:
    """Every hyperparameter one model needs, with small-scale defaults
    overridable up to the reference setting (d=256, blocks 6/5/6/5,
    ff_first=1024, dropout 0.15, 3 rounds)."""

    d: int = 256
    n_heads: int = 8
    window: int = 3
    conv_layers: int = 2
    nl_blocks: int = 6
    ast_blocks: int = 5
    test_blocks: int = 6
    code_blocks: int = 5
    ff_first: int = 1024
    dropout: float = 0.15
    l_max: int = 512
    s_max: int = 16
    path_max: int = 16
    n_rounds: int = 3

    def __post_init__(self):
        check_config(self)

    @property
    def d_head(self) -> int:
        return self.d // self.n_heads

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class HiddenSequence:
    """(B, L, d) states plus the (B, L) validity mask."""

    states: torch.Tensor
    mask: torch.Tensor

    @property
    def length(self) -> int:
        return self.states.shape[1]

    @classmethod
    def empty(cls, batch: int, d: int, dtype=torch.float32, device="cpu") -> "HiddenSequence":
        return cls(
            states=torch.zeros(batch, 0, d, dtype=dtype, device=device),
            mask=torch.zeros(batch, 0, dtype=torch.bool, device=device),
        )

    def zero_masked(self) -> "HiddenSequence":
        return HiddenSequence(self.states * self.mask.unsqueeze(-1), self.mask)


def positional_encoding(
    block: int, length: int, d: int, dtype=torch.float32, device="cpu"
) -> torch.Tensor:
    """(length, d) block-shifted sinusoid table.

    Even entries are sin((i+b)/10000^(2j/d)), odd entries the matching cos;
    the block index shifts the phase so every block sees distinct positions.
    """
    if block < 0 or length < 0:
        raise ValueError("block and length must be non-negative")
    pos = torch.arange(length, dtype=dtype, device=device) + float(block)
    j2 = torch.arange(0, d, 2, dtype=dtype, device=device)
    angle = pos.unsqueeze(1) / torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), j2 / d)
    table = torch.zeros(length, d, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle)
    return table


def _init_linear(linear: nn.Linear, generator: torch.Generator | None = None) -> None:
    # uniform at 1/sqrt(fan-in)
    fan_in = linear.weight.shape[1]
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        linear.weight.uniform_(-bound, bound, generator=generator)
        if linear.bias is not None:
            linear.bias.uniform_(-bound, bound, generator=generator)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with head split/concat and output map."""

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads != 0:
            raise ValueError("d must be divisible by the head count")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)
        self.w_out = nn.Linear(d, d, bias=False)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        return x.view(b, l, self.n_heads, self.d_head).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        key_mask: torch.Tensor | None = None,
        attn_mask: torch.Tensor | None = None,
        return_weights: bool = False,
    ):
        """query (B,Lq,d); key/value (B,Lk,d); key_mask (B,Lk) True=valid;
        attn_mask (Lq,Lk) True=allowed."""
        b, lq, _ = query.shape
        lk = key.shape[1]
        if lk == 0:
            out = query.new_zeros(b, lq, self.d)
            return (out, query.new_zeros(b, self.n_heads, lq, 0)) if return_weights else out
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(key))
        v = self._split(self.w_v(value))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        allowed = scores.new_ones(b, 1, lq, lk, dtype=torch.bool)
        if key_mask is not None:
            allowed = allowed & key_mask.view(b, 1, 1, lk)
        if attn_mask is not None:
            allowed = allowed & attn_mask.view(1, 1, lq, lk)
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        # rows with no allowed key contribute nothing instead of NaN
        weights = torch.where(allowed.any(dim=-1, keepdim=True), weights, torch.zeros_like(weights))
        out = weights @ v
        out = out.transpose(1, 2).contiguous().view(b, lq, self.d)
        out = self.w_out(out)
        return (out, weights) if return_weights else out


class CharGating(nn.Module):
    """Two-way softmax gate between word-level states and character features.

    Per token and head: scores are the plain dot products of a control
    vector against word-side and char-side keys; the resulting pair of
    convex weights mixes the two value projections, and heads are
    concatenated and remapped exactly like attention heads.
    """

    def __init__(self, d: int, n_heads: int, s_max: int, char_dim: int | None = None):
        super().__init__()
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.s_max = s_max
        self.char_dim = char_dim or d
        self.w_char = nn.Linear(s_max * self.char_dim, d, bias=False)
        self.w_query = nn.Linear(d, d, bias=False)
        self.w_key_word = nn.Linear(d, d, bias=False)
        self.w_key_char = nn.Linear(d, d, bias=False)
        self.w_val_word = nn.Linear(d, d, bias=False)
        self.w_val_char = nn.Linear(d, d, bias=False)
        self.w_out = nn.Linear(d, d, bias=False)

    def char_features(self, char_embeds: torch.Tensor) -> torch.Tensor:
        """(B, L, S, char_dim) -> (B, L, d) via the concat projection."""
        b, l, s, cd = char_embeds.shape
        if s != self.s_max or cd != self.char_dim:
            raise ValueError(
                f"char embeddings must be (B, L, {self.s_max}, {self.char_dim})"
            )
        return self.w_char(char_embeds.reshape(b, l, s * cd))

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        return x.view(b, l, self.n_heads, self.d_head)

    def forward(
        self,
        word_states: torch.Tensor,
        char_embeds: torch.Tensor,
        return_alpha: bool = False,
    ):
        n_char = self.char_features(char_embeds)
        q = self._split(self.w_query(word_states))
        k_word = self._split(self.w_key_word(word_states))
        k_char = self._split(self.w_key_char(n_char))
        v_word = self._split(self.w_val_word(word_states))
        v_char = self._split(self.w_val_char(n_char))
        score_word = (q * k_word).sum(-1)
        score_char = (q * k_char).sum(-1)
        alpha = torch.softmax(torch.stack((score_word, score_char), dim=-1), dim=-1)
        mixed = alpha[..., :1] * v_word + alpha[..., 1:] * v_char
        b, l, _, _ = mixed.shape
        out = self.w_out(mixed.reshape(b, l, self.d))
        return (out, alpha) if return_alpha else out


class WindowConv(nn.Module):
    """Stack of linear sliding-window maps over the sequence axis.

    Each layer applies one weight to the concatenated (2w+1)-neighborhood
    with zero padding at the edges; ``causal`` uses a left-only window of
    the same size so position i never sees positions after i.
    """

    def __init__(self, d: int, window: int, layers: int, causal: bool = False):
        super().__init__()
        if window % 2 == 0 or window < 1:
            raise ValueError("window size must be odd and positive")
        self.window = window
        self.causal = causal
        self.convs = nn.ModuleList(
            nn.Conv1d(d, d, kernel_size=window, padding=0, bias=False)
            for _ in range(layers)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[1] == 0:
            return x
        w = (self.window - 1) // 2
        pad = (self.window - 1, 0) if self.causal else (w, w)
        out = x
        for conv in self.convs:
            if mask is not None:
                out = out * mask.unsqueeze(-1)
            out = F.pad(out.transpose(1, 2), pad)
            out = conv(out).transpose(1, 2)
        return out


class Sublayer(nn.Module):
    """Pre-norm residual wrapper: x + dropout(f(layer_norm(x)))."""

    def __init__(self, d: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, f) -> torch.Tensor:
        return x + self.drop(f(self.norm(x)))


class FeedForward(nn.Module):
    """Two-layer map, wide gelu first layer then back to d."""

    def __init__(self, d: int, hidden: int, dropout: float):
        super().__init__()
        self.lift = nn.Linear(d, hidden)
        self.drop = nn.Dropout(dropout)
        self.lower = nn.Linear(hidden, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lower(self.drop(F.gelu(self.lift(x))))


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic uniform fan-in init for every linear/embedding/conv."""
    generator = torch.Generator().manual_seed(seed)
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            _init_linear(sub, generator)
        elif isinstance(sub, nn.Embedding):
            with torch.no_grad():
                bound = 1.0 / math.sqrt(sub.embedding_dim)
                sub.weight.uniform_(-bound, bound, generator=generator)
                if sub.padding_idx is not None:
                    sub.weight[sub.padding_idx].fill_(0)
        elif isinstance(sub, nn.Conv1d):
            with torch.no_grad():
                fan_in = sub.in_channels * sub.kernel_size[0]
                bound = 1.0 / math.sqrt(fan_in)
                sub.weight.uniform_(-bound, bound, generator=generator)
                if sub.bias is not None:
                    sub.bias.uniform_(-bound, bound, generator=generator)
        elif isinstance(sub, nn.LayerNorm):
            with torch.no_grad():
                sub.weight.fill_(1.0)
                sub.bias.fill_(0.0)
