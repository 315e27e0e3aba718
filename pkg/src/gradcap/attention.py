"""Additive attention over region features, plain (MLP) and LSTM-driven.

Scores follow ``score_i = w^T tanh(U_v v_i + U_h h)`` with ``U_v`` shared over
regions, then a softmax over the k regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .encoder import DTYPE


def uniform_(p: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    s = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        p.copy_((torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 - 1) * s)


def init_linear_(layer: nn.Linear, generator: torch.Generator) -> None:
    uniform_(layer.weight, layer.in_features, generator)
    if layer.bias is not None:
        uniform_(layer.bias, layer.in_features, generator)


def init_lstm_cell_(cell: nn.LSTMCell, generator: torch.Generator, forget_bias: float = 1.0) -> None:
    n = cell.hidden_size
    uniform_(cell.weight_ih, cell.input_size, generator)
    uniform_(cell.weight_hh, n, generator)
    with torch.no_grad():
        cell.bias_ih.zero_()
        cell.bias_hh.zero_()
        cell.bias_ih[n : 2 * n] = forget_bias  # gate order i, f, g, o


@dataclass
class DecoderState:
    h_att: torch.Tensor  # (B, n_att); unused (zero-width) for the MLP variant
    c_att: torch.Tensor
    h_lang: torch.Tensor  # (B, n)
    c_lang: torch.Tensor
    prev_token: torch.Tensor  # (B,) long

    def select(self, index: torch.Tensor) -> "DecoderState":
        return DecoderState(self.h_att[index], self.c_att[index], self.h_lang[index],
                            self.c_lang[index], self.prev_token[index])


class AdditiveAttention(nn.Module):
    def __init__(self, feature_dim: int, hidden_dim: int, att_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.feat = nn.Linear(feature_dim, att_dim, dtype=DTYPE)
        self.hidden = nn.Linear(hidden_dim, att_dim, bias=False, dtype=DTYPE)
        self.score = nn.Linear(att_dim, 1, bias=False, dtype=DTYPE)
        g = generator if generator is not None else torch.Generator().manual_seed(0)
        for layer in (self.feat, self.hidden, self.score):
            init_linear_(layer, g)

    def scores(self, V: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        """V (B, k, d), h (B, n) -> unnormalised scores (B, k)."""
        if V.shape[-1] != self.feat.in_features or h.shape[-1] != self.hidden.in_features:
            raise ValueError(
                f"attention expects features of width {self.feat.in_features} and hidden of width "
                f"{self.hidden.in_features}, got {V.shape[-1]} and {h.shape[-1]}"
            )
        pre = self.feat(V) + self.hidden(h).unsqueeze(-2)
        return self.score(torch.tanh(pre)).squeeze(-1)

    def forward(self, V: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.scores(V, h), dim=-1)


def mlp_attention(V: torch.Tensor, h_prev: torch.Tensor, params: AdditiveAttention) -> torch.Tensor:
    """Attention conditioned directly on the previous hidden state. Accepts unbatched inputs."""
    single = V.dim() == 2
    if single:
        V, h_prev = V.unsqueeze(0), h_prev.unsqueeze(0)
    alpha = params(V, h_prev)
    return alpha[0] if single else alpha


class AttentionLSTM(nn.Module):
    """Top-down attention LSTM fed with [h_lang; mean region feature; word embedding]."""

    def __init__(self, feature_dim: int, embed_dim: int, lang_hidden: int, att_hidden: int,
                 att_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        g = generator if generator is not None else torch.Generator().manual_seed(0)
        self.cell = nn.LSTMCell(lang_hidden + feature_dim + embed_dim, att_hidden, dtype=DTYPE)
        init_lstm_cell_(self.cell, g)
        self.attention = AdditiveAttention(feature_dim, att_hidden, att_dim, g)

    def forward(self, V: torch.Tensor, state: DecoderState, prev_embedding: torch.Tensor):
        v_mean = V.mean(dim=-2)
        x = torch.cat([state.h_lang, v_mean, prev_embedding], dim=-1)
        if x.shape[-1] != self.cell.input_size:
            raise ValueError(f"attention LSTM input width {x.shape[-1]} != {self.cell.input_size}")
        h_att, c_att = self.cell(x, (state.h_att, state.c_att))
        alpha = self.attention(V, h_att)
        new_state = DecoderState(h_att, c_att, state.h_lang, state.c_lang, state.prev_token)
        return alpha, new_state


def lstm_attention(V: torch.Tensor, state: DecoderState, prev_embedding: torch.Tensor, module: AttentionLSTM):
    return module(V, state, prev_embedding)


def attend(V: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Attention-weighted sum of region features: (..., k, d), (..., k) -> (..., d)."""
    if V.shape[:-1] != alpha.shape:
        raise ValueError(f"features {tuple(V.shape)} and attention {tuple(alpha.shape)} disagree on regions")
    return (alpha.unsqueeze(-1) * V).sum(dim=-2)
