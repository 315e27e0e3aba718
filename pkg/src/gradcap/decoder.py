"""Two-LSTM captioner (attention LSTM + language LSTM) and decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .attention import (AdditiveAttention, AttentionLSTM, DecoderState, attend,
                        init_linear_, init_lstm_cell_, uniform_)
from .corpus import END_ID, PAD_ID, START_ID
from .encoder import DTYPE

BANNED_TOKENS = (PAD_ID, START_ID)


@dataclass(frozen=True)
class CaptionerConfig:
    vocab_size: int
    feature_dim: int = 64
    embed_dim: int = 32
    hidden_dim: int = 64
    att_hidden_dim: int = 64
    att_dim: int = 64
    attention: str = "lstm"  # or "mlp"

    def __post_init__(self):
        if self.attention not in ("lstm", "mlp"):
            raise ValueError("attention must be 'lstm' or 'mlp'")
        for name in ("vocab_size", "feature_dim", "embed_dim", "hidden_dim", "att_hidden_dim", "att_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class Captioner(nn.Module):
    def __init__(self, config: CaptionerConfig, seed: int = 0):
        super().__init__()
        self.config = config
        c = config
        g = torch.Generator().manual_seed(seed)
        self.embedding = nn.Embedding(c.vocab_size, c.embed_dim, dtype=DTYPE)
        uniform_(self.embedding.weight, 1, g)
        if c.attention == "lstm":
            self.att_lstm = AttentionLSTM(c.feature_dim, c.embed_dim, c.hidden_dim, c.att_hidden_dim, c.att_dim, g)
            lang_in = c.feature_dim + c.embed_dim + c.att_hidden_dim
        else:
            self.mlp_att = AdditiveAttention(c.feature_dim, c.hidden_dim, c.att_dim, g)
            lang_in = c.feature_dim + c.embed_dim
        self.lang_lstm = nn.LSTMCell(lang_in, c.hidden_dim, dtype=DTYPE)
        init_lstm_cell_(self.lang_lstm, g)
        self.output = nn.Linear(c.hidden_dim, c.vocab_size, dtype=DTYPE)
        init_linear_(self.output, g)

    @property
    def att_width(self) -> int:
        return self.config.att_hidden_dim if self.config.attention == "lstm" else 0

    def init_state(self, batch: int) -> DecoderState:
        z = lambda n: torch.zeros(batch, n, dtype=DTYPE)
        return DecoderState(z(self.att_width), z(self.att_width), z(self.config.hidden_dim),
                            z(self.config.hidden_dim), torch.full((batch,), START_ID, dtype=torch.long))

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        m = self.config.vocab_size
        if (tokens >= m).any() or (tokens < 0).any():
            raise ValueError(f"token id out of range for vocabulary of size {m}")
        return self.embedding(tokens)

    def attention_step(self, V: torch.Tensor, state: DecoderState, prev_embedding: torch.Tensor):
        if self.config.attention == "lstm":
            return self.att_lstm(V, state, prev_embedding)
        return self.mlp_att(V, state.h_lang), state

    def decode_step(self, context: torch.Tensor, prev_token: torch.Tensor, state: DecoderState,
                    prev_embedding: torch.Tensor | None = None):
        """Language LSTM on [context; embedding; h_att] -> (log-probs (B, m), state)."""
        emb = self.embed(prev_token) if prev_embedding is None else prev_embedding
        parts = [context, emb] + ([state.h_att] if self.config.attention == "lstm" else [])
        h, c = self.lang_lstm(torch.cat(parts, dim=-1), (state.h_lang, state.c_lang))
        logp = torch.log_softmax(self.output(h), dim=-1)
        return logp, DecoderState(state.h_att, state.c_att, h, c, prev_token)

    def step(self, V: torch.Tensor, prev_token: torch.Tensor, state: DecoderState):
        """One full time step: (log-probs, attention (B, k), new state)."""
        emb = self.embed(prev_token)
        alpha, state = self.attention_step(V, state, emb)
        logp, state = self.decode_step(attend(V, alpha), prev_token, state, prev_embedding=emb)
        return logp, alpha, state

    def forward(self, V: torch.Tensor, inputs: torch.Tensor, gt_prob: float = 1.0,
                generator: torch.Generator | None = None):
        """Unrolled decoder over ``inputs`` (B, T), the right-shifted targets.

        With ``gt_prob < 1`` each step after the first feeds, per caption, a token
        sampled from the previous step's distribution instead of the ground truth.
        Returns log-probs (B, T, m) and attention maps (B, T, k).
        """
        B, T = inputs.shape
        state = self.init_state(B)
        logps, alphas = [], []
        prev = inputs[:, 0]
        for t in range(T):
            if t > 0:
                prev = inputs[:, t]
                if gt_prob < 1.0:
                    use_model = torch.rand(B, generator=generator, dtype=DTYPE) >= gt_prob
                    if use_model.any():
                        sampled = torch.multinomial(logps[-1].detach().exp(), 1, generator=generator).squeeze(1)
                        prev = torch.where(use_model, sampled, prev)
            logp, alpha, state = self.step(V, prev, state)
            logps.append(logp)
            alphas.append(alpha)
        return torch.stack(logps, 1), torch.stack(alphas, 1)


@dataclass(frozen=True)
class ScheduleConfig:
    start: float = 1.0
    floor: float = 0.75
    decay_epochs: int = 20


def scheduled_sampling_prob(epoch: int, schedule: ScheduleConfig = ScheduleConfig()) -> float:
    """Probability of feeding the ground-truth previous token at ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.decay_epochs <= 0 or epoch >= schedule.decay_epochs:
        return schedule.floor
    return schedule.start + (schedule.floor - schedule.start) * epoch / schedule.decay_epochs


@dataclass
class DecodeResult:
    tokens: list[int]  # content ids, plus END if completed
    log_prob: float
    truncated: bool
    attention: list[torch.Tensor] = field(default_factory=list)  # one (k,) map per emitted token
    step_log_probs: list[float] = field(default_factory=list)

    @property
    def content(self) -> list[int]:
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == END_ID else list(self.tokens)


def _masked(logp: torch.Tensor) -> torch.Tensor:
    out = logp.clone()
    out[..., list(BANNED_TOKENS)] = float("-inf")
    return out


@torch.no_grad()
def greedy_decode(model: Captioner, V: torch.Tensor, max_len: int = 21) -> DecodeResult:
    V = V.unsqueeze(0)
    state = model.init_state(1)
    prev = state.prev_token
    tokens, attn, steps = [], [], []
    for _ in range(max_len):
        logp, alpha, state = model.step(V, prev, state)
        tok = int(torch.argmax(_masked(logp[0])))
        tokens.append(tok)
        attn.append(alpha[0])
        steps.append(float(logp[0, tok]))
        if tok == END_ID:
            break
        prev = torch.tensor([tok])
    return DecodeResult(tokens, sum(steps), tokens[-1] != END_ID, attn, steps)


@dataclass
class _Hyp:
    tokens: list[int]
    score: float
    steps: list[float]
    attention: list[torch.Tensor]


@torch.no_grad()
def beam_search(model: Captioner, V: torch.Tensor, beam_size: int = 3, max_len: int = 21) -> DecodeResult:
    """Beam search on summed log-probability, no length normalisation.

    Expansions are ranked by score, then by smaller token id, then by parent
    rank. Finished hypotheses leave the beam; the best finished one wins, ties
    going to the earlier completion. Search stops once no live hypothesis can
    beat the best finished score (scores only decrease).
    """
    if beam_size < 1 or max_len < 1:
        raise ValueError("beam_size and max_len must be >= 1")
    m = model.config.vocab_size
    V1 = V.unsqueeze(0)
    live = [_Hyp([], 0.0, [], [])]
    state = model.init_state(1)
    done: list[_Hyp] = []
    for _ in range(max_len):
        n = len(live)
        prev = state.prev_token if not live[0].tokens else torch.tensor([h.tokens[-1] for h in live])
        logp, alpha, state = model.step(V1.expand(n, -1, -1), prev, state)
        total = torch.tensor([h.score for h in live], dtype=DTYPE).unsqueeze(1) + _masked(logp)
        flat = total.reshape(-1)
        finite = torch.isfinite(flat)
        # ordering key: score desc, token asc, parent asc
        cand = [(-float(flat[j]), j % m, j // m) for j in torch.nonzero(finite).flatten().tolist()]
        cand.sort()
        next_live, parents = [], []
        for neg, tok, parent in cand[:beam_size]:
            h = live[parent]
            new = _Hyp(h.tokens + [tok], -neg, h.steps + [float(logp[parent, tok])],
                       h.attention + [alpha[parent]])
            if tok == END_ID:
                done.append(new)
            else:
                next_live.append(new)
                parents.append(parent)
        if not next_live:
            break
        best_done = max((h.score for h in done), default=float("-inf"))
        if best_done >= max(h.score for h in next_live):
            break
        live = next_live
        state = state.select(torch.tensor(parents))
    if done:
        best = done[0]
        for h in done[1:]:
            if h.score > best.score:
                best = h
        return DecodeResult(best.tokens, best.score, False, best.attention, best.steps)
    best = next_live[0]
    return DecodeResult(best.tokens, best.score, True, best.attention, best.steps)


@torch.no_grad()
def sequence_log_prob(model: Captioner, V: torch.Tensor, tokens: list[int]) -> float:
    """Teacher-forced sum of log p(y_t | y_<t) for ``tokens`` (no start token)."""
    inputs = torch.tensor([[START_ID] + tokens[:-1]])
    logp, _ = model(V.unsqueeze(0), inputs)
    idx = torch.tensor(tokens)
    return float(logp[0, torch.arange(len(tokens)), idx].sum())
