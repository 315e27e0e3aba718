"""Caption likelihood, attention alignment penalty and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class LossConfig:
    lam: float = 100.0
    eps: float = 1e-8
    skip_degenerate: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.eps > 0:
            raise ValueError("epsilon clamp must be > 0")


@dataclass
class LossBreakdown:
    caption_loss: torch.Tensor  # scalar
    alignment_loss: torch.Tensor  # scalar
    total: torch.Tensor  # scalar, differentiable
    lam: float
    caption_steps: torch.Tensor | None = None  # (B, T) or (T,)
    alignment_steps: torch.Tensor | None = None

    def as_floats(self) -> dict[str, float]:
        f = lambda t: float(t.detach())
        return {"caption_loss": f(self.caption_loss), "alignment_loss": f(self.alignment_loss),
                "total": f(self.total), "lambda": self.lam}


def caption_nll(log_probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None):
    """Per-step -log p(target) and its sum over time (padded steps give exactly 0).

    ``log_probs`` (..., T, m), ``targets`` (..., T); returns ``(steps, summed)``.
    """
    m = log_probs.shape[-1]
    if (targets >= m).any() or (targets < 0).any():
        raise ValueError(f"target id out of range for vocabulary of size {m}")
    steps = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if mask is not None:
        steps = torch.where(mask.bool(), steps, torch.zeros_like(steps))
    return steps, steps.sum(dim=-1)


def alignment_loss(alpha_hat, target=None, eps: float = 1e-8):
    """Cross-entropy -sum_i alpha_i log(max(alpha_hat_i, eps)); 0 when there is no target.

    ``target`` may be a :class:`SaliencyTarget`, an array or a tensor. It is
    treated as a constant: no gradient flows into it.
    """
    if target is None:
        return torch.zeros((), dtype=torch.as_tensor(alpha_hat).dtype) if isinstance(alpha_hat, torch.Tensor) else 0.0
    alpha = getattr(target, "alpha", target)
    if isinstance(alpha_hat, torch.Tensor):
        alpha = torch.as_tensor(alpha, dtype=alpha_hat.dtype).detach()
        if alpha.shape != alpha_hat.shape:
            raise ValueError(f"target length {tuple(alpha.shape)} != attention length {tuple(alpha_hat.shape)}")
        return -(alpha * torch.log(torch.clamp(alpha_hat, min=eps))).sum(-1)
    a_hat, alpha = np.asarray(alpha_hat, dtype=np.float64), np.asarray(alpha, dtype=np.float64)
    if a_hat.shape != alpha.shape:
        raise ValueError(f"target length {alpha.shape} != attention length {a_hat.shape}")
    return float(-(alpha * np.log(np.maximum(a_hat, eps))).sum())


def alignment_steps(alpha_hat: torch.Tensor, targets: torch.Tensor, has_target: torch.Tensor, eps: float = 1e-8):
    """Batched penalty: (B, T, k) predictions vs (B, T, k) targets, zero where ``has_target`` is false."""
    if alpha_hat.shape != targets.shape:
        raise ValueError(f"target shape {tuple(targets.shape)} != attention shape {tuple(alpha_hat.shape)}")
    ce = -(targets.detach() * torch.log(torch.clamp(alpha_hat, min=eps))).sum(-1)
    steps = torch.where(has_target.bool(), ce, torch.zeros_like(ce))
    return steps, steps.sum(dim=-1)


def total_loss(caption_loss, alignment_loss, config: LossConfig = LossConfig()) -> LossBreakdown:
    """caption + lambda * alignment. With lambda == 0 the penalty never enters the graph."""
    cap = torch.as_tensor(caption_loss)
    att = torch.as_tensor(alignment_loss)
    if not (torch.isfinite(cap).all() and torch.isfinite(att).all()):
        raise ValueError("loss components must be finite")
    total = cap if config.lam == 0 else cap + config.lam * att
    return LossBreakdown(cap, att if config.lam else att.detach(), total, config.lam)


def sequence_objective(log_probs, alphas, targets, mask, align_targets, has_target,
                       config: LossConfig = LossConfig()) -> LossBreakdown:
    """Batch objective: time sums per caption, mean over captions."""
    cap_steps, cap_sum = caption_nll(log_probs, targets, mask)
    if config.lam == 0:
        with torch.no_grad():
            att_steps, att_sum = alignment_steps(alphas, align_targets, has_target & mask.bool(), config.eps)
    else:
        att_steps, att_sum = alignment_steps(alphas, align_targets, has_target & mask.bool(), config.eps)
    out = total_loss(cap_sum.mean(), att_sum.mean(), config)
    out.caption_steps, out.alignment_steps = cap_steps, att_steps
    return out
