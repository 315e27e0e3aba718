"""Small convolutional encoder with a multi-label classification head.

The last block's activations ``A`` (d x h x w) are the Grad-CAM layer and, once
flattened row-major (region ``i`` is cell ``(i // w, i % w)``), the k x d
region feature grid consumed by the captioner.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import Sample

logger = logging.getLogger(__name__)

DTYPE = torch.float64


@dataclass(frozen=True)
class EncoderConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    image_size: int = 56
    grid: int = 7
    num_categories: int = 4
    frozen_blocks: int = 2
    in_channels: int = 3
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels or any(c <= 0 for c in self.channels):
            raise ValueError("channels must be a non-empty list of positive integers")
        if not 0 <= self.frozen_blocks < len(self.channels):
            raise ValueError("frozen_blocks must be smaller than the number of blocks")
        if self.image_size != self.grid * 2 ** len(self.channels):
            raise ValueError(
                f"image_size {self.image_size} != grid {self.grid} * 2**{len(self.channels)} blocks"
            )
        if self.num_categories <= 0:
            raise ValueError("num_categories must be positive")

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    @property
    def num_regions(self) -> int:
        return self.grid * self.grid


@dataclass
class FeatureGrid:
    V: torch.Tensor  # (k, d) or (B, k, d)
    A: torch.Tensor  # (d, h, w) or (B, d, h, w)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return int(self.A.shape[-1]), int(self.A.shape[-2])  # (w, h)

    @property
    def k(self) -> int:
        return int(self.V.shape[-2])


def flatten_regions(A: torch.Tensor) -> torch.Tensor:
    """(..., d, h, w) -> (..., h*w, d), row-major over cells."""
    return A.flatten(-2).transpose(-1, -2)


def init_uniform_(module: nn.Module, generator: torch.Generator, gain: float = 1.0) -> None:
    """U(-s, s), s = gain / sqrt(fan_in), for every weight and bias of ``module``."""
    with torch.no_grad():
        for name, p in module.named_parameters(recurse=False):
            w = module.weight
            fan_in = w[0].numel() if w.dim() > 1 else w.numel()
            s = gain / math.sqrt(fan_in)
            p.copy_((torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 - 1) * s)


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        blocks = []
        cin = config.in_channels
        for cout in config.channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(cin, cout, 3, padding=1, bias=config.bias, dtype=DTYPE),
                    nn.ReLU(),
                    nn.MaxPool2d(2),
                )
            )
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(config.feature_dim, config.num_categories, dtype=DTYPE)
        g = torch.Generator().manual_seed(seed)
        for b in self.blocks:
            init_uniform_(b[0], g, gain=math.sqrt(6.0))
        init_uniform_(self.head, g)

    def _as_batch(self, image) -> tuple[torch.Tensor, bool]:
        x = torch.as_tensor(image, dtype=DTYPE)
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        expected = (self.config.in_channels, self.config.image_size, self.config.image_size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            shape = tuple(x.shape[1:]) if (x.dim() == 4 and not single) else tuple(torch.as_tensor(image).shape)
            raise ValueError(f"expected image of shape {expected}, got {shape}")
        return x, single

    def activations(self, x: torch.Tensor) -> torch.Tensor:
        for b in self.blocks:
            x = b(x)
        return x

    def logits_from_activations(self, A: torch.Tensor) -> torch.Tensor:
        return self.head(A.mean(dim=(-2, -1)))

    def forward(self, image) -> torch.Tensor:
        x, single = self._as_batch(image)
        o = self.logits_from_activations(self.activations(x))
        return o[0] if single else o

    def logits_and_activations(self, image) -> tuple[torch.Tensor, torch.Tensor]:
        """Class logits with the last-layer activations kept in the graph."""
        x, single = self._as_batch(image)
        A = self.activations(x)
        if single:
            A = A[0]
        return self.logits_from_activations(A), A

    def extract_features(self, image) -> FeatureGrid:
        x, single = self._as_batch(image)
        with torch.no_grad():
            A = self.activations(x)
        if single:
            A = A[0]
        return FeatureGrid(V=flatten_regions(A), A=A)

    def classify_multilabel(self, image) -> torch.Tensor:
        with torch.no_grad():
            return self(image)

    def block_parameters(self, index: int) -> list[nn.Parameter]:
        return list(self.blocks[index].parameters())


def multilabel_bce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean per-class binary cross-entropy on raw logits."""
    return nn.functional.binary_cross_entropy_with_logits(logits, targets, reduction="mean")


@dataclass(frozen=True)
class FinetuneConfig:
    head_lr: float = 1e-4
    full_lr: float = 1e-5
    head_epochs: int = 50
    full_epochs: int = 20
    batch_size: int = 16
    seed: int = 0


@dataclass
class FinetuneResult:
    encoder: Encoder
    trace: list[dict] = field(default_factory=list)  # {"phase", "epoch", "loss"}


def _stack(samples: Sequence[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(np.stack([s.image for s in samples]), dtype=DTYPE)
    y = torch.as_tensor(np.stack([s.multilabel_target for s in samples]), dtype=DTYPE)
    return x, y


def _run_phase(encoder, params, x, y, lr, epochs, batch_size, generator, phase, trace):
    opt = torch.optim.Adam(params, lr=lr)
    n = x.shape[0]
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            loss = multilabel_bce(encoder(x[idx]), y[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        trace.append({"phase": phase, "epoch": epoch, "loss": total / n})
        logger.debug("finetune %s epoch %d loss %.5f", phase, epoch, total / n)


def finetune_multilabel(encoder: Encoder, samples: Sequence[Sample], config: FinetuneConfig = FinetuneConfig()) -> FinetuneResult:
    """Two phases: head only, then everything past the frozen blocks.

    Samples without any label are dropped; they carry no classification signal.
    """
    if not samples:
        raise ValueError("empty dataset")
    labelled = [s for s in samples if s.has_labels]
    if not labelled:
        raise ValueError("no classification signal: every multi-label target is zero")
    x, y = _stack(labelled)
    g = torch.Generator().manual_seed(config.seed)
    trace: list[dict] = []
    encoder.train()

    for p in encoder.parameters():
        p.requires_grad_(False)
    for p in encoder.head.parameters():
        p.requires_grad_(True)
    _run_phase(encoder, list(encoder.head.parameters()), x, y, config.head_lr,
               config.head_epochs, config.batch_size, g, "head", trace)

    trainable = []
    for i, block in enumerate(encoder.blocks):
        for p in block.parameters():
            p.requires_grad_(i >= encoder.config.frozen_blocks)
            if i >= encoder.config.frozen_blocks:
                trainable.append(p)
    trainable += list(encoder.head.parameters())
    _run_phase(encoder, trainable, x, y, config.full_lr,
               config.full_epochs, config.batch_size, g, "full", trace)

    for p in encoder.parameters():
        p.requires_grad_(True)
    encoder.eval()
    return FinetuneResult(encoder, trace)


def macro_accuracy(encoder: Encoder, samples: Sequence[Sample]) -> float:
    """Per-class accuracy of sigmoid > 0.5 decisions, averaged over classes."""
    x, y = _stack(samples)
    with torch.no_grad():
        pred = (encoder(x) > 0).to(DTYPE)
    return float((pred == y).to(DTYPE).mean(dim=0).mean())
