"""Grad-CAM saliency maps turned into attention targets over the k regions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .checkpoint import load_container, save_container
from .corpus import CategoryMapping, Sample, write_pgm
from .encoder import Encoder


@dataclass(frozen=True)
class SaliencyTarget:
    alpha: np.ndarray  # (k,), sums to one
    category: int
    degenerate: bool = False


def gradcam_from_gradients(A: torch.Tensor | np.ndarray, grads: torch.Tensor | np.ndarray, category: int = -1) -> SaliencyTarget:
    """Channel weights are the spatially averaged gradients; map is ReLU of the weighted sum.

    ``A`` and ``grads`` are (d, h, w). The rectified map is flattened row-major
    and divided by its sum; an all-zero map becomes uniform and is flagged.
    """
    A = np.asarray(A.detach() if isinstance(A, torch.Tensor) else A, dtype=np.float64)
    G = np.asarray(grads.detach() if isinstance(grads, torch.Tensor) else grads, dtype=np.float64)
    if A.shape != G.shape or A.ndim != 3:
        raise ValueError(f"activations {A.shape} and gradients {G.shape} must both be (d, h, w)")
    weights = G.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, A, axes=1), 0.0).reshape(-1)
    total = cam.sum()
    if not total > 0.0:
        k = cam.size
        return SaliencyTarget(np.full(k, 1.0 / k), category, True)
    return SaliencyTarget(cam / total, category, False)


def class_gradients(encoder: Encoder, image, categories: Sequence[int]) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Activations of the last conv layer and d o_c / d A for each category."""
    C = encoder.config.num_categories
    for c in categories:
        if not 0 <= c < C:
            raise ValueError(f"category {c} out of range [0, {C})")
    A = encoder.extract_features(image).A.detach().requires_grad_(True)
    with torch.enable_grad():
        o = encoder.logits_from_activations(A)
        grads = [torch.autograd.grad(o[c], A, retain_graph=True)[0] for c in categories]
    return A.detach(), grads


def gradcam(encoder: Encoder, image, category: int) -> SaliencyTarget:
    A, (g,) = class_gradients(encoder, image, [category])
    return gradcam_from_gradients(A, g, category)


TargetTable = dict[tuple[int, int], SaliencyTarget]


def precompute_targets(samples: Sequence[Sample], encoder: Encoder) -> TargetTable:
    """One target per distinct (image id, category) mentioned by any caption."""
    table: TargetTable = {}
    for s in samples:
        cats = sorted({c for positions in s.visual_word_positions for _, c in positions})
        if not cats:
            continue
        try:
            A, grads = class_gradients(encoder, s.image, cats)
        except ValueError as e:
            raise ValueError(f"image {s.image_id}: {e}") from e
        for c, g in zip(cats, grads):
            table[(s.image_id, c)] = gradcam_from_gradients(A, g, c)
    return table


def save_targets(path: str | Path, table: TargetTable, k: int) -> None:
    keys = sorted(table)
    manifest = {"kind": "saliency_targets", "k": k,
                "entries": [{"image_id": i, "category": c, "degenerate": table[(i, c)].degenerate} for i, c in keys]}
    alpha = np.stack([table[key].alpha for key in keys]) if keys else np.zeros((0, k))
    save_container(path, manifest, {"alpha": alpha})


def load_targets(path: str | Path) -> TargetTable:
    manifest, arrays = load_container(path)
    if manifest.get("kind") != "saliency_targets":
        raise ValueError(f"{path}: not a saliency target table")
    return {
        (e["image_id"], e["category"]): SaliencyTarget(arrays["alpha"][n].copy(), e["category"], e["degenerate"])
        for n, e in enumerate(manifest["entries"])
    }


def upsample_map(alpha: np.ndarray, grid: int, image_size: int) -> np.ndarray:
    """Nearest-neighbour upsampling of a flat region map to image pixels, scaled to max 1."""
    m = np.asarray(alpha, dtype=np.float64).reshape(grid, grid)
    scale = image_size // grid
    up = np.kron(m, np.ones((scale, scale)))
    top = up.max()
    return up / top if top > 0 else up


def write_target_overlays(out_dir: str | Path, table: Mapping[tuple[int, int], SaliencyTarget],
                          mapping: CategoryMapping, grid: int, image_size: int) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written, meta = [], []
    for (iid, cat), t in sorted(table.items()):
        p = out / f"saliency_{iid}_{cat}.pgm"
        write_pgm(p, upsample_map(t.alpha, grid, image_size))
        written.append(p)
        meta.append({"image_id": iid, "category": mapping.category_names[cat], "k": int(t.alpha.size),
                     "degenerate": t.degenerate, "file": p.name})
    side = out / "saliency.json"
    side.write_text(json.dumps(meta, indent=1))
    return written + [side]
