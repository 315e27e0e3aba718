"""Synthetic shapes dataset with exact ground-truth region masks.

Each image is a dark noisy canvas with 1-3 coloured shapes, each drawn inside
a block of ``block x block`` grid cells. Captions name the shapes in a fixed
category order by default; ``order="spatial"`` lists them row-major by block
instead, which makes word order carry position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CategoryMapping, Sample, make_sample, write_png

SHAPES = ("circle", "square", "triangle", "cross", "diamond", "ring", "bar", "pillar")
SYNONYMS = {
    "circle": ("circle", "disc"),
    "square": ("square", "box"),
    "triangle": ("triangle",),
    "cross": ("cross", "plus"),
    "diamond": ("diamond",),
    "ring": ("ring", "hoop"),
    "bar": ("bar",),
    "pillar": ("pillar", "column"),
}
COLORS = {
    "red": (0.9, 0.15, 0.1),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.15, 0.3, 0.95),
    "yellow": (0.95, 0.85, 0.1),
}
TEMPLATES = ("{body}", "there is {body}", "an image with {body}")


@dataclass(frozen=True)
class ToyConfig:
    num_images: int = 200
    num_categories: int = 4
    grid: int = 7
    cell: int = 8  # pixels per grid cell
    block: int = 2  # grid cells per shape side
    max_shapes: int = 3
    captions_per_image: int = 3
    noise: float = 0.05
    order: str = "category"  # or "spatial"
    colour_words: bool = False  # colour adjectives before each shape name

    def __post_init__(self):
        if self.order not in ("category", "spatial"):
            raise ValueError("order must be 'category' or 'spatial'")
        if not 1 <= self.num_categories <= len(SHAPES):
            raise ValueError(f"num_categories must be in [1, {len(SHAPES)}]")
        if not 1 <= self.max_shapes <= self.num_categories:
            raise ValueError("max_shapes must be in [1, num_categories]")
        if self.block > self.grid:
            raise ValueError("block larger than grid")

    @property
    def image_size(self) -> int:
        return self.grid * self.cell


def toy_mapping(config: ToyConfig) -> CategoryMapping:
    shapes = SHAPES[: config.num_categories]
    return CategoryMapping.from_pairs((w, s) for s in shapes for w in SYNONYMS[s])


def _shape_mask(shape: str, size: int) -> np.ndarray:
    c = (size - 1) / 2.0
    v, u = np.mgrid[0:size, 0:size].astype(np.float64)
    du, dv = u - c, v - c
    r = np.hypot(du, dv)
    half = size / 2.0
    inner = (u >= 1) & (u <= size - 2) & (v >= 1) & (v <= size - 2)
    if shape == "circle":
        m = r <= half - 1
    elif shape == "square":
        m = (np.abs(du) <= half - 2) & (np.abs(dv) <= half - 2)
    elif shape == "triangle":
        m = inner & (np.abs(du) <= (v - 1) / (size - 3) * (half - 1))
    elif shape == "cross":
        m = inner & ((np.abs(du) <= size / 8) | (np.abs(dv) <= size / 8))
    elif shape == "diamond":
        m = np.abs(du) + np.abs(dv) <= half - 1
    elif shape == "ring":
        m = (r <= half - 1) & (r >= half - 3.5)
    elif shape == "bar":
        m = inner & (np.abs(dv) <= size / 6)
    elif shape == "pillar":
        m = inner & (np.abs(du) <= size / 6)
    else:
        raise ValueError(shape)
    return m


def _place_blocks(rng: np.random.Generator, n: int, config: ToyConfig) -> list[tuple[int, int]]:
    span = config.grid - config.block + 1
    candidates = [(r, c) for r in range(span) for c in range(span)]
    taken = np.zeros((config.grid, config.grid), dtype=bool)
    placed = []
    for idx in rng.permutation(len(candidates)):
        r, c = candidates[idx]
        if taken[r : r + config.block, c : c + config.block].any():
            continue
        taken[r : r + config.block, c : c + config.block] = True
        placed.append((r, c))
        if len(placed) == n:
            break
    return sorted(placed)


def render_toy_image(rng: np.random.Generator, config: ToyConfig):
    """Returns (image, shapes) with shapes as (shape, colour, region ids) in caption order."""
    S = config.image_size
    image = 0.1 + config.noise * rng.random((3, S, S))
    n = int(rng.integers(1, config.max_shapes + 1))
    kinds = [SHAPES[i] for i in rng.choice(config.num_categories, size=n, replace=False)]
    blocks = _place_blocks(rng, n, config)
    px = config.block * config.cell
    shapes = []
    for kind, (r, c) in zip(kinds, blocks):
        colour = list(COLORS)[int(rng.integers(len(COLORS)))]
        painted = _shape_mask(kind, px)
        rgb = np.asarray(COLORS[colour]) + 0.05 * (rng.random(3) - 0.5)
        y0, x0 = r * config.cell, c * config.cell
        view = image[:, y0 : y0 + px, x0 : x0 + px]
        view[:, painted] = np.clip(rgb, 0.0, 1.0)[:, None]
        cells = painted.reshape(config.block, config.cell, config.block, config.cell).any(axis=(1, 3))
        regions = sorted(int((r + i) * config.grid + (c + j)) for i, j in zip(*np.nonzero(cells)))
        shapes.append((kind, colour, regions))
    if config.order == "category":
        shapes.sort(key=lambda sh: SHAPES.index(sh[0]))
    return np.clip(image, 0.0, 1.0), shapes


def _caption(rng: np.random.Generator, shapes, colour_words: bool = True) -> str:
    phrases = []
    for kind, colour, _ in shapes:
        names = SYNONYMS[kind]
        name = names[int(rng.integers(len(names)))]
        phrases.append(f"a {colour} {name}" if colour_words else f"a {name}")
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    return template.format(body=" and ".join(phrases))


def generate_toy_dataset(config: ToyConfig = ToyConfig(), seed: int = 0, start_id: int = 0) -> list[Sample]:
    rng = np.random.default_rng(seed)
    mapping = toy_mapping(config)
    samples = []
    for n in range(config.num_images):
        image, shapes = render_toy_image(rng, config)
        captions = [_caption(rng, shapes, config.colour_words) for _ in range(config.captions_per_image)]
        masks = {mapping.category_id(kind): regions for kind, _, regions in shapes}
        samples.append(make_sample(start_id + n, image, captions, mapping, masks=masks))
    return samples


def write_toy_dataset(samples: list[Sample], mapping: CategoryMapping, out_dir: str | Path,
                      name: str = "captions") -> Path:
    """Emit annotations JSON, PNG images, masks sidecar and mapping TSV."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    images, annotations, masks = [], [], []
    for s in samples:
        fname = f"images/{s.image_id:06d}.png"
        write_png(out / fname, s.image)
        images.append({"id": s.image_id, "file_name": fname})
        annotations.extend({"image_id": s.image_id, "caption": c} for c in s.raw_captions)
        masks.extend(
            {"image_id": s.image_id, "category": mapping.category_names[cat], "regions": [int(r) for r in regions]}
            for cat, regions in sorted(s.masks.items())
        )
    ann_path = out / f"{name}.json"
    ann_path.write_text(json.dumps({"images": images, "annotations": annotations}, indent=1))
    (out / f"{name}.masks.json").write_text(json.dumps(masks, indent=1))
    mapping.write(out / "mapping.tsv")
    return ann_path
