"""Caption text handling, category mappings and dataset ingestion.

Captions are reduced to lowercase whitespace tokens. A word counts as a
*visual word* iff it appears in the :class:`CategoryMapping`; those words
drive both the multi-label classifier targets and the per-word saliency
targets used by the alignment loss.
"""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
SPECIAL_TOKENS = (PAD, START, END, UNK)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

MAX_CAPTION_LENGTH = 20

_STRIP = string.punctuation


class CorpusError(ValueError):
    pass


def tokenize(caption: str) -> list[str]:
    """Lowercase, strip edge punctuation from each word, split on whitespace.

    Internal punctuation such as hyphens survives: ``"Horse-drawn"`` stays a
    single token. Words made only of punctuation vanish.
    """
    tokens = []
    for raw in caption.lower().split():
        word = raw.strip(_STRIP)
        if word:
            tokens.append(word)
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    word_to_index: dict[str, int]
    index_to_word: dict[int, str]

    pad_id: int = PAD_ID
    start_id: int = START_ID
    end_id: int = END_ID
    unk_id: int = UNK_ID

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "Vocabulary":
        """Build from an ordered word list (specials are prepended)."""
        ordered = list(SPECIAL_TOKENS) + [w for w in words if w not in SPECIAL_TOKENS]
        if len(set(ordered)) != len(ordered):
            raise CorpusError("duplicate words in vocabulary")
        w2i = {w: i for i, w in enumerate(ordered)}
        return cls(w2i, {i: w for w, i in w2i.items()})

    @property
    def size(self) -> int:
        return len(self.word_to_index)

    def __len__(self) -> int:
        return self.size

    @property
    def words(self) -> list[str]:
        return [self.index_to_word[i] for i in range(self.size)]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.word_to_index.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i < len(SPECIAL_TOKENS):
                if i == self.end_id:
                    break
                continue
            out.append(self.index_to_word[i])
        return out

    def encode_caption(self, tokens: Sequence[str], max_length: int = MAX_CAPTION_LENGTH) -> list[int]:
        """Training target: start, first ``max_length`` content ids, end."""
        return [self.start_id] + self.encode(tokens[:max_length]) + [self.end_id]


def build_vocabulary(corpus: Sequence[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Keep words seen strictly more than ``min_count`` times.

    Ids: specials 0..3, then descending frequency, ties lexicographic.
    """
    if min_count < 0:
        raise CorpusError("min_count must be >= 0")
    if not corpus:
        raise CorpusError("empty corpus")
    counts = Counter(tok for caption in corpus for tok in caption if tok not in SPECIAL_TOKENS)
    kept = sorted((w for w, c in counts.items() if c > min_count), key=lambda w: (-counts[w], w))
    return Vocabulary.from_words(kept)


@dataclass(frozen=True)
class CategoryMapping:
    word_to_category: dict[str, int]
    category_names: tuple[str, ...]

    def __post_init__(self):
        n = len(self.category_names)
        for word, cat in self.word_to_category.items():
            if not 0 <= cat < n:
                raise CorpusError(f"word {word!r} maps to category {cat} outside [0, {n})")

    @property
    def num_categories(self) -> int:
        return len(self.category_names)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_category

    def category_of(self, word: str) -> int | None:
        return self.word_to_category.get(word)

    def category_id(self, name: str) -> int:
        try:
            return self.category_names.index(name)
        except ValueError:
            raise CorpusError(f"unknown category {name!r}") from None

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "CategoryMapping":
        """Category ids follow first appearance; a word must map to one category."""
        names: list[str] = []
        w2c: dict[str, int] = {}
        for word, cat_name in pairs:
            if cat_name not in names:
                names.append(cat_name)
            cid = names.index(cat_name)
            if word in w2c and w2c[word] != cid:
                raise CorpusError(f"word {word!r} mapped to more than one category")
            w2c[word] = cid
        return cls(w2c, tuple(names))

    @classmethod
    def read(cls, path: str | Path) -> "CategoryMapping":
        pairs = []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise CorpusError(f"{path}:{lineno}: expected 'word<TAB>category'")
            pairs.append((parts[0].strip().lower(), parts[1].strip()))
        return cls.from_pairs(pairs)

    def write(self, path: str | Path) -> None:
        lines = [f"{w}\t{self.category_names[c]}" for w, c in self.word_to_category.items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_mapping() -> CategoryMapping:
    """The bundled COCO-style word-to-category dictionary."""
    ref = resources.files("gradcap") / "data" / "coco_mapping.tsv"
    with resources.as_file(ref) as p:
        return CategoryMapping.read(p)


def extract_visual_words(tokens: Sequence[str], mapping: CategoryMapping) -> list[tuple[int, int]]:
    return [(i, mapping.word_to_category[t]) for i, t in enumerate(tokens) if t in mapping]


def build_multilabel_target(
    captions: Sequence[Sequence[str]], mapping: CategoryMapping, num_categories: int | None = None
) -> np.ndarray:
    C = mapping.num_categories if num_categories is None else num_categories
    if C != mapping.num_categories:
        raise CorpusError(f"C={C} does not match mapping with {mapping.num_categories} categories")
    target = np.zeros(C, dtype=np.float64)
    for tokens in captions:
        for _, cat in extract_visual_words(tokens, mapping):
            target[cat] = 1.0
    return target


@dataclass
class Sample:
    image_id: int
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    raw_captions: list[str]
    tokens: list[list[str]]  # truncated to the max caption length
    multilabel_target: np.ndarray
    visual_word_positions: list[list[tuple[int, int]]]
    masks: dict[int, list[int]] = field(default_factory=dict)  # category -> flat region ids

    @property
    def has_labels(self) -> bool:
        return bool(self.multilabel_target.any())


def make_sample(
    image_id: int,
    image: np.ndarray,
    captions: Sequence[str],
    mapping: CategoryMapping,
    max_length: int = MAX_CAPTION_LENGTH,
    masks: dict[int, list[int]] | None = None,
) -> Sample:
    tokens = [tokenize(c)[:max_length] for c in captions]
    return Sample(
        image_id=image_id,
        image=image,
        raw_captions=list(captions),
        tokens=tokens,
        multilabel_target=build_multilabel_target(tokens, mapping),
        visual_word_positions=[extract_visual_words(t, mapping) for t in tokens],
        masks=dict(masks or {}),
    )


# -- image io -----------------------------------------------------------------


def read_image(path: str | Path) -> np.ndarray:
    """Load PNG or PGM as a (3, H, W) float64 array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_png(path: str | Path, image: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Binary PGM from a 2-D array in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(gray) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


# -- COCO-format ingestion ----------------------------------------------------


@dataclass
class LoadReport:
    errors: list[tuple[int, str]] = field(default_factory=list)  # (image id, message)
    unlabeled: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "errors": [{"image_id": i, "message": m} for i, m in sorted(self.errors)],
            "unlabeled": sorted(self.unlabeled),
        }


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise CorpusError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is int and (not isinstance(val, int) or isinstance(val, bool)):
        raise CorpusError(f"{where}: field {key!r} must be an integer")
    if kind is str and not isinstance(val, str):
        raise CorpusError(f"{where}: field {key!r} must be a string")
    return val


def load_coco_format(
    path: str | Path,
    mapping: CategoryMapping,
    max_length: int = MAX_CAPTION_LENGTH,
    image_dir: str | Path | None = None,
) -> tuple[list[Sample], LoadReport]:
    """Read an annotation file plus its images.

    Images resolve relative to ``image_dir`` (default: the file's directory).
    A ``masks`` sidecar (``<stem>.masks.json``) is attached when present.
    Per-image problems go to the report; structural problems raise.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise CorpusError(f"{path}: top level must be an object")
    images = doc.get("images")
    annotations = doc.get("annotations")
    if not isinstance(images, list):
        raise CorpusError(f"{path}: field 'images' must be a list")
    if not isinstance(annotations, list):
        raise CorpusError(f"{path}: field 'annotations' must be a list")

    files: dict[int, str] = {}
    for n, entry in enumerate(images):
        iid = _require(entry, "id", int, f"{path}: images[{n}]")
        files[iid] = _require(entry, "file_name", str, f"{path}: images[{n}]")
    captions: dict[int, list[str]] = {}
    report = LoadReport()
    for n, entry in enumerate(annotations):
        iid = _require(entry, "image_id", int, f"{path}: annotations[{n}]")
        cap = _require(entry, "caption", str, f"{path}: annotations[{n}]")
        if iid not in files:
            report.errors.append((iid, f"annotations[{n}] references unknown image id"))
            continue
        captions.setdefault(iid, []).append(cap)

    masks = _read_masks_sidecar(path.with_suffix(".masks.json"), mapping)
    root = Path(image_dir) if image_dir is not None else path.parent
    samples = []
    for iid in sorted(files):
        caps = captions.get(iid)
        if not caps:
            report.errors.append((iid, "image has no captions"))
            continue
        img_path = root / files[iid]
        if not img_path.is_file():
            report.errors.append((iid, f"missing image file {files[iid]}"))
            continue
        try:
            image = read_image(img_path)
        except Exception as e:  # PIL raises a zoo of types
            report.errors.append((iid, f"unreadable image {files[iid]}: {e}"))
            continue
        s = make_sample(iid, image, caps, mapping, max_length, masks.get(iid))
        if not s.has_labels:
            report.unlabeled.append(iid)
        samples.append(s)
    for iid, msg in report.errors:
        logger.warning("image %d: %s", iid, msg)
    return samples, report


def _read_masks_sidecar(path: Path, mapping: CategoryMapping) -> dict[int, dict[int, list[int]]]:
    if not path.is_file():
        return {}
    out: dict[int, dict[int, list[int]]] = {}
    for n, entry in enumerate(json.loads(path.read_text(encoding="utf-8"))):
        iid = _require(entry, "image_id", int, f"{path}[{n}]")
        cat = mapping.category_id(_require(entry, "category", str, f"{path}[{n}]"))
        out.setdefault(iid, {})[cat] = [int(r) for r in entry["regions"]]
    return out


def vocabulary_corpus(samples: Sequence[Sample]) -> list[list[str]]:
    return [t for s in samples for t in s.tokens]
