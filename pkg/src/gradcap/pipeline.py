"""Training orchestration, model persistence and inference entry points.

Training runs two stages: multi-label fine-tuning of the encoder (stage A),
then captioner training against the combined objective with the encoder
frozen and saliency targets precomputed (stage B). Every stage-B epoch writes
a checkpoint holding weights, optimiser moments and RNG state, so a run can
resume and finish bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .corpus import (CategoryMapping, Sample, Vocabulary, build_vocabulary, default_mapping,
                     load_coco_format, read_image, vocabulary_corpus, write_pgm)
from .decoder import (Captioner, CaptionerConfig, DecodeResult, ScheduleConfig, beam_search,
                      greedy_decode, scheduled_sampling_prob)
from .encoder import DTYPE, Encoder, EncoderConfig, FinetuneConfig, finetune_multilabel
from .metrics import EvalReport, score_corpus
from .objective import LossConfig, sequence_objective
from .saliency import (TargetTable, gradcam, load_targets, precompute_targets, save_targets,
                       upsample_map)

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "GRADCAP_OUTPUT_DIR"
# fields that may change between an interrupted run and its resumption
_RESUME_FREE = {"epochs", "beam_size", "test_dataset", "output_dir"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    dataset: str = ""
    test_dataset: str = ""
    mapping: str = ""
    output_dir: str = "runs/default"
    min_count: int = 5
    max_caption_length: int = 20
    # encoder
    channels: tuple[int, ...] = (16, 32, 64)
    image_size: int = 56
    grid: int = 7
    frozen_blocks: int = 2
    encoder_init: str = ""
    head_lr: float = 1e-4
    full_lr: float = 1e-5
    head_epochs: int = 50
    full_epochs: int = 20
    # captioner
    embed_dim: int = 512
    hidden_dim: int = 1024
    att_hidden_dim: int = 1024
    att_dim: int = 512
    attention: str = "lstm"
    lam: float = 100.0
    eps: float = 1e-8
    skip_degenerate: bool = False
    captioner_lr: float = 5e-4
    epochs: int = 30
    batch_size: int = 16
    grad_clip: float = 5.0
    ss_start: float = 1.0
    ss_floor: float = 0.75
    ss_decay_epochs: int = 20
    beam_size: int = 3
    seed: int = 0

    @classmethod
    def toy(cls, **overrides) -> "RunConfig":
        """Desk-scale preset for the synthetic shapes data."""
        base = dict(embed_dim=32, hidden_dim=64, att_hidden_dim=64, att_dim=64,
                    head_lr=1e-2, full_lr=1e-2, head_epochs=10, full_epochs=120,
                    captioner_lr=5e-4)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        errors = []
        for name in ("head_lr", "full_lr", "captioner_lr"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be > 0")
        if not self.lam >= 0:
            errors.append("lam must be >= 0")
        if not self.eps > 0:
            errors.append("eps must be > 0")
        for name in ("embed_dim", "hidden_dim", "att_hidden_dim", "att_dim", "batch_size",
                     "beam_size", "grid", "max_caption_length"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        for name in ("epochs", "head_epochs", "full_epochs", "min_count", "ss_decay_epochs"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if not 0 <= self.ss_floor <= self.ss_start <= 1:
            errors.append("need 0 <= ss_floor <= ss_start <= 1")
        if self.attention not in ("lstm", "mlp"):
            errors.append("attention must be 'lstm' or 'mlp'")
        if not self.channels or any(c <= 0 for c in self.channels):
            errors.append("channels must be positive integers")
        elif self.image_size != self.grid * 2 ** len(self.channels):
            errors.append(f"image_size must equal grid * 2**{len(self.channels)} = {self.grid * 2 ** len(self.channels)}")
        if not 0 <= self.frozen_blocks < max(len(self.channels), 1):
            errors.append("frozen_blocks must be smaller than the number of blocks")
        if self.grad_clip <= 0:
            errors.append("grad_clip must be > 0")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(int(c) for c in d["channels"])
        return cls(**d)

    def fingerprint(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in _RESUME_FREE}

    def encoder_config(self, num_categories: int) -> EncoderConfig:
        return EncoderConfig(channels=self.channels, image_size=self.image_size, grid=self.grid,
                             num_categories=num_categories, frozen_blocks=self.frozen_blocks)

    def captioner_config(self, vocab_size: int) -> CaptionerConfig:
        return CaptionerConfig(vocab_size=vocab_size, feature_dim=self.channels[-1], embed_dim=self.embed_dim,
                               hidden_dim=self.hidden_dim, att_hidden_dim=self.att_hidden_dim,
                               att_dim=self.att_dim, attention=self.attention)

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(head_lr=self.head_lr, full_lr=self.full_lr, head_epochs=self.head_epochs,
                              full_epochs=self.full_epochs, batch_size=self.batch_size, seed=self.seed)

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, eps=self.eps, skip_degenerate=self.skip_degenerate)

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.ss_start, self.ss_floor, self.ss_decay_epochs)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


def resolve_mapping(config: RunConfig) -> CategoryMapping:
    if config.mapping:
        return CategoryMapping.read(config.mapping)
    if config.dataset:
        sibling = Path(config.dataset).parent / "mapping.tsv"
        if sibling.is_file():
            return CategoryMapping.read(sibling)
    return default_mapping()


# -- model bundle ---------------------------------------------------------------


@dataclass
class CaptionModel:
    encoder: Encoder
    captioner: Captioner
    vocab: Vocabulary
    mapping: CategoryMapping
    config: RunConfig

    @property
    def max_len(self) -> int:
        return self.config.max_caption_length + 1

    def features(self, image) -> torch.Tensor:
        return self.encoder.extract_features(image).V

    def decode(self, image, beam_size: int | None = None) -> DecodeResult:
        V = self.features(image)
        B = self.config.beam_size if beam_size is None else beam_size
        return beam_search(self.captioner, V, B, self.max_len)

    def greedy(self, image) -> DecodeResult:
        return greedy_decode(self.captioner, self.features(image), self.max_len)

    def words(self, result: DecodeResult) -> list[str]:
        return self.vocab.decode(result.content)

    def save(self, path: str | Path) -> None:
        manifest = _manifest(self.config, self.vocab, self.mapping, kind="model")
        arrays = ckpt.module_arrays(self.encoder, "encoder")
        arrays.update(ckpt.module_arrays(self.captioner, "captioner"))
        ckpt.save_container(path, manifest, arrays)


def _manifest(config: RunConfig, vocab: Vocabulary, mapping: CategoryMapping, kind: str, **extra) -> dict:
    # where a run was written is not part of the model, so identical runs give identical bytes
    stored = {k: v for k, v in config.to_dict().items() if k != "output_dir"}
    return {
        "format": "gradcap", "kind": kind, "config": stored, "vocab": vocab.words,
        "mapping": [[w, mapping.category_names[c]] for w, c in mapping.word_to_category.items()],
        "categories": list(mapping.category_names), **extra,
    }


def _mapping_from_manifest(m: dict) -> CategoryMapping:
    mapping = CategoryMapping.from_pairs((w, c) for w, c in m["mapping"])
    names = tuple(m["categories"])
    if mapping.category_names != names:  # categories with no words keep their slot
        idx = {n: i for i, n in enumerate(names)}
        mapping = CategoryMapping({w: idx[mapping.category_names[c]] for w, c in mapping.word_to_category.items()}, names)
    return mapping


def load_model(path: str | Path) -> CaptionModel:
    manifest, arrays = ckpt.load_container(path)
    if manifest.get("format") != "gradcap" or manifest.get("kind") != "model":
        raise ckpt.CheckpointError(f"{path}: not a caption model checkpoint")
    config = RunConfig.from_dict(manifest["config"])
    vocab = Vocabulary.from_words(manifest["vocab"][4:])
    mapping = _mapping_from_manifest(manifest)
    encoder = Encoder(config.encoder_config(mapping.num_categories))
    ckpt.load_module_arrays(encoder, arrays, "encoder")
    captioner = Captioner(config.captioner_config(vocab.size))
    ckpt.load_module_arrays(captioner, arrays, "captioner")
    encoder.eval()
    captioner.eval()
    return CaptionModel(encoder, captioner, vocab, mapping, config)


def save_encoder(path: Path, encoder: Encoder, config: RunConfig, mapping: CategoryMapping, trace) -> None:
    stored = {k: v for k, v in config.to_dict().items() if k != "output_dir"}
    manifest = {"format": "gradcap", "kind": "encoder", "encoder": dataclasses.asdict(encoder.config),
                "config": stored, "categories": list(mapping.category_names), "trace": trace}
    manifest["encoder"]["channels"] = list(encoder.config.channels)
    ckpt.save_container(path, manifest, ckpt.module_arrays(encoder, "encoder"))


def load_encoder(path: str | Path) -> Encoder:
    manifest, arrays = ckpt.load_container(path)
    if manifest.get("kind") not in ("encoder", "model"):
        raise ckpt.CheckpointError(f"{path}: no encoder weights")
    if manifest["kind"] == "model":
        cfg = RunConfig.from_dict(manifest["config"]).encoder_config(len(manifest["categories"]))
    else:
        e = dict(manifest["encoder"])
        e["channels"] = tuple(e["channels"])
        cfg = EncoderConfig(**e)
    enc = Encoder(cfg)
    ckpt.load_module_arrays(enc, arrays, "encoder")
    enc.eval()
    return enc


# -- stage B data ----------------------------------------------------------------


@dataclass
class CaptionBatchData:
    """All training captions, padded to a common length."""

    image_index: torch.Tensor  # (N,) row into the feature tensor
    inputs: torch.Tensor  # (N, T)
    targets: torch.Tensor  # (N, T)
    mask: torch.Tensor  # (N, T) bool
    align: torch.Tensor  # (N, T, k)
    has_align: torch.Tensor  # (N, T) bool
    lengths: torch.Tensor  # (N,)


def build_caption_data(samples: Sequence[Sample], vocab: Vocabulary, table: TargetTable | None, k: int,
                       max_length: int = 20, skip_degenerate: bool = False) -> CaptionBatchData:
    rows = []
    for si, s in enumerate(samples):
        for toks, positions in zip(s.tokens, s.visual_word_positions):
            ids = vocab.encode_caption(toks, max_length)
            rows.append((si, ids, positions, s.image_id))
    if not rows:
        raise ValueError("no captions to train on")
    T = max(len(r[1]) - 1 for r in rows)
    N = len(rows)
    inputs = torch.full((N, T), vocab.pad_id, dtype=torch.long)
    targets = torch.full((N, T), vocab.pad_id, dtype=torch.long)
    align = torch.zeros((N, T, k), dtype=DTYPE)
    has = torch.zeros((N, T), dtype=torch.bool)
    lengths = torch.zeros(N, dtype=torch.long)
    for n, (si, ids, positions, iid) in enumerate(rows):
        L = len(ids) - 1
        inputs[n, :L] = torch.tensor(ids[:-1])
        targets[n, :L] = torch.tensor(ids[1:])
        lengths[n] = L
        if table is None:
            continue
        for pos, cat in positions:
            t = table.get((iid, cat))
            if t is None or (skip_degenerate and t.degenerate) or pos >= L:
                continue
            align[n, pos] = torch.as_tensor(t.alpha, dtype=DTYPE)
            has[n, pos] = True
    mask = torch.arange(T).unsqueeze(0) < lengths.unsqueeze(1)
    return CaptionBatchData(torch.tensor([r[0] for r in rows]), inputs, targets, mask, align, has, lengths)


def stack_features(encoder: Encoder, samples: Sequence[Sample], chunk: int = 64) -> torch.Tensor:
    out = []
    for i in range(0, len(samples), chunk):
        imgs = np.stack([s.image for s in samples[i : i + chunk]])
        out.append(encoder.extract_features(imgs).V)
    return torch.cat(out)


def run_caption_epoch(captioner: Captioner, opt, feats: torch.Tensor, data: CaptionBatchData,
                      loss_config: LossConfig, gt_prob: float, batch_size: int, grad_clip: float,
                      generator: torch.Generator) -> dict:
    N = data.inputs.shape[0]
    order = torch.randperm(N, generator=generator)
    sums = {"caption_loss": 0.0, "alignment_loss": 0.0, "total": 0.0}
    params = [p for p in captioner.parameters() if p.requires_grad]
    captioner.train()
    for start in range(0, N, batch_size):
        idx = order[start : start + batch_size]
        T = int(data.lengths[idx].max())
        logp, alphas = captioner(feats[data.image_index[idx]], data.inputs[idx, :T], gt_prob, generator)
        lb = sequence_objective(logp, alphas, data.targets[idx, :T], data.mask[idx, :T],
                                data.align[idx, :T], data.has_align[idx, :T], loss_config)
        opt.zero_grad()
        lb.total.backward()
        torch.nn.utils.clip_grad_norm_(params, grad_clip)
        opt.step()
        for key, val in lb.as_floats().items():
            if key in sums:
                sums[key] += val * len(idx)
    captioner.eval()
    return {k: v / N for k, v in sums.items()}


# -- train -------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: CaptionModel
    output_dir: Path
    caption_trace: list[dict] = field(default_factory=list)
    finetune_trace: list[dict] = field(default_factory=list)
    targets: TargetTable = field(default_factory=dict)

    @property
    def model_path(self) -> Path:
        return self.output_dir / "model.ckpt"


def load_training_samples(config: RunConfig, mapping: CategoryMapping) -> list[Sample]:
    if not config.dataset:
        raise ConfigError("invalid configuration:\n  dataset path is required")
    samples, report = load_coco_format(config.dataset, mapping, config.max_caption_length)
    out = config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "load_report.json").write_text(json.dumps(report.to_dict(), indent=1))
    if not samples:
        raise ValueError(f"{config.dataset}: no usable samples")
    return samples


def train(config: RunConfig, samples: Sequence[Sample] | None = None, mapping: CategoryMapping | None = None,
          resume: bool = True, stop_after: int | None = None) -> TrainResult:
    """Run both stages; ``stop_after`` ends stage B after that (0-based) epoch, as an interruption would."""
    config.validate()
    out = config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    mapping = mapping if mapping is not None else resolve_mapping(config)
    if samples is None:
        samples = load_training_samples(config, mapping)
    samples = list(samples)

    cfg_path = out / "config.json"
    if cfg_path.is_file() and resume:
        previous = RunConfig.from_dict(json.loads(cfg_path.read_text())).fingerprint()
        if previous != config.fingerprint():
            diff = sorted(k for k in previous if previous[k] != config.fingerprint().get(k))
            raise ConfigError(f"cannot resume {out}: config differs in {diff}")
    cfg_path.write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))

    vocab = build_vocabulary(vocabulary_corpus(samples), config.min_count)
    torch.manual_seed(config.seed)

    # stage A
    enc_path = out / "encoder.ckpt"
    finetune_trace: list[dict] = []
    if resume and enc_path.is_file():
        encoder = load_encoder(enc_path)
        finetune_trace = ckpt.load_container(enc_path)[0].get("trace", [])
    elif config.encoder_init:
        encoder = load_encoder(config.encoder_init)
        if encoder.config.num_categories != mapping.num_categories:
            raise ConfigError(f"encoder_init has {encoder.config.num_categories} categories, mapping has {mapping.num_categories}")
        save_encoder(enc_path, encoder, config, mapping, [])
    else:
        encoder = Encoder(config.encoder_config(mapping.num_categories), seed=config.seed)
        finetune_trace = finetune_multilabel(encoder, samples, config.finetune_config()).trace
        save_encoder(enc_path, encoder, config, mapping, finetune_trace)
        _write_csv(out / "finetune_losses.csv", ["phase", "epoch", "loss"], finetune_trace)
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)

    tgt_path = out / "targets.ckpt"
    if resume and tgt_path.is_file():
        table = load_targets(tgt_path)
    else:
        table = precompute_targets(samples, encoder)
        save_targets(tgt_path, table, encoder.config.num_regions)

    # stage B
    feats = stack_features(encoder, samples)
    data = build_caption_data(samples, vocab, table, encoder.config.num_regions,
                              config.max_caption_length, config.skip_degenerate)
    captioner = Captioner(config.captioner_config(vocab.size), seed=config.seed)
    opt = torch.optim.Adam(captioner.parameters(), lr=config.captioner_lr)
    gen = torch.Generator().manual_seed(config.seed + 1)
    trace: list[dict] = []
    start_epoch = 0
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    if resume:
        latest = _latest_epoch_checkpoint(ck_dir)
        if latest is not None:
            manifest, arrays = ckpt.load_container(latest)
            if manifest["vocab"] != vocab.words:
                raise ConfigError(f"cannot resume from {latest}: vocabulary differs")
            ckpt.load_module_arrays(captioner, arrays, "captioner")
            ckpt.load_optimizer_arrays(opt, arrays)
            gen.set_state(torch.from_numpy(arrays["rng/train"].copy()))
            trace = manifest["trace"]
            start_epoch = manifest["epoch"] + 1

    loss_config = config.loss_config()
    for epoch in range(start_epoch, config.epochs):
        p = scheduled_sampling_prob(epoch, config.schedule())
        row = run_caption_epoch(captioner, opt, feats, data, loss_config, p, config.batch_size,
                                config.grad_clip, gen)
        row = {"epoch": epoch, **row}
        trace.append(row)
        logger.info("epoch %d: caption %.4f alignment %.4f total %.4f (gt prob %.3f)", epoch,
                    row["caption_loss"], row["alignment_loss"], row["total"], p)
        arrays = ckpt.module_arrays(captioner, "captioner")
        arrays.update(ckpt.optimizer_arrays(opt))
        arrays["rng/train"] = gen.get_state().numpy()
        ckpt.save_container(ck_dir / f"epoch_{epoch:04d}.ckpt",
                            _manifest(config, vocab, mapping, "train_state", epoch=epoch, trace=trace), arrays)
        _write_csv(out / "losses.csv", ["epoch", "caption_loss", "alignment_loss", "total"], trace)
        if stop_after is not None and epoch >= stop_after:
            break

    captioner.eval()
    model = CaptionModel(encoder, captioner, vocab, mapping, config)
    model.save(out / "model.ckpt")
    return TrainResult(model, out, trace, finetune_trace, table)


def _latest_epoch_checkpoint(ck_dir: Path) -> Path | None:
    files = sorted(ck_dir.glob("epoch_*.ckpt"))
    return files[-1] if files else None


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- inference -----------------------------------------------------------------------


def caption_record(model: CaptionModel, image, image_id: int = 0, beam_size: int | None = None) -> dict:
    res = model.decode(image, beam_size)
    return {
        "image_id": image_id,
        "caption": " ".join(model.words(res)),
        "log_prob": res.log_prob,
        "truncated": res.truncated,
        "attention": [a.tolist() for a in res.attention[: len(res.content)]],
    }


def caption_image(model: CaptionModel, image_path: str | Path, beam_size: int | None = None,
                  overlay_dir: str | Path | None = None, image_id: int = 0) -> dict:
    image = read_image(image_path)
    rec = caption_record(model, image, image_id, beam_size)
    if overlay_dir is not None:
        out = Path(overlay_dir)
        out.mkdir(parents=True, exist_ok=True)
        g, size = model.config.grid, model.config.image_size
        for t, (word, alpha) in enumerate(zip(rec["caption"].split(), rec["attention"])):
            write_pgm(out / f"attention_{t:02d}_{word}.pgm", upsample_map(np.asarray(alpha), g, size))
    return rec


def evaluate(model: CaptionModel, samples: Sequence[Sample], beam_size: int | None = None,
             greedy: bool = False) -> EvalReport:
    ids, cands, refs = [], [], []
    for s in samples:
        try:
            res = model.greedy(s.image) if greedy else model.decode(s.image, beam_size)
        except Exception as e:
            raise RuntimeError(f"decoding image {s.image_id} failed: {e}") from e
        ids.append(s.image_id)
        cands.append(" ".join(model.words(res)))
        refs.append([" ".join(t) for t in s.tokens])
    return score_corpus(ids, cands, refs)


def write_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, tp = out / "report.json", out / "report.txt"
    jp.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    tp.write_text(report.table() + "\n")
    return jp, tp


@dataclass
class VisualizeResult:
    files: list[Path]
    warnings: list[str]
    caption: str


def visualize_attention(model: CaptionModel, image, requests: Sequence[str], out_dir: str | Path,
                        image_id: int = 0, beam_size: int | None = None) -> VisualizeResult:
    """Saliency and predicted-attention overlays for each requested word or category name.

    A request resolves when it is a mapped word (or a category name) and some
    word of that category occurs in the decoded caption. Each resolved request
    yields two PGM files; a JSON sidecar describes them all.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = model.decode(image, beam_size)
    words = model.words(res)
    g, size = model.config.grid, model.config.image_size
    files, warnings, meta = [], [], []
    for req in requests:
        req = req.lower()
        if req in model.mapping:
            cat = model.mapping.category_of(req)
        elif req in model.mapping.category_names:
            cat = model.mapping.category_id(req)
        else:
            warnings.append(f"{req!r} is not a visual word; skipped")
            continue
        positions = [t for t, w in enumerate(words) if w == req] or \
                    [t for t, w in enumerate(words) if model.mapping.category_of(w) == cat]
        if not positions:
            warnings.append(f"{req!r} does not occur in the decoded caption {' '.join(words)!r}; skipped")
            continue
        t = positions[0]
        sal = gradcam(model.encoder, image, cat)
        pred = res.attention[t].numpy()
        tag = f"{image_id}_{t:02d}_{words[t]}"
        sp, pp = out / f"saliency_{tag}.pgm", out / f"predicted_{tag}.pgm"
        write_pgm(sp, upsample_map(sal.alpha, g, size))
        write_pgm(pp, upsample_map(pred, g, size))
        files += [sp, pp]
        meta.append({"image_id": image_id, "request": req, "word": words[t], "timestep": t,
                     "category": model.mapping.category_names[cat], "k": int(sal.alpha.size),
                     "degenerate": sal.degenerate, "saliency": sal.alpha.tolist(), "predicted": pred.tolist(),
                     "saliency_file": sp.name, "predicted_file": pp.name})
    for w in warnings:
        logger.warning(w)
    side = out / f"overlays_{image_id}.json"
    side.write_text(json.dumps({"caption": " ".join(words), "overlays": meta, "warnings": warnings}, indent=1))
    files.append(side)
    return VisualizeResult(files, warnings, " ".join(words))


# -- grounding diagnostics ---------------------------------------------------------------


@torch.no_grad()
def attention_mass_in_masks(model: CaptionModel, samples: Sequence[Sample]) -> float:
    """Mean teacher-forced attention mass inside the ground-truth mask at visual-word steps."""
    masses = []
    for s in samples:
        V = model.features(s.image).unsqueeze(0)
        for toks, positions in zip(s.tokens, s.visual_word_positions):
            ids = model.vocab.encode_caption(toks, model.config.max_caption_length)
            _, alphas = model.captioner(V, torch.tensor([ids[:-1]]))
            for pos, cat in positions:
                if cat in s.masks:
                    masses.append(float(alphas[0, pos, s.masks[cat]].sum()))
    if not masses:
        raise ValueError("no visual words with ground-truth masks")
    return float(np.mean(masses))


def saliency_hit_rate(table: TargetTable, samples: Sequence[Sample]) -> float:
    """Fraction of (image, category) targets whose argmax region lies in the ground-truth mask."""
    by_id = {s.image_id: s for s in samples}
    hits = [int(np.argmax(t.alpha)) in by_id[i].masks[c] for (i, c), t in table.items() if c in by_id[i].masks]
    if not hits:
        raise ValueError("no targets with ground-truth masks")
    return float(np.mean(hits))
