import json

import numpy as np
import pytest

from gradcap import checkpoint as ckpt
from gradcap.corpus import write_png
from gradcap.pipeline import (OUTPUT_DIR_ENV, ConfigError, RunConfig, attention_mass_in_masks,
                              caption_image, evaluate, load_model, saliency_hit_rate, train,
                              visualize_attention)
from gradcap.toy import ToyConfig, generate_toy_dataset, toy_mapping

TOY = ToyConfig(num_images=14, grid=4, cell=4, block=2, max_shapes=2, num_categories=3)


def tiny_config(tmp_path, name="run", **kw):
    base = dict(channels=(4, 8), image_size=16, grid=4, frozen_blocks=1, embed_dim=8, hidden_dim=12,
                att_hidden_dim=12, att_dim=10, head_epochs=2, full_epochs=2, head_lr=1e-2, full_lr=1e-2,
                epochs=3, batch_size=8, min_count=0, captioner_lr=5e-3, output_dir=str(tmp_path / name))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def data():
    samples = generate_toy_dataset(TOY, seed=0)
    return samples[:10], samples[10:], toy_mapping(TOY)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data):
    train_s, _, mapping = data
    return train(tiny_config(tmp_path_factory.mktemp("t")), train_s, mapping)


def test_train_outputs(trained):
    out = trained.output_dir
    for name in ("config.json", "encoder.ckpt", "targets.ckpt", "losses.csv", "finetune_losses.csv", "model.ckpt"):
        assert (out / name).is_file(), name
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [f"epoch_{i:04d}.ckpt" for i in range(3)]
    echoed = json.loads((out / "config.json").read_text())
    assert set(echoed) == set(RunConfig().to_dict())
    assert len(trained.caption_trace) == 3
    assert (out / "losses.csv").read_text().splitlines()[0] == "epoch,caption_loss,alignment_loss,total"


def test_model_roundtrip_idempotent(trained, tmp_path):
    model = load_model(trained.model_path)
    model.save(tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == trained.model_path.read_bytes()


def test_deterministic_training(tmp_path, data, trained):
    train_s, _, mapping = data
    again = train(tiny_config(tmp_path), train_s, mapping)
    assert again.model_path.read_bytes() == trained.model_path.read_bytes()


def test_resume_matches_uninterrupted(tmp_path, data, trained):
    train_s, _, mapping = data
    cfg = tiny_config(tmp_path)
    train(cfg, train_s, mapping, stop_after=0)
    assert not (tmp_path / "run" / "checkpoints" / "epoch_0001.ckpt").exists()
    resumed = train(cfg, train_s, mapping)
    assert resumed.model_path.read_bytes() == trained.model_path.read_bytes()
    assert resumed.caption_trace == trained.caption_trace


def test_resume_with_changed_config_fails(tmp_path, data):
    train_s, _, mapping = data
    train(tiny_config(tmp_path, epochs=1), train_s, mapping)
    with pytest.raises(ConfigError, match="lam"):
        train(tiny_config(tmp_path, epochs=1, lam=1.0), train_s, mapping)
    train(tiny_config(tmp_path, epochs=2), train_s, mapping)  # epochs may change


def test_lambda_only_changes_stage_b(tmp_path, data, trained):
    train_s, _, mapping = data
    ablated = train(tiny_config(tmp_path, lam=0.0), train_s, mapping)
    _, a = ckpt.load_container(trained.output_dir / "encoder.ckpt")
    _, b = ckpt.load_container(ablated.output_dir / "encoder.ckpt")
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    assert ablated.model_path.read_bytes() != trained.model_path.read_bytes()
    assert all(r["total"] == r["caption_loss"] for r in ablated.caption_trace)


def test_validation_lists_every_error():
    cfg = RunConfig(head_lr=0, lam=-1, beam_size=0, image_size=50)
    with pytest.raises(ConfigError) as e:
        cfg.validate()
    msg = str(e.value)
    for part in ("head_lr", "lam", "beam_size", "image_size"):
        assert part in msg


def test_output_dir_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "elsewhere"))
    assert RunConfig(output_dir="ignored").resolved_output_dir() == tmp_path / "elsewhere"


def test_caption_outputs(trained, tmp_path, data):
    model = load_model(trained.model_path)
    img = tmp_path / "x.png"
    write_png(img, data[1][0].image)
    a = caption_image(model, img, overlay_dir=tmp_path / "ov")
    b = caption_image(model, img, overlay_dir=tmp_path / "ov2")
    assert a == b
    assert len(a["attention"]) == len(a["caption"].split())
    for alpha in a["attention"]:
        assert abs(sum(alpha) - 1) < 1e-9 and len(alpha) == 16
    files = sorted(p.name for p in (tmp_path / "ov").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "ov2").iterdir())
    assert all((tmp_path / "ov" / f).read_bytes() == (tmp_path / "ov2" / f).read_bytes() for f in files)
    with pytest.raises(Exception):
        caption_image(model, tmp_path / "missing.png")


def test_evaluate_deterministic(trained, data):
    model = load_model(trained.model_path)
    r1, r2 = evaluate(model, data[1]), evaluate(model, data[1])
    assert r1.to_dict() == r2.to_dict()
    assert len(r1.per_image) == len(data[1])


def test_visualize_file_count_and_warnings(trained, tmp_path, data):
    model = load_model(trained.model_path)
    s = data[1][0]
    caption = model.words(model.decode(s.image))
    visual = [w for w in caption if w in model.mapping]
    absent = [w for w in model.mapping.word_to_category
              if all(model.mapping.category_of(c) != model.mapping.category_of(w) for c in visual)]
    requests = visual[:1] + ["sky"] + absent[:1]
    res = visualize_attention(model, s.image, requests, tmp_path)
    resolved = len(visual[:1])
    assert len(res.files) == 2 * resolved + 1
    assert len(res.warnings) == 1 + len(absent[:1])
    meta = json.loads(res.files[-1].read_text())
    assert len(meta["overlays"]) == resolved


def test_grounding_diagnostics(trained, data):
    model = load_model(trained.model_path)
    m = attention_mass_in_masks(model, data[1])
    assert 0 <= m <= 1
    assert 0 <= saliency_hit_rate(trained.targets, data[0]) <= 1
