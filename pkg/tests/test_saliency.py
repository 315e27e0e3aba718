import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcap.corpus import make_sample
from gradcap.encoder import DTYPE, Encoder, EncoderConfig
from gradcap.saliency import (class_gradients, gradcam, gradcam_from_gradients, load_targets,
                              precompute_targets, save_targets, upsample_map, write_target_overlays)
from gradcap.toy import ToyConfig, toy_mapping

SMALL = EncoderConfig(channels=(4, 6), image_size=16, grid=4, num_categories=3, frozen_blocks=1)


def test_hand_example():
    A = np.array([[[1.0, -1.0], [2.0, 0.0]]])
    t = gradcam_from_gradients(A, np.ones_like(A), 0)
    assert np.allclose(t.alpha, [1 / 3, 0, 2 / 3, 0], atol=1e-15)
    assert not t.degenerate


def test_zero_gradient_is_degenerate_uniform():
    A = np.random.default_rng(0).standard_normal((3, 2, 2))
    t = gradcam_from_gradients(A, np.zeros_like(A), 1)
    assert t.degenerate and t.alpha.tolist() == [0.25] * 4


arrays = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=50, deadline=None)
@given(arrays, st.floats(1e-3, 1e3))
def test_positive_scaling_invariance(rng, c):
    A = rng.standard_normal((4, 3, 3))
    G = rng.standard_normal((4, 3, 3))
    a, b = gradcam_from_gradients(A, G), gradcam_from_gradients(A, c * G)
    assert a.degenerate == b.degenerate
    assert np.allclose(a.alpha, b.alpha, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays)
def test_relu_masking_and_simplex(rng):
    A = rng.standard_normal((5, 3, 4))
    G = rng.standard_normal((5, 3, 4))
    t = gradcam_from_gradients(A, G)
    pre = np.tensordot(G.mean(axis=(1, 2)), A, axes=1).reshape(-1)
    assert (t.alpha >= 0).all() and abs(t.alpha.sum() - 1) < 1e-9
    if not t.degenerate:
        assert (t.alpha[pre <= 0] == 0).all()
        assert (t.alpha[pre > 0] > 0).all()


def test_linear_encoder_closed_form():
    """GAP + linear head: the map is the head row applied to A, normalised."""
    enc = Encoder(SMALL, seed=7)
    rng = np.random.default_rng(1)
    for trial in range(20):
        with torch.no_grad():
            enc.head.weight.copy_(torch.as_tensor(rng.standard_normal(enc.head.weight.shape)))
        image = rng.random((3, 16, 16))
        A = enc.extract_features(image).A.numpy()
        c = trial % 3
        u = enc.head.weight[c].detach().numpy()
        _, (g,) = class_gradients(enc, image, [c])
        theta = g.numpy().mean(axis=(1, 2))
        assert np.allclose(theta * A[0].size, u, rtol=1e-13, atol=0)
        cam = np.maximum(np.einsum("l,lij->ij", u, A), 0).reshape(-1)
        got = gradcam(enc, image, c)
        if cam.sum() == 0:
            assert got.degenerate
        else:
            assert np.allclose(got.alpha, cam / cam.sum(), rtol=0, atol=1e-13)


def test_category_out_of_range():
    enc = Encoder(SMALL)
    with pytest.raises(ValueError, match="out of range"):
        gradcam(enc, np.zeros((3, 16, 16)), 3)


def _samples():
    mapping = toy_mapping(ToyConfig(num_categories=3))
    rng = np.random.default_rng(0)
    img = lambda: rng.random((3, 16, 16))
    return mapping, [
        make_sample(10, img(), ["a circle and a square", "a disc"], mapping),
        make_sample(11, img(), ["a triangle then another triangle"], mapping),
        make_sample(12, img(), ["nothing here"], mapping),
    ]


def test_precompute_keys():
    mapping, samples = _samples()
    table = precompute_targets(samples, Encoder(SMALL))
    assert sorted(table) == [(10, 0), (10, 1), (11, 2)]
    for (iid, c), t in table.items():
        assert t.category == c and abs(t.alpha.sum() - 1) < 1e-9 and t.alpha.shape == (16,)
    assert precompute_targets(samples[2:], Encoder(SMALL)) == {}


def test_precompute_deterministic_and_roundtrip(tmp_path):
    _, samples = _samples()
    a, b = precompute_targets(samples, Encoder(SMALL)), precompute_targets(samples, Encoder(SMALL))
    assert all(np.array_equal(a[key].alpha, b[key].alpha) for key in a)
    save_targets(tmp_path / "t.ckpt", a, 16)
    loaded = load_targets(tmp_path / "t.ckpt")
    assert sorted(loaded) == sorted(a)
    for key in a:
        assert loaded[key].alpha.tobytes() == a[key].alpha.tobytes()
        assert loaded[key].degenerate == a[key].degenerate
    save_targets(tmp_path / "t2.ckpt", loaded, 16)
    assert (tmp_path / "t.ckpt").read_bytes() == (tmp_path / "t2.ckpt").read_bytes()


def test_upsample_nearest():
    up = upsample_map(np.array([0.1, 0.2, 0.3, 0.4]), 2, 4)
    assert up.shape == (4, 4)
    assert up[0, 0] == up[1, 1] == 0.25 and up[3, 3] == 1.0 and up[0, 3] == 0.5


def test_overlays_and_sidecar(tmp_path):
    mapping, samples = _samples()
    table = precompute_targets(samples, Encoder(SMALL))
    files = write_target_overlays(tmp_path, table, mapping, 4, 16)
    assert len(files) == len(table) + 1
    meta = json.loads((tmp_path / "saliency.json").read_text())
    assert {(m["image_id"], m["category"]) for m in meta} == {(10, "circle"), (10, "square"), (11, "triangle")}
    assert all(m["k"] == 16 for m in meta)
    assert (tmp_path / "saliency_10_0.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")
