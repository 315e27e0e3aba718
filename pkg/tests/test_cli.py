import json

import pytest

from gradcap.cli import main, read_config_file
from gradcap.pipeline import ConfigError, OUTPUT_DIR_ENV, RunConfig


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(["make-toy-data", "--num-train", "8", "--num-test", "3", "--output-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(toy_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text("# tiny run\nembed_dim = 8\nhidden_dim: 12\natt_hidden_dim = 12\natt_dim = 8\n"
                   "head_epochs = 1\nfull_epochs = 1\nepochs = 5\nmin_count = 0\n")
    code = main(["train", "--preset", "toy", "--config", str(cfg), "--epochs", "2",
                 "--dataset", str(toy_dir / "train.json"), "--output-dir", str(out)])
    assert code == 0
    return out


def test_make_toy_data_layout(toy_dir):
    for name in ("train.json", "test.json", "train.masks.json", "mapping.tsv"):
        assert (toy_dir / name).is_file()
    assert len(list((toy_dir / "images").glob("*.png"))) == 11


def test_flags_override_config_file(run_dir):
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["epochs"] == 2 and cfg["embed_dim"] == 8 and cfg["hidden_dim"] == 12
    assert cfg["head_lr"] == RunConfig.toy().head_lr
    assert len(list((run_dir / "checkpoints").glob("*.ckpt"))) == 2


def test_caption_jsonl(run_dir, toy_dir, tmp_path, capsys):
    img = str(toy_dir / "images" / "000008.png")
    code = main(["caption", "--checkpoint", str(run_dir / "model.ckpt"), "--image", img,
                 "--jsonl", str(tmp_path / "c.jsonl"), "--overlay-dir", str(tmp_path / "ov"), "--beam-size", "2"])
    assert code == 0
    rec = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
    assert capsys.readouterr().out.strip() == f"{img}\t{rec['caption']}"
    assert len(list((tmp_path / "ov").rglob("*.pgm"))) == len(rec["caption"].split())


def test_evaluate_writes_report(run_dir, toy_dir, tmp_path):
    code = main(["evaluate", "--checkpoint", str(run_dir / "model.ckpt"),
                 "--dataset", str(toy_dir / "test.json"), "--output-dir", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert {"BLEU-4", "CIDEr", "ROUGE-L", "METEOR"} <= set(report)


def test_visualize_attention(run_dir, toy_dir, tmp_path, capsys):
    code = main(["visualize-attention", "--checkpoint", str(run_dir / "model.ckpt"),
                 "--image", str(toy_dir / "images" / "000008.png"), "--words", "sky", "--output-dir", str(tmp_path)])
    assert code == 0
    assert "not a visual word" in capsys.readouterr().err
    assert [p.suffix for p in tmp_path.iterdir()] == [".json"]


def test_env_overrides_output_dir(toy_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["make-toy-data", "--num-train", "2", "--num-test", "0", "--output-dir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "train.json").is_file() and not (tmp_path / "flag").exists()


@pytest.mark.parametrize("argv", [
    ["train", "--lam", "-1", "--dataset", "x.json"],
    ["train", "--lam", "abc"],
    ["train", "--unknown-flag", "1"],
    ["nonsense"],
    ["make-toy-data", "--num-categories", "99"],
    ["caption", "--checkpoint", "m.ckpt"],
])
def test_invalid_arguments_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_runtime_failures_exit_2(tmp_path, run_dir):
    missing = str(tmp_path / "nope.ckpt")
    assert main(["caption", "--checkpoint", missing, "--image", "a.png"]) == 2
    assert main(["caption", "--checkpoint", str(run_dir / "model.ckpt"), "--image", str(tmp_path / "a.png")]) == 2
    assert main(["train", "--dataset", str(tmp_path / "absent.json"), "--output-dir", str(tmp_path / "o")]) == 2


def test_config_file_errors(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("lam = 1\nbogus = 2\nepochs = many\nno separator here\n")
    with pytest.raises(ConfigError) as e:
        read_config_file(p)
    msg = str(e.value)
    assert ":2:" in msg and ":3:" in msg and ":4:" in msg
    assert main(["train", "--config", str(p)]) == 1


def test_config_file_types(tmp_path):
    p = tmp_path / "ok.cfg"
    p.write_text("channels = 8, 16, 32\nskip_degenerate = yes\nlam = 0\nattention = mlp\n")
    assert read_config_file(p) == {"channels": (8, 16, 32), "skip_degenerate": True, "lam": 0.0, "attention": "mlp"}
