import csv
import json

import pytest

from cgap.cli import main, read_config_file, resolve, build_parser
from cgap.data import FILES


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("city") / "data"
    assert main(["generate", "--regions", "12", "--communities", "3", "--seed", "7", "--out", str(d)]) == 0
    return d


def test_generate_writes_bundle_and_manifest(data_dir):
    assert {p.name for p in data_dir.iterdir()} == set(FILES) | {"manifest.json"}
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["seed"] == 7
    assert len(manifest["dataset_hash"]) == 64
    assert set(manifest) == {"command", "config", "dataset_hash", "seed", "outputs", "wall_clock"}


def test_train_embed_eval_report(data_dir, tmp_path, capsys):
    ckpt = tmp_path / "ckpt.json"
    assert main(["train", "--data", str(data_dir), "--out", str(ckpt), "--epochs", "5", "--dim", "8",
                 "--beta", "0.3"]) == 0
    assert json.loads(capsys.readouterr().out)["final_loss"]["l_total"] > 0
    assert (tmp_path / "ckpt.json.log.csv").read_text().startswith("epoch,l_r,l_mob,l_poi,l_total\n")
    assert (tmp_path / "ckpt.json.manifest.json").exists()

    emb = tmp_path / "emb.csv"
    assert main(["embed", "--data", str(data_dir), "--checkpoint", str(ckpt), "--out", str(emb)]) == 0
    rows = list(csv.reader(emb.open()))
    assert rows[0] == ["region_id"] + [f"e_{k}" for k in range(8)]
    assert len(rows) == 13

    metrics = tmp_path / "m.json"
    assert main(["eval", "--data", str(data_dir), "--embeddings", str(emb), "--task", "crime",
                 "--out", str(metrics), "--lam", "0.5"]) == 0
    doc = json.loads(metrics.read_text())
    assert doc["task"] == "crime" and len(doc["folds"]) == 5
    assert main(["eval", "--data", str(data_dir), "--embeddings", str(emb), "--task", "landuse",
                 "--out", str(metrics)]) == 0
    assert set(json.loads(metrics.read_text())) == {"task", "nmi", "ari"}

    report = tmp_path / "r.json"
    assert main(["report", "--data", str(data_dir), "--out", str(report), "--checkpoint", str(ckpt)]) == 0
    doc = json.loads(report.read_text())
    assert doc["sizes"][0] == 12 and doc["sizes"][-1] == 1
    assert len(doc["global_feature"]) == 8
    assert "ratio" in doc["memory"]


def test_gradcheck_exit_code(data_dir, tmp_path, capsys):
    out = tmp_path / "g.json"
    small = ["generate", "--regions", "6", "--communities", "2", "--seed", "1", "--out", str(tmp_path / "d6")]
    assert main(small) == 0
    assert main(["gradcheck", "--data", str(tmp_path / "d6"), "--seed", "1", "--dim", "4", "--out", str(out)]) == 0
    assert "max relative error" in capsys.readouterr().out
    assert json.loads(out.read_text())["passed"] is True


def test_ablate_and_sweep(data_dir, tmp_path):
    out = tmp_path / "abl.csv"
    common = ["--data", str(data_dir), "--epochs", "3", "--dim", "4", "--lam", "1.0"]
    assert main(["ablate", *common, "--out", str(out), "--variants", "full,poi_only"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["variant"] for r in rows] == ["full", "poi_only"]
    sweep = tmp_path / "sweep.csv"
    assert main(["sweep-beta", *common, "--out", str(sweep), "--betas", "0.2,0.3"]) == 0
    assert sweep.read_text().splitlines()[0] == "beta,r2"
    assert main(["ablate", *common, "--out", str(out), "--variants", "bogus"]) == 1


def test_usage_errors_exit_one(data_dir, capsys):
    assert main(["train", "--data", str(data_dir), "--out", "x.json", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["train", "--data", str(data_dir), "--out", "x.json", "--beta", "2"]) == 1


def test_missing_data_exit_one(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "c.json")]) == 1


def test_runtime_failure_exit_two(tmp_path, monkeypatch):
    import cgap.cli as cli

    def boom(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "generate_synthetic_city", boom)
    assert main(["generate", "--regions", "4", "--communities", "1", "--out", str(tmp_path / "d")]) == 2


def test_config_file_under_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nbeta = 0.4\nepochs=12\nalpha=1.0,0.5\nlam=0.2\n\n")
    args = build_parser().parse_args(["train", "--data", "d", "--out", "o", "--config", str(cfg), "--epochs", "7"])
    config, extra = resolve(args)
    assert config.beta == 0.4 and config.epochs == 7 and config.alpha == (1.0, 0.5)
    assert extra["lam"] == 0.2


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("depth=3\n")
    with pytest.raises(ValueError, match="unknown key"):
        read_config_file(bad)
    bad.write_text("beta\n")
    with pytest.raises(ValueError, match="key=value"):
        read_config_file(bad)
    bad.write_text("epochs=many\n")
    with pytest.raises(ValueError, match="bad value"):
        read_config_file(bad)
