import json

import numpy as np
import pytest
import torch

from wearsynth import cli, ingest
from wearsynth.gan import GeneratorArtifact
from wearsynth.preprocess import WindowSet
from wearsynth.toydata import fake_raw_subject

torch.set_num_threads(1)

SUBJECTS = (2, 3, 4)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    raw = base / "raw"
    for sid in SUBJECTS:
        ingest.write_wesad_pickle(raw, fake_raw_subject(sid, seed=3))
    cfg = base / "tiny.cfg"
    cfg.write_text("# small settings for fast runs\n"
                   "gan.hidden = 8\ngan.noise_dim = 4\ncgan.epochs = 1\ndp_cgan.epochs = 1\n"
                   "classifier.epochs = 1\nquality.tsne_perplexity = 5\nbaseline.signal_plots = 1\n")
    assert cli.main(["preprocess", "--root", str(raw), "--out", str(base / "data")]) == 0
    return base, cfg


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_preprocess_outputs_and_determinism(workspace, tmp_path):
    base, _ = workspace
    data = base / "data"
    stats = json.loads((data / "stats.json").read_text())
    assert stats["subjects"] == list(SUBJECTS)
    assert stats["stress_seconds"] == 3 * 300
    assert (data / "windows_stride30.npz").exists() and (data / "sessions" / "S2.csv").exists()
    man = json.loads((data / cli.RUN_MANIFEST).read_text())
    assert man["seed"] == 42 and man["command"] == "preprocess"
    assert run("preprocess", "--root", base / "raw", "--out", tmp_path) == 0
    assert (tmp_path / "stats.json").read_bytes() == (data / "stats.json").read_bytes()
    again = json.loads((tmp_path / cli.RUN_MANIFEST).read_text())
    assert again["inputs"] == man["inputs"] and again["versions"] == man["versions"]


def test_train_generate_quality(workspace, tmp_path):
    base, cfg = workspace
    gens = tmp_path / "gens"
    assert run("train-gan", "--root", base / "data", "--out", gens, "--kind", "dp_cgan",
               "--epsilon", 1, "--fold", "S4", "--config", cfg) == 0
    art = GeneratorArtifact.load(gens / "fold_S4")
    assert art.certificate.epsilon <= 1.0
    assert 4 not in art.train_subjects
    assert art.manifest["run"]["seed"] == 42

    assert run("generate", "--artifact", gens / "fold_S4", "--count", 2, "--out", tmp_path / "syn") == 0
    ws = WindowSet.load(tmp_path / "syn" / "synthetic")
    assert len(ws) == 72 and ws.labels.sum() == 22

    q = tmp_path / "q"
    assert run("quality", "--root", base / "data", "--artifact", gens / "fold_S4", "--out", q,
               "--config", cfg) == 0
    report = json.loads((q / "quality.json").read_text())
    assert set(report["c2st"]) >= {"accuracy_both", "accuracy_stress", "accuracy_nonstress"}
    for stem in ("pca", "correlation_real", "histograms"):
        assert (q / f"{stem}.png").exists()
    assert (q / "pca.csv").read_text().startswith("x,y,origin,label")


def test_train_gan_all_folds_then_loso(workspace, tmp_path):
    base, cfg = workspace
    gens = tmp_path / "gens"
    assert run("train-gan", "--root", base / "data", "--out", gens, "--kind", "cgan", "--fold", "all",
               "--config", cfg) == 0
    assert sorted(p.name for p in gens.iterdir()) == [f"fold_S{s}" for s in SUBJECTS]
    out = tmp_path / "loso"
    assert run("loso", "--root", base / "data", "--out", out, "--strategy", "augm", "--model", "tsct",
               "--generators", gens, "--synthetic", 1, "--repeats", 1, "--config", cfg) == 0
    rep = json.loads((out / "loso_report.json").read_text())
    assert sorted(rep["per_subject"]) == [str(s) for s in SUBJECTS]
    assert (out / "per_subject_f1.png").exists()
    assert (out / "grand_table.csv").read_text().splitlines()[0].startswith("strategy,datasets")


def test_baseline(workspace, tmp_path):
    base, cfg = workspace
    assert run("baseline", "--root", base / "data", "--out", tmp_path, "--config", cfg) == 0
    rows = json.loads((tmp_path / "combinations.json").read_text())
    assert len(rows) == 63
    assert (tmp_path / "coefficients.png").exists() and (tmp_path / "signals_S2.csv").exists()


def test_usage_errors(workspace, tmp_path):
    base, _ = workspace
    assert run("loso", "--root", base / "data", "--out", tmp_path, "--strategy", "kfold") == 2
    assert run("frobnicate") == 2
    assert run("train-gan", "--root", base / "data", "--out", tmp_path, "--kind", "cgan",
               "--epsilon", 1) == 2
    assert run("loso", "--root", base / "data", "--out", tmp_path, "--strategy", "tstr") == 2


def test_data_errors(tmp_path):
    assert run("preprocess", "--root", tmp_path / "missing", "--out", tmp_path / "o") == 3
    assert run("baseline", "--root", tmp_path, "--out", tmp_path / "o") == 3
    assert run("quality", "--root", tmp_path, "--artifact", tmp_path / "none", "--out", tmp_path / "o") == 3


def test_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("cgan.epochs = 1600\ngan.lr_name = fast  # comment\nflag=true\n")
    cfg = cli.load_config(p)
    assert cfg == {"cgan.epochs": 1600, "gan.lr_name": "fast", "flag": True}
    assert cli.section(cfg, "cgan") == {"epochs": 1600}
    p.write_text("no equals sign\n")
    with pytest.raises(cli.UsageError):
        cli.load_config(p)
