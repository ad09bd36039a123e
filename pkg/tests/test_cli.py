import json

import pytest

from bicnn import cli

FAST = ["--epochs", "10", "--lr", "0.01"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    d = root / "data"
    assert cli.main(["gen-data", "--subjects", "10", "--seed", "1", "--min-tokens", "10",
                     "--max-tokens", "20", "--out", str(d)]) == 0
    return d


def test_gen_data_counts(data_dir, capsys):
    assert len((data_dir / "manifest.tsv").read_text().splitlines()) == 41
    assert (data_dir / "run_config.txt").exists()


def test_gen_data_requires_out(capsys):
    assert cli.main(["gen-data", "--subjects", "10"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert cli.main(["gen-data", "--bogus"]) == 2


def test_help_lists_defaults(capsys):
    for cmd in cli.COMMANDS:
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([cmd, "--help"])
        assert "default:" in capsys.readouterr().out


def test_preprocess_files(data_dir, tmp_path):
    out = tmp_path / "pre"
    assert cli.main(["preprocess", "--data", str(data_dir), "--out", str(out)]) == 0
    assert len((out / "features.csv").read_text().splitlines()[0].split(",")) == 1 + 59
    assert len((out / "pca32.csv").read_text().splitlines()[0].split(",")) == 1 + 32
    out2 = tmp_path / "pre2"
    cli.main(["preprocess", "--data", str(data_dir), "--out", str(out2)])
    for f in ("features.csv", "pca32.csv", "split.txt"):
        assert (out / f).read_bytes() == (out2 / f).read_bytes()


def test_preprocess_missing_dataset(tmp_path):
    assert cli.main(["preprocess", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3


def test_preprocess_corrupt_stream(data_dir, tmp_path, capsys):
    import shutil
    d = tmp_path / "d"
    shutil.copytree(data_dir, d)
    victim = sorted((d / "streams").iterdir())[0]
    victim.write_text("garbage\n")
    assert cli.main(["preprocess", "--data", str(d), "--out", str(tmp_path / "o")]) == 3
    assert victim.name in capsys.readouterr().err


def test_experiment_and_determinism(data_dir, tmp_path):
    args = ["experiment", "--data", str(data_dir), "--modality", "ling", "--topic", "both",
            "--runs", "3", *FAST]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    rep = json.loads((tmp_path / "a" / "report_linguistic.json").read_text())
    assert {"accuracy", "deceptive_recall", "truthful_recall"} <= set(rep)
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "run_config.txt":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_invalid_modality_and_topic(data_dir, tmp_path):
    base = ["experiment", "--data", str(data_dir), "--out", str(tmp_path / "x")]
    assert cli.main(base + ["--modality", "audio"]) == 2
    assert cli.main(base + ["--topic", "sports", "--runs", "1"]) == 2


def test_config_file_and_flag_precedence(data_dir, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# settings\ndata={data_dir}\nmodality=phys\nruns=2\nepochs=3\n")
    out = tmp_path / "o"
    assert cli.main(["experiment", "--config", str(conf), "--epochs", "4", "--out", str(out)]) == 0
    saved = dict(l.split("=", 1) for l in (out / "run_config.txt").read_text().splitlines())
    assert saved["epochs"] == "4" and saved["runs"] == "2" and saved["modality"] == "phys"
    bad = tmp_path / "bad.conf"
    bad.write_text("colour=blue\n")
    assert cli.main(["experiment", "--config", str(bad), "--out", str(out)]) == 2


def test_cross_stability_baselines(data_dir, tmp_path):
    assert cli.main(["cross", "--data", str(data_dir), "--train-topic", "abortion",
                     "--test-topic", "best_friend", "--modality", "phys", "--runs", "2", *FAST,
                     "--out", str(tmp_path / "c")]) == 0
    assert cli.main(["cross", "--data", str(data_dir), "--train-topic", "abortion",
                     "--out", str(tmp_path / "c2")]) == 2
    assert cli.main(["stability", "--data", str(data_dir), "--modality", "phys", "--runs", "1,2,3,4",
                     *FAST, "--out", str(tmp_path / "s")]) == 0
    lines = (tmp_path / "s" / "stability_physiological.csv").read_text().splitlines()
    assert len(lines) == 5
    exp = tmp_path / "e"
    assert cli.main(["experiment", "--data", str(data_dir), "--modality", "bimodal", "--runs", "2",
                     *FAST, "--out", str(exp)]) == 0
    assert cli.main(["baselines", "--data", str(data_dir), "--split", str(exp / "split.txt"),
                     "--bimodal-report", str(exp / "report_bimodal.json"), "--tree-runs", "3",
                     "--out", str(tmp_path / "b")]) == 0
    rows = (tmp_path / "b" / "comparison.csv").read_text().splitlines()
    assert len(rows) == 5
    assert cli.main(["baselines", "--data", str(data_dir), "--out", str(tmp_path / "b2")]) == 2


def test_train_embeddings(data_dir, tmp_path):
    out = tmp_path / "emb"
    assert cli.main(["train-embeddings", "--data", str(data_dir), "--emb-epochs", "2",
                     "--out", str(out)]) == 0
    head = (out / "embeddings.txt").read_text().splitlines()[0].split()
    assert head[1] == "32"
    exp = tmp_path / "exp"
    assert cli.main(["experiment", "--data", str(data_dir), "--modality", "ling", "--runs", "1",
                     "--embeddings", str(out / "embeddings.txt"), "--split", str(out / "split.txt"),
                     *FAST, "--out", str(exp)]) == 0
