import hashlib
import shutil

import numpy as np
import pytest

from bicnn import dataio
from bicnn.baselines import fit_logistic_regression
from bicnn.errors import ConfigError, SchemaError


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_default_scale_counts(tmp_path):
    ds = dataio.generate_dataset(dataio.GeneratorConfig(duration_s=4), tmp_path)
    assert len(ds) == 416
    assert len(dataio.filter_topic(ds, "abortion")) == 208
    assert len(dataio.filter_topic(ds, "both")) == 416
    bf = dataio.filter_topic(ds, "best_friend")
    assert int(bf.labels.sum()) == 104
    assert int(ds.labels.sum()) == 208
    genders = {s.subject_id: s.gender for s in ds}
    assert sorted(genders.values()).count("F") == 53


def test_same_seed_byte_identical(tmp_path):
    cfg = dataio.GeneratorConfig(n_subjects=3, seed=9)
    dataio.generate_dataset(cfg, tmp_path / "a")
    dataio.generate_dataset(cfg, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    dataio.generate_dataset(dataio.GeneratorConfig(n_subjects=3, seed=10), tmp_path / "c")
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")


def test_pairing_and_round_trip(small_dataset, tmp_path):
    pairs = {}
    for s in small_dataset:
        pairs.setdefault((s.subject_id, s.topic), []).append(s.label)
    assert all(sorted(v) == [0, 1] for v in pairs.values())
    assert len(pairs) == 20
    out = tmp_path / "manifest.tsv"
    dataio.save_manifest(small_dataset, out)
    assert out.read_bytes() == (small_dataset.root / "manifest.tsv").read_bytes()


def test_transcript_escaping_round_trip():
    text = "tab\there\nnew \\ line\r"
    assert dataio._unescape(dataio._escape(text)) == text


def _copy(ds, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(ds.root, dst)
    return dst


def test_duplicate_sample_id(small_dataset, tmp_path):
    root = _copy(small_dataset, tmp_path)
    lines = (root / "manifest.tsv").read_text().splitlines()
    lines.append(lines[1])
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="duplicate"):
        dataio.load_dataset(root)


def test_pairing_violation_names_subject(small_dataset, tmp_path):
    root = _copy(small_dataset, tmp_path)
    lines = (root / "manifest.tsv").read_text().splitlines()
    del lines[2]
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="subj001.*abortion"):
        dataio.load_dataset(root)


def test_missing_stream_names_file(small_dataset, tmp_path):
    root = _copy(small_dataset, tmp_path)
    victim = sorted((root / "streams").iterdir())[0]
    victim.unlink()
    with pytest.raises(FileNotFoundError, match=victim.name):
        dataio.load_dataset(root)


def test_bad_config():
    with pytest.raises(ConfigError):
        dataio.GeneratorConfig(phys_effect=-1).validate()
    with pytest.raises(ConfigError):
        dataio.GeneratorConfig(min_tokens=5, max_tokens=4).validate()
    with pytest.raises(ConfigError):
        dataio.filter_topic(dataio.Dataset([]), "sports")


def _planted_feature(ds):
    """Mean heart-rate estimate per sample, straight from the pulse stream."""
    from bicnn.physio import detect_peaks
    out = []
    for s in ds:
        hr = s.load_streams()["heart_rate"]
        p = detect_peaks(hr.samples, hr.sample_rate, 0.25)
        out.append(60.0 * (len(p) - 1) / ((p[-1] - p[0]) / hr.sample_rate))
    return np.array(out)


def _best_threshold_acc(x, y):
    return max(np.mean((x > t) == y) for t in np.unique(x))


def test_generator_monotone_in_effect_size(tmp_path):
    higher = 0
    for seed in range(10):
        accs = []
        for eff in (0.25, 1.0):
            ds = dataio.generate_dataset(
                dataio.GeneratorConfig(n_subjects=12, seed=seed, phys_effect=eff, duration_s=20),
                tmp_path / f"s{seed}_{eff}")
            accs.append(_best_threshold_acc(_planted_feature(ds), ds.labels))
        higher += accs[1] >= accs[0]
    assert higher >= 8


def test_null_effect_is_chance(tmp_path):
    accs = []
    for seed in range(3):
        ds = dataio.generate_dataset(
            dataio.GeneratorConfig(n_subjects=100, seed=seed, phys_effect=0.0, lex_effect=0.0,
                                   duration_s=8), tmp_path / f"n{seed}")
        X = np.array([[s.load_streams()[k].samples.mean() for k in ("heart_rate", "skin_conductance")]
                      + [_planted_feature(ds.subset([s.sample_id]))[0]] for s in ds])
        y = ds.labels
        train = np.array([int(s.subject_id[4:]) <= 75 for s in ds])
        model = fit_logistic_regression(X[train], y[train])
        accs.append(np.mean(model.predict(X[~train]) == y[~train]))
    assert abs(np.mean(accs) - 0.5) <= 0.05
