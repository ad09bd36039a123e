"""Splits, modality-wise training, majority voting and the experiment harnesses.

Repeated runs are trained in fixed-size chunks of stacked replicas (see
``nncore``). Chunk ``c`` always holds runs ``c*chunk .. (c+1)*chunk - 1``
(the last chunk is padded with extra runs that are discarded), so the result
of run ``r`` depends only on ``(base_seed, r)`` and the data, never on ``R``
or on how many chunks execute in parallel.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import lingproc, physio
from .dataio import TOPIC_CHOICES, TOPICS, filter_topic
from .errors import (AlignmentError, BicnnError, ConfigError, InsufficientDataError,
                     ShapeError)
from .models import (bimodal_spec, build_network, fusion_features, ling_spec, phys_spec,
                     predict)
from .nncore import OptimizerState, optimizer_step

log = logging.getLogger(__name__)

MODALITY_ALIASES = {"ling": "linguistic", "linguistic": "linguistic",
                    "phys": "physiological", "physiological": "physiological",
                    "bimodal": "bimodal"}
ALL_MODALITIES = ("linguistic", "physiological", "bimodal")
STABILITY_RUNS = (50, 100, 200, 500)


class InvariantError(BicnnError, RuntimeError):
    """An internal consistency check failed."""


def canonical_modality(name):
    try:
        return MODALITY_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown modality {name!r}; choose from ling, phys, bimodal") from None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    filters_per_size: int = 8
    fusion_epochs: int | None = None
    fusion_lr: float | None = None
    fusion_input: str = "logits"
    chunk_size: int = 16

    def adam(self, fusion=False):
        lr = self.fusion_lr if fusion and self.fusion_lr is not None else self.lr
        return {"lr": lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class EmbeddingConfig:
    dim: int = lingproc.EMBED_DIM
    window: int = 5
    negatives: int = 5
    epochs: int = 15
    lr: float = 0.025
    seed: int = 0
    vocab_cap: int = lingproc.VOCAB_CAP
    # Pre-trained embedding file; when unset, embeddings are trained on the
    # training transcripts.
    path: str | None = None


def derive_seed(*parts):
    """A 32-bit seed derived deterministically from integer ``parts``."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def run_seed(base_seed, run):
    return derive_seed(base_seed, run)


# ---------------------------------------------------------------------------
# Split
# ---------------------------------------------------------------------------

@dataclass
class SplitIndex:
    seed: int
    train_ids: list
    test_ids: list

    @property
    def ids(self):
        return self.train_ids + self.test_ids

    def to_text(self):
        lines = [f"seed={self.seed}", "[train]", *self.train_ids, "[test]", *self.test_ids]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"split file not found: {path}")
        seed, section = None, None
        parts = {"train": [], "test": []}
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("seed="):
                seed = int(line.split("=", 1)[1])
            elif line in ("[train]", "[test]"):
                section = line[1:-1]
            elif section is None:
                raise ConfigError(f"{path}: sample id before a [train]/[test] header")
            else:
                parts[section].append(line)
        if seed is None:
            raise ConfigError(f"{path}: missing seed line")
        return cls(seed, parts["train"], parts["test"])


def split(ids, seed, ratio=0.9, strata=None):
    """Seeded shuffle-and-split with ``floor(ratio * n)`` training samples.

    With ``strata`` (one key per id) each stratum is split in proportion and
    the leftover training slots go to the strata with the largest fractional
    share, so the overall train count is still ``floor(ratio * n)``.
    """
    ids = list(ids)
    n = len(ids)
    if n < 10:
        raise InsufficientDataError(f"need at least 10 samples to split, got {n}")
    if len(set(ids)) != n:
        raise ConfigError("sample ids must be unique")
    n_train = int(math.floor(ratio * n + 1e-9))
    rng = np.random.default_rng(seed)
    if strata is None:
        perm = rng.permutation(n)
        order = [ids[i] for i in perm]
        return SplitIndex(seed, order[:n_train], order[n_train:])

    groups = {}
    for sid, key in zip(ids, strata):
        groups.setdefault(key, []).append(sid)
    keys = sorted(groups)
    shares = {k: ratio * len(groups[k]) for k in keys}
    alloc = {k: int(math.floor(shares[k] + 1e-9)) for k in keys}
    leftover = n_train - sum(alloc.values())
    by_frac = sorted(keys, key=lambda k: (-(shares[k] - alloc[k]), keys.index(k)))
    for k in by_frac[:leftover]:
        alloc[k] += 1
    train, test = [], []
    for k in keys:
        members = groups[k]
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        train += shuffled[:alloc[k]]
        test += shuffled[alloc[k]:]
    tperm, eperm = rng.permutation(len(train)), rng.permutation(len(test))
    return SplitIndex(seed, [train[i] for i in tperm], [test[i] for i in eperm])


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def raw_physio_features(dataset, cache=None):
    """59-feature vectors for every sample, keyed by sample id."""
    out = {} if cache is None else cache
    for s in dataset:
        if s.sample_id not in out:
            out[s.sample_id] = physio.extract_features(s.load_streams())
    return out


@dataclass
class FeatureSet:
    """Model inputs for an ordered list of samples."""

    ids: list
    labels: np.ndarray
    phys: np.ndarray        # (n, 32) PCA projections
    token_ids: np.ndarray   # (n, M) vocabulary ids, 0 = UNK/pad
    embedding: np.ndarray   # (|vocab|+1, 32), row 0 zero
    counts: np.ndarray      # (n, |vocab|) unigram counts

    def __len__(self):
        return len(self.ids)

    @property
    def ling(self):
        return self.embedding[self.token_ids]


@dataclass
class Prepared:
    train: FeatureSet
    test: FeatureSet
    pca: physio.PcaModel
    vocab: lingproc.Vocabulary
    M: int
    missing_embeddings: list = field(default_factory=list)


def prepare_features(dataset, split_index, raw_phys=None, emb_config=None):
    """Fit preprocessing on the training ids and transform both sides.

    PCA and the vocabulary/embeddings are fitted on training samples only.
    ``M`` is taken over training and test transcripts together.
    """
    emb_config = emb_config or EmbeddingConfig()
    raw_phys = raw_physio_features(dataset, raw_phys)
    tr, te = split_index.train_ids, split_index.test_ids
    pca = physio.pca_fit(np.array([raw_phys[i] for i in tr]), k=32)

    tokens = {i: lingproc.clean_transcript(dataset[i].transcript) for i in tr + te}
    train_tokens = [tokens[i] for i in tr]
    vocab = lingproc.build_vocab(train_tokens, cap=emb_config.vocab_cap)
    if emb_config.path:
        emb = lingproc.load_embeddings(emb_config.path, vocab)
    else:
        emb = lingproc.train_skipgram(
            train_tokens, vocab, dim=emb_config.dim, window=emb_config.window,
            negatives=emb_config.negatives, epochs=emb_config.epochs, lr=emb_config.lr,
            seed=emb_config.seed)
    M = lingproc.CorpusStats.of([tokens[i] for i in tr + te]).M

    def build(ids):
        tok_ids = np.array([lingproc.vectorize(tokens[i], vocab, M) for i in ids], dtype=np.int64)
        counts = np.zeros((len(ids), len(vocab)))
        for row, t in enumerate(tok_ids):
            np.add.at(counts[row], t[t > 0] - 1, 1.0)
        return FeatureSet(
            ids=list(ids),
            labels=np.array([dataset[i].label for i in ids], dtype=np.int64),
            phys=physio.pca_transform(pca, np.array([raw_phys[i] for i in ids])),
            token_ids=tok_ids,
            embedding=emb.matrix,
            counts=counts)

    return Prepared(build(tr), build(te), pca, vocab, M, list(emb.missing))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _fit(net, X, y, epochs, adam):
    state = OptimizerState.for_params(net.params, **adam)
    curve = np.zeros((epochs + 1, net.n_replicas))
    for epoch in range(epochs):
        curve[epoch] = net.loss_and_grad(X, y)
        optimizer_step(net.params, net.grads, state)
    curve[epochs] = net.loss(X, y)
    net.zero_grad()
    return curve


def train_unimodal(modality, X, y, seeds, config=None):
    """Full-batch training of one unimodal network per seed.

    Returns ``(net, curve)``; ``curve[e]`` holds each replica's training loss
    before epoch ``e`` and ``curve[-1]`` the final loss.
    """
    config = config or TrainConfig()
    modality = canonical_modality(modality)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y):
        raise AlignmentError(f"{len(X)} feature rows but {len(y)} labels")
    if modality == "physiological":
        spec = phys_spec(config.filters_per_size, X.shape[1])
    elif modality == "linguistic":
        spec = ling_spec(X.shape[1], config.filters_per_size, X.shape[2])
    else:
        raise ConfigError("train_unimodal handles linguistic or physiological only")
    net = build_network(spec, len(seeds), seeds)
    curve = _fit(net, X, y, config.epochs, config.adam())
    return net, curve


def export_scores(net, X):
    """Class scores (G, N, 2) of a frozen network; parameters are not touched."""
    return net.forward(np.asarray(X, dtype=np.float64))


def train_bimodal(ling_scores, phys_scores, y, seeds, config=None, ling_ids=None, phys_ids=None):
    """Train the 4 -> 2 fusion head on exported unimodal scores."""
    config = config or TrainConfig()
    feats = fusion_features(ling_scores, phys_scores, config.fusion_input, ling_ids, phys_ids)
    y = np.asarray(y, dtype=np.int64)
    if feats.shape[-2] != len(y):
        raise AlignmentError(f"{feats.shape[-2]} score rows but {len(y)} labels")
    net = build_network(bimodal_spec(config.fusion_input), len(seeds), seeds)
    epochs = config.epochs if config.fusion_epochs is None else config.fusion_epochs
    curve = _fit(net, feats, y, epochs, config.adam(fusion=True))
    return net, curve


# ---------------------------------------------------------------------------
# Repeated runs
# ---------------------------------------------------------------------------

ROLE_LING, ROLE_PHYS, ROLE_FUSION = 0, 1, 2


def _run_chunk(prepared, modalities, runs, base_seed, config):
    """Train every run in ``runs`` and return test predictions per modality."""
    tr, te = prepared.train, prepared.test
    seeds = [run_seed(base_seed, r) for r in runs]
    out = {}
    scores = {}
    nets = {}
    need_ling = "linguistic" in modalities or "bimodal" in modalities
    need_phys = "physiological" in modalities or "bimodal" in modalities
    if need_ling:
        X = tr.ling
        nets["linguistic"], _ = train_unimodal(
            "linguistic", X, tr.labels, [derive_seed(s, ROLE_LING) for s in seeds], config)
        scores["linguistic"] = (export_scores(nets["linguistic"], X),
                                export_scores(nets["linguistic"], te.ling))
    if need_phys:
        nets["physiological"], _ = train_unimodal(
            "physiological", tr.phys, tr.labels, [derive_seed(s, ROLE_PHYS) for s in seeds], config)
        scores["physiological"] = (export_scores(nets["physiological"], tr.phys),
                                   export_scores(nets["physiological"], te.phys))
    for m in ("linguistic", "physiological"):
        if m in modalities:
            out[m] = predict(scores[m][1])
    if "bimodal" in modalities:
        before = {m: nets[m].checksum() for m in nets}
        fusion, _ = train_bimodal(scores["linguistic"][0], scores["physiological"][0], tr.labels,
                                  [derive_seed(s, ROLE_FUSION) for s in seeds], config)
        if {m: nets[m].checksum() for m in nets} != before:
            raise InvariantError("unimodal weights changed during fusion training")
        feats = fusion_features(scores["linguistic"][1], scores["physiological"][1],
                                config.fusion_input)
        out["bimodal"] = predict(fusion.forward(feats))
    return out


def _chunk_job(args):
    return _run_chunk(*args)


@dataclass
class VoteMatrix:
    votes: np.ndarray   # (R, n) in {0, 1}
    seeds: list
    test_ids: list

    @property
    def runs(self):
        return self.votes.shape[0]

    def prefix(self, R):
        return VoteMatrix(self.votes[:R], self.seeds[:R], self.test_ids)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "seed", *self.test_ids])
        for r, (seed, row) in enumerate(zip(self.seeds, self.votes)):
            w.writerow([r, seed, *(int(v) for v in row)])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        ids = rows[0][2:]
        seeds = [int(r[1]) for r in rows[1:]]
        votes = np.array([[int(v) for v in r[2:]] for r in rows[1:]], dtype=np.int64)
        return cls(votes.reshape(len(seeds), len(ids)), seeds, ids)


def collect_votes(prepared, modalities, R, base_seed, config=None, parallel=1):
    """Run ``R`` seeded train/test cycles; one VoteMatrix per modality."""
    config = config or TrainConfig()
    modalities = tuple(canonical_modality(m) for m in modalities)
    if R < 1:
        raise ConfigError("R must be >= 1")
    C = max(1, int(config.chunk_size))
    jobs = [(prepared, modalities, list(range(c, c + C)), base_seed, config)
            for c in range(0, R, C)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_chunk_job, jobs))
    else:
        results = [_chunk_job(j) for j in jobs]
    seeds = [run_seed(base_seed, r) for r in range(R)]
    return {m: VoteMatrix(np.concatenate([res[m] for res in results])[:R], seeds,
                          list(prepared.test.ids))
            for m in modalities}


def majority_vote(votes):
    """Per-column mode of a runs x samples 0/1 matrix; ties go to 1."""
    if isinstance(votes, VoteMatrix):
        votes = votes.votes
    rows = [np.asarray(r) for r in votes] if not isinstance(votes, np.ndarray) else None
    if rows is not None:
        if not rows or len({r.shape for r in rows}) != 1:
            raise ShapeError("vote matrix is empty or ragged")
        votes = np.stack(rows)
    votes = np.asarray(votes)
    if votes.ndim != 2 or votes.shape[0] < 1:
        raise ShapeError(f"vote matrix must be 2-D with at least one run, got shape {votes.shape}")
    ones = votes.sum(axis=0)
    return (2 * ones >= votes.shape[0]).astype(np.int64)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    deceptive_recall: float | None
    truthful_recall: float | None
    counts: dict
    experiment: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def compute_metrics(pred, truth, experiment=None):
    """Accuracy and per-class recall; a class absent from ``truth`` has recall None."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"prediction shape {pred.shape} vs truth shape {truth.shape}")
    if pred.size == 0:
        raise ShapeError("no predictions")
    n_dec = int((truth == 1).sum())
    n_tru = int((truth == 0).sum())
    hit_dec = int(((pred == 1) & (truth == 1)).sum())
    hit_tru = int(((pred == 0) & (truth == 0)).sum())
    return MetricsReport(
        accuracy=(hit_dec + hit_tru) / truth.size,
        deceptive_recall=hit_dec / n_dec if n_dec else None,
        truthful_recall=hit_tru / n_tru if n_tru else None,
        counts={"n": int(truth.size), "deceptive": n_dec, "truthful": n_tru,
                "correct_deceptive": hit_dec, "correct_truthful": hit_tru},
        experiment=dict(experiment or {}))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    split: SplitIndex
    prepared: Prepared
    votes: dict
    reports: dict


def make_split(dataset, train_topic, test_topic, split_seed, split_path=None):
    """Within-topic: stratified 9:1 split of the topic subset. Cross-topic: topic vs topic."""
    for t in (train_topic, test_topic):
        if t not in TOPIC_CHOICES:
            raise ConfigError(f"unknown topic {t!r}; choose from {TOPIC_CHOICES}")
    if split_path is not None and Path(split_path).exists():
        return SplitIndex.load(split_path)
    if train_topic == test_topic:
        subset = filter_topic(dataset, train_topic)
        strata = [(s.topic, s.label) for s in subset]
        return split(subset.ids, split_seed, 0.9, strata)
    if "both" in (train_topic, test_topic):
        raise ConfigError("cross-topic experiments need two distinct single topics")
    return SplitIndex(split_seed, filter_topic(dataset, train_topic).ids,
                      filter_topic(dataset, test_topic).ids)


def run_experiments(dataset, modalities, train_topic, test_topic=None, R=200, base_seed=0,
                    split_seed=0, config=None, emb_config=None, out_dir=None, parallel=1,
                    raw_phys=None, split_path=None):
    """Voted reports for several modalities from one shared set of runs."""
    test_topic = train_topic if test_topic is None else test_topic
    config = config or TrainConfig()
    emb_config = emb_config or EmbeddingConfig()
    modalities = tuple(canonical_modality(m) for m in modalities)
    sp = make_split(dataset, train_topic, test_topic, split_seed, split_path)
    prepared = prepare_features(dataset, sp, raw_phys, emb_config)
    votes = collect_votes(prepared, modalities, R, base_seed, config, parallel)
    truth = prepared.test.labels
    reports = {}
    for m in modalities:
        descriptor = {"modality": m, "train_topic": train_topic, "test_topic": test_topic,
                      "runs": R, "base_seed": base_seed, "split_seed": sp.seed,
                      "n_train": len(sp.train_ids), "n_test": len(sp.test_ids)}
        reports[m] = compute_metrics(majority_vote(votes[m]), truth, descriptor)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        sp.save(out / "split.txt")
        for m in modalities:
            votes[m].save(out / f"votes_{m}.csv")
            reports[m].save(out / f"report_{m}.json")
    return ExperimentResult(sp, prepared, votes, reports)


def run_experiment(dataset, modality, train_topic, test_topic=None, R=200, base_seed=0, **kw):
    """Voted MetricsReport for a single modality."""
    m = canonical_modality(modality)
    return run_experiments(dataset, (m,), train_topic, test_topic, R, base_seed, **kw).reports[m]


def stability_analysis(vote_matrix, truth, run_counts=STABILITY_RUNS):
    """Voted metrics for nested prefixes of one vote matrix.

    Returns rows ``(R, accuracy, deceptive_recall, truthful_recall)``.
    """
    run_counts = list(run_counts)
    if run_counts != sorted(run_counts):
        raise ConfigError("run counts must be ascending")
    if run_counts and run_counts[-1] > vote_matrix.runs:
        raise ConfigError(f"vote matrix has only {vote_matrix.runs} runs")
    rows = []
    for R in run_counts:
        rep = compute_metrics(majority_vote(vote_matrix.prefix(R)), truth)
        rows.append((R, rep.accuracy, rep.deceptive_recall, rep.truthful_recall))
    return rows


def stability_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["R", "overall", "deceptive_recall", "truthful_recall"])
    for R, acc, dec, tru in rows:
        w.writerow([R, *("" if v is None else repr(float(v)) for v in (acc, dec, tru))])
    return buf.getvalue()


def run_stability(dataset, modality, train_topic, test_topic=None, run_counts=STABILITY_RUNS,
                  base_seed=0, out_dir=None, **kw):
    """Stability table from the prefixes of one max(run_counts)-run vote matrix."""
    m = canonical_modality(modality)
    res = run_experiments(dataset, (m,), train_topic, test_topic, R=max(run_counts),
                          base_seed=base_seed, out_dir=out_dir, **kw)
    rows = stability_analysis(res.votes[m], res.prepared.test.labels, run_counts)
    if out_dir is not None:
        (Path(out_dir) / f"stability_{m}.csv").write_text(stability_csv(rows), encoding="utf-8")
    return rows, res


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
