"""Command-line entry point: ``bicnn <subcommand> [flags]``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key=value`` lines, then command-line flags (flags win). The merged settings
are written as ``run_config.txt`` into every output directory.

Exit codes: 0 success, 2 usage/config, 3 data/I/O, 4 internal invariant.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import baselines, dataio, lingproc, physio, pipeline
from .errors import BicnnError, ConfigError, MissingCacheError

log = logging.getLogger("bicnn")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4
RUN_CONFIG_FILE = "run_config.txt"


@dataclass
class RunConfig:
    data: str = "data"
    out: str = ""
    # generator
    subjects: int = 104
    data_seed: int = 0
    phys_effect: float = 1.0
    lex_effect: float = 0.3
    min_tokens: int = 30
    max_tokens: int = 120
    # experiment
    modality: str = "bimodal"
    train_topic: str = "both"
    test_topic: str = ""
    runs: str = "200"
    seed: int = 0
    split_seed: int = 0
    split: str = ""
    parallel: int = 1
    # networks
    epochs: int = 300
    lr: float = 1e-3
    fusion_epochs: int = -1
    fusion_lr: float = -1.0
    filters_per_size: int = 8
    # embeddings
    embeddings: str = ""
    emb_seed: int = 0
    emb_epochs: int = 15
    emb_window: int = 5
    emb_negatives: int = 5
    # baselines
    tree_runs: int = 200
    svm_c: float = 1.0
    bimodal_report: str = ""

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in sorted(asdict(self).items()))

    def train_config(self):
        return pipeline.TrainConfig(
            epochs=self.epochs, lr=self.lr, filters_per_size=self.filters_per_size,
            fusion_epochs=None if self.fusion_epochs < 0 else self.fusion_epochs,
            fusion_lr=None if self.fusion_lr < 0 else self.fusion_lr)

    def embedding_config(self):
        return pipeline.EmbeddingConfig(seed=self.emb_seed, epochs=self.emb_epochs,
                                        window=self.emb_window, negatives=self.emb_negatives,
                                        path=self.embeddings or None)

    def run_counts(self):
        try:
            counts = [int(v) for v in str(self.runs).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"runs must be integers, got {self.runs!r}") from None
        if not counts or min(counts) < 1:
            raise ConfigError(f"runs must be positive, got {self.runs!r}")
        return counts

    def topics(self):
        return self.train_topic, self.test_topic or self.train_topic


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes equal underscores."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


COMMAND_DEFAULTS = {"stability": {"runs": "50,100,200,500"}}


def resolve_config(ns):
    """Defaults, then the config file, then explicit flags."""
    values = dict(COMMAND_DEFAULTS.get(getattr(ns, "command", None), {}))
    if getattr(ns, "config", None):
        values.update(read_config_file(ns.config))
    for key in _FIELD_TYPES:
        if key in vars(ns):
            values[key] = _coerce(key, getattr(ns, key))
    return RunConfig(**values)


def _prepare_out(cfg):
    if not cfg.out:
        raise ConfigError("--out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_CONFIG_FILE).write_text(cfg.to_text(), encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg):
    gen = dataio.GeneratorConfig(n_subjects=cfg.subjects, seed=cfg.data_seed,
                                 phys_effect=cfg.phys_effect, lex_effect=cfg.lex_effect,
                                 min_tokens=cfg.min_tokens, max_tokens=cfg.max_tokens)
    gen.validate()
    out = _prepare_out(cfg)
    ds = dataio.generate_dataset(gen, out)
    n_dec = int(ds.labels.sum())
    print(f"wrote {len(ds)} samples ({n_dec} deceptive, {len(ds) - n_dec} truthful) to {out}")


def _load(cfg):
    return dataio.load_dataset(cfg.data)


def _split_for(cfg, ds):
    train_topic, test_topic = cfg.topics()
    return pipeline.make_split(ds, train_topic, test_topic, cfg.split_seed, cfg.split or None)


def cmd_preprocess(cfg):
    ds = _load(cfg)
    out = _prepare_out(cfg)
    sp = _split_for(cfg, ds)
    raw = pipeline.raw_physio_features(ds.subset(sp.ids))
    ids = sp.ids
    physio.write_feature_csv(out / "features.csv", ids, np.array([raw[i] for i in ids]),
                             physio.feature_names())
    prepared = pipeline.prepare_features(ds, sp, raw, cfg.embedding_config())
    pcs = np.vstack([prepared.train.phys, prepared.test.phys])
    physio.write_feature_csv(out / "pca32.csv", prepared.train.ids + prepared.test.ids, pcs,
                             [f"pc{i}" for i in range(pcs.shape[1])])
    tok = np.vstack([prepared.train.token_ids, prepared.test.token_ids])
    physio.write_feature_csv(out / "token_ids.csv", ids, tok, [f"t{i}" for i in range(tok.shape[1])])
    sp.save(out / "split.txt")
    print(f"preprocessed {len(ids)} samples: 59 features, 32 PCA components, M={prepared.M}")


def cmd_train_embeddings(cfg):
    ds = _load(cfg)
    out = _prepare_out(cfg)
    sp = _split_for(cfg, ds)
    ec = cfg.embedding_config()
    corpus = [lingproc.clean_transcript(ds[i].transcript) for i in sp.train_ids]
    vocab = lingproc.build_vocab(corpus, ec.vocab_cap)
    model = lingproc.train_skipgram(corpus, vocab, dim=ec.dim, window=ec.window,
                                    negatives=ec.negatives, epochs=ec.epochs, lr=ec.lr,
                                    seed=ec.seed)
    lingproc.save_embeddings(out / "embeddings.txt", model)
    sp.save(out / "split.txt")
    print(f"trained {len(vocab)} x {ec.dim} embeddings on {len(corpus)} training transcripts")


def _modalities(cfg):
    if cfg.modality == "all":
        return pipeline.ALL_MODALITIES
    return tuple(pipeline.canonical_modality(m) for m in cfg.modality.split(","))


def cmd_experiment(cfg):
    counts = cfg.run_counts()
    if len(counts) != 1:
        raise ConfigError("experiment takes a single run count")
    modalities = _modalities(cfg)
    ds = _load(cfg)
    out = _prepare_out(cfg)
    train_topic, test_topic = cfg.topics()
    res = pipeline.run_experiments(
        ds, modalities, train_topic, test_topic, R=counts[0], base_seed=cfg.seed,
        split_seed=cfg.split_seed, config=cfg.train_config(), emb_config=cfg.embedding_config(),
        out_dir=out, parallel=cfg.parallel, split_path=cfg.split or None)
    for m, rep in res.reports.items():
        print(f"{m}: accuracy={rep.accuracy:.4f} deceptive_recall={_fmt(rep.deceptive_recall)} "
              f"truthful_recall={_fmt(rep.truthful_recall)}")


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def cmd_cross(cfg):
    if not cfg.test_topic or cfg.test_topic == cfg.train_topic:
        raise ConfigError("cross needs distinct --train-topic and --test-topic")
    cmd_experiment(cfg)


def cmd_stability(cfg):
    counts = cfg.run_counts()
    ds = _load(cfg)
    out = _prepare_out(cfg)
    train_topic, test_topic = cfg.topics()
    for m in _modalities(cfg):
        rows, _ = pipeline.run_stability(
            ds, m, train_topic, test_topic, run_counts=counts, base_seed=cfg.seed,
            out_dir=out, split_seed=cfg.split_seed, config=cfg.train_config(),
            emb_config=cfg.embedding_config(), parallel=cfg.parallel,
            split_path=cfg.split or None)
        for R, acc, _, _ in rows:
            print(f"{m} R={R}: accuracy={acc:.4f}")


def cmd_baselines(cfg):
    ds = _load(cfg)
    out = _prepare_out(cfg)
    split_path = Path(cfg.split) if cfg.split else out / "split.txt"
    if not split_path.exists():
        raise ConfigError(f"split file not found: {split_path} (pass --split from the CNN experiment)")
    sp = pipeline.SplitIndex.load(split_path)
    prepared = pipeline.prepare_features(ds, sp, None, cfg.embedding_config())
    if cfg.bimodal_report:
        bimodal = pipeline.MetricsReport.load(cfg.bimodal_report)
    else:
        R = cfg.run_counts()[-1]
        votes = pipeline.collect_votes(prepared, ("bimodal",), R, cfg.seed, cfg.train_config(),
                                       cfg.parallel)["bimodal"]
        bimodal = pipeline.compute_metrics(pipeline.majority_vote(votes), prepared.test.labels,
                                           {"modality": "bimodal", "runs": R, "base_seed": cfg.seed,
                                            "split_seed": sp.seed})
    reports = baselines.run_baseline_comparison(prepared, split_path, out, cfg.tree_runs, cfg.seed,
                                                bimodal, cfg.svm_c)
    for name in baselines.COMPARISON_ROWS:
        print(f"{name}: accuracy={reports[name].accuracy:.4f}")


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic dataset"),
    "preprocess": (cmd_preprocess, "extract physiological features, PCA and token ids"),
    "train-embeddings": (cmd_train_embeddings, "train skip-gram embeddings on training transcripts"),
    "experiment": (cmd_experiment, "voted train/test experiment for one or more modalities"),
    "cross": (cmd_cross, "cross-topic experiment (train on one topic, test on the other)"),
    "stability": (cmd_stability, "voted accuracy for nested run counts of one vote matrix"),
    "baselines": (cmd_baselines, "decision tree, SVM and logistic regression vs the bimodal CNN"),
}

# flag -> help, per group; defaults are taken from RunConfig.
_GROUPS = {
    "out": {"out": "output directory (required)"},
    "data": {"data": "dataset directory"},
    "gen": {"subjects": "number of subjects (4 samples each)", "data_seed": "generator seed",
            "phys_effect": "planted physiological effect size",
            "lex_effect": "planted lexical effect (probability mass)",
            "min_tokens": "minimum transcript length", "max_tokens": "maximum transcript length"},
    "split": {"train_topic": "abortion, best_friend or both",
              "test_topic": "test topic (empty = same as train topic)",
              "split_seed": "seed of the 9:1 split", "split": "existing split file to reuse"},
    "emb": {"embeddings": "pre-trained embedding file (empty = train on the training split)",
            "emb_seed": "skip-gram seed", "emb_epochs": "skip-gram epochs",
            "emb_window": "skip-gram window", "emb_negatives": "negative samples per pair"},
    "train": {"modality": "ling, phys, bimodal, a comma list, or all",
              "runs": "voting run count (stability: comma list)", "seed": "base seed of the runs",
              "parallel": "worker processes; results do not depend on it",
              "epochs": "training epochs", "lr": "Adam learning rate",
              "fusion_epochs": "fusion head epochs (-1 = same as --epochs)",
              "fusion_lr": "fusion head learning rate (-1 = same as --lr)",
              "filters_per_size": "convolution filters per filter size"},
    "base": {"tree_runs": "decision-tree voting runs", "svm_c": "SVM penalty C",
             "bimodal_report": "existing bimodal report JSON (empty = train the CNN here)"},
}

_COMMAND_GROUPS = {
    "gen-data": ("out", "gen"),
    "preprocess": ("out", "data", "split", "emb"),
    "train-embeddings": ("out", "data", "split", "emb"),
    "experiment": ("out", "data", "split", "emb", "train"),
    "cross": ("out", "data", "split", "emb", "train"),
    "stability": ("out", "data", "split", "emb", "train"),
    "baselines": ("out", "data", "split", "emb", "train", "base"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="bicnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    defaults = RunConfig()
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value settings file; flags override it")
        for group in _COMMAND_GROUPS[name]:
            for key, h in _GROUPS[group].items():
                default = COMMAND_DEFAULTS.get(name, {}).get(key, getattr(defaults, key))
                p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS,
                               help=f"{h} (default: {default!r})")
        if name == "gen-data":
            p.add_argument("--seed", dest="data_seed", default=argparse.SUPPRESS,
                           help="alias of --data-seed")
        if name == "experiment":
            p.add_argument("--topic", dest="train_topic", default=argparse.SUPPRESS,
                           help="alias of --train-topic for within-topic runs")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[ns.command][0]
    try:
        cfg = resolve_config(ns)
        func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if "--out is required" in str(exc):
            parser._subparsers._group_actions[0].choices[ns.command].print_usage(sys.stderr)
        return EXIT_CONFIG
    except (pipeline.InvariantError, MissingCacheError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, BicnnError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
