"""Dataset layout, loading, and a synthetic generator with planted class signal.

On-disk layout of a dataset directory::

    manifest.tsv       sample_id subject_id gender topic label transcript_file stream_file
    transcripts.tsv    sample_id <TAB> raw text (backslash-escaped)
    streams/<id>.csv   one recording, see physio.write_stream_csv
    generator.json     the GeneratorConfig used (informational)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import physio
from .errors import ConfigError, SchemaError

TOPICS = ("abortion", "best_friend")
TOPIC_CHOICES = (*TOPICS, "both")
LABELS = (0, 1)
MANIFEST_COLUMNS = ["sample_id", "subject_id", "gender", "topic", "label",
                    "transcript_file", "stream_file"]
TRANSCRIPTS_FILE = "transcripts.tsv"

FUNCTION_WORDS = (
    "i the and to a of it that is in my you they we think just like so but was "
    "be have know about with for not on what all would can people this there "
    "when who then them really very").split()

TOPIC_WORDS = {
    "abortion": (
        "abortion choice woman women life right rights body pregnancy baby fetus "
        "decision law government religion church moral health doctor mother child "
        "adoption case situation belief argument opinion murder human conception "
        "option responsibility freedom legal society issue pro clinic procedure "
        "unborn parents").split(),
    "best_friend": (
        "friend school together fun funny kind nice person always help talk laugh "
        "movies music trust loyal smart caring time years met college class party "
        "weekend support listen sister brother games sports travel trip food "
        "shopping roommate texts dinner summer").split(),
}

# Class-tilted words: a shared part plus a topic-specific part.
CLASS_WORDS = {
    1: {
        "shared": "honestly basically guess whatever sure obviously totally seriously".split(),
        "abortion": "supposedly everyone anyway somehow".split(),
        "best_friend": "amazing awesome perfect literally".split(),
    },
    0: {
        "shared": "remember specifically exactly recall detail example personally clearly".split(),
        "abortion": "studies experience cousin statistics".split(),
        "best_friend": "birthday neighborhood childhood grandmother".split(),
    },
}

ANNOTATIONS = ("[laughs]", "[pause]", "[coughs]", "[inaudible]", "[sighs]")


@dataclass
class GeneratorConfig:
    n_subjects: int = 104
    seed: int = 0
    phys_effect: float = 1.0
    lex_effect: float = 0.3
    sample_rate: float = 32.0
    duration_s: float = 60.0
    min_tokens: int = 30
    max_tokens: int = 120
    # Between-subject spread and per-session jitter of stream means, in units
    # of the per-sensor scale below.
    subject_spread: float = 0.5
    session_jitter: float = 0.25

    def validate(self):
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if self.phys_effect < 0 or self.lex_effect < 0:
            raise ConfigError("effect sizes must be >= 0")
        if self.lex_effect > 1:
            raise ConfigError("lex_effect is a probability mass and must be <= 1")
        if self.sample_rate <= 0 or self.duration_s <= 0:
            raise ConfigError("sample_rate and duration_s must be positive")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("need 1 <= min_tokens <= max_tokens")


# Per-sensor (baseline, scale) used by the generator; class shifts and the
# spreads above are multiples of ``scale``.
HR_BPM = (72.0, 4.0)
SC_US = (5.0, 0.5)
TEMP_C = (33.0, 0.3)
RESP_BPM = (15.0, 2.0)


@dataclass
class Sample:
    sample_id: str
    subject_id: str
    gender: str
    topic: str
    label: int
    transcript: str
    stream_file: Path
    transcript_file: str = TRANSCRIPTS_FILE

    def load_streams(self):
        if not self.stream_file.exists():
            raise FileNotFoundError(f"missing stream file: {self.stream_file}")
        return physio.read_stream_csv(self.stream_file)


class Dataset:
    """Ordered collection of samples; sensor streams are read on demand."""

    def __init__(self, samples, root=None):
        self.samples = list(samples)
        self.root = root
        self._by_id = {s.sample_id: s for s in self.samples}

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, sample_id):
        return self._by_id[sample_id]

    @property
    def ids(self):
        return [s.sample_id for s in self.samples]

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, ids):
        return Dataset([self._by_id[i] for i in ids], self.root)


# ---------------------------------------------------------------------------
# Escaping for transcripts.tsv
# ---------------------------------------------------------------------------

def _escape(text):
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(text):
    out, i = [], 0
    table = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            out.append(table.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def _zipf(n):
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def _sample_tokens(rng, topic, label, n_tokens, lex_effect):
    background = FUNCTION_WORDS + TOPIC_WORDS[topic]
    bg_p = np.concatenate([0.6 * _zipf(len(FUNCTION_WORDS)),
                           0.4 * _zipf(len(TOPIC_WORDS[topic]))])
    tilt = CLASS_WORDS[label]["shared"] + CLASS_WORDS[label][topic]
    tokens = []
    for _ in range(n_tokens):
        if rng.random() < lex_effect:
            tokens.append(tilt[rng.integers(len(tilt))])
        else:
            tokens.append(background[rng.choice(len(background), p=bg_p)])
    return tokens


def _render(rng, tokens):
    """Turn tokens into raw speech-like text with punctuation and annotations."""
    words, since_stop = [], 0
    for i, tok in enumerate(tokens):
        if since_stop == 0:
            tok = tok.capitalize()
        words.append(tok)
        since_stop += 1
        r = rng.random()
        if i == len(tokens) - 1:
            words[-1] += "."
        elif since_stop >= 6 and r < 0.2:
            words[-1] += "."
            since_stop = 0
        elif r < 0.08:
            words[-1] += ","
        if rng.random() < 0.03:
            words.append(ANNOTATIONS[rng.integers(len(ANNOTATIONS))])
    return " ".join(words)


def _streams(rng, subject_base, label, cfg):
    n = int(round(cfg.sample_rate * cfg.duration_s))
    t = np.arange(n) / cfg.sample_rate
    shift = cfg.phys_effect * label

    def session_mean(name, base_scale):
        base, scale = base_scale
        return (base + subject_base[name] * scale
                + cfg.session_jitter * scale * rng.standard_normal())

    hr_mean = session_mean("hr", HR_BPM) + shift * HR_BPM[1]
    hr_t = hr_mean + 0.5 * HR_BPM[1] * np.sin(2 * np.pi * 0.1 * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(hr_t / 60.0) / cfg.sample_rate + rng.uniform(0, 2 * np.pi)
    pulse = subject_base["amp"] * np.sin(phase) + 0.05 * rng.standard_normal(n)

    sc_mean = session_mean("sc", SC_US) + shift * SC_US[1]
    sc = (sc_mean + 0.3 * SC_US[1] * np.sin(2 * np.pi * 0.02 * t + rng.uniform(0, 2 * np.pi))
          + 0.1 * SC_US[1] * rng.standard_normal(n))

    temp = session_mean("temp", TEMP_C) + 0.05 * TEMP_C[1] * rng.standard_normal(n)

    resp_rate = session_mean("resp", RESP_BPM)
    resp = (np.sin(2 * np.pi * resp_rate / 60.0 * t + rng.uniform(0, 2 * np.pi))
            + 0.05 * rng.standard_normal(n))
    return {"heart_rate": pulse, "skin_conductance": sc,
            "skin_temperature": temp, "respiration": resp}


def sample_id_for(subject_id, topic, label):
    return f"{subject_id}_{topic}_{'dec' if label else 'tru'}"


def generate_dataset(config, out_dir):
    """Write a synthetic dataset to ``out_dir``; returns the loaded Dataset.

    Each subject contributes, for each topic, one truthful then one deceptive
    recording. Deceptive recordings get heart-rate and skin-conductance means
    shifted by ``phys_effect`` sensor scales, and a ``lex_effect`` share of
    their words drawn from the deceptive word list (truthful recordings draw
    the same share from the truthful list).
    """
    config.validate()
    out = Path(out_dir)
    try:
        (out / "streams").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    n = config.n_subjects
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB1]))
    n_female = int(round(n * 53 / 104))
    genders = np.array(["F"] * n_female + ["M"] * (n - n_female))
    order_rng.shuffle(genders)

    manifest_rows, transcript_rows = [], []
    for subj in range(n):
        subject_id = f"subj{subj + 1:03d}"
        srng = np.random.default_rng(np.random.SeedSequence([config.seed, subj]))
        subject_base = {k: config.subject_spread * srng.standard_normal()
                        for k in ("hr", "sc", "temp", "resp")}
        subject_base["amp"] = 1.0 + 0.1 * srng.standard_normal()
        for t_idx, topic in enumerate(TOPICS):
            for label in LABELS:
                rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, subj, t_idx, label]))
                sid = sample_id_for(subject_id, topic, label)
                n_tokens = int(rng.integers(config.min_tokens, config.max_tokens + 1))
                text = _render(rng, _sample_tokens(rng, topic, label, n_tokens, config.lex_effect))
                streams = _streams(rng, subject_base, label, config)
                stream_rel = f"streams/{sid}.csv"
                physio.write_stream_csv(out / stream_rel, config.sample_rate, streams)
                manifest_rows.append([sid, subject_id, str(genders[subj]), topic, str(label),
                                      TRANSCRIPTS_FILE, stream_rel])
                transcript_rows.append((sid, text))

    _write_tsv(out / "manifest.tsv", MANIFEST_COLUMNS, manifest_rows)
    with open(out / TRANSCRIPTS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_id\ttext\n")
        for sid, text in transcript_rows:
            fh.write(f"{sid}\t{_escape(text)}\n")
    (out / "generator.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")
    return load_dataset(out)


def _write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_dataset(path, check_streams=True):
    """Load and validate a dataset directory.

    Stream contents are read lazily, but with ``check_streams`` every stream
    file must exist.
    """
    root = Path(path)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.tsv in {root}")
    lines = manifest.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != MANIFEST_COLUMNS:
        raise SchemaError(f"{manifest}: header must be {MANIFEST_COLUMNS}")

    texts = {}
    tpath = root / TRANSCRIPTS_FILE
    if not tpath.exists():
        raise FileNotFoundError(f"missing transcript file: {tpath}")
    for line in tpath.read_text(encoding="utf-8").splitlines()[1:]:
        sid, _, raw = line.partition("\t")
        texts[sid] = _unescape(raw)

    samples, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise SchemaError(f"{manifest}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields")
        sid, subject, gender, topic, label, tfile, sfile = parts
        if sid in seen:
            raise SchemaError(f"duplicate sample_id {sid!r}")
        seen.add(sid)
        if topic not in TOPICS:
            raise SchemaError(f"{sid}: unknown topic {topic!r}")
        if label not in ("0", "1"):
            raise SchemaError(f"{sid}: label must be 0 or 1, got {label!r}")
        if sid not in texts:
            raise SchemaError(f"{sid}: no transcript")
        stream_path = root / sfile
        if check_streams and not stream_path.exists():
            raise FileNotFoundError(f"missing stream file: {stream_path}")
        samples.append(Sample(sid, subject, gender, topic, int(label), texts[sid], stream_path, tfile))

    pairs = {}
    for s in samples:
        pairs.setdefault((s.subject_id, s.topic), []).append(s.label)
    for (subject, topic), labels in pairs.items():
        if sorted(labels) != [0, 1]:
            raise SchemaError(
                f"subject {subject}, topic {topic}: need exactly one truthful and one "
                f"deceptive sample, found labels {sorted(labels)}")
    return Dataset(samples, root)


def save_manifest(dataset, path):
    """Re-write a manifest for ``dataset`` (round-trips byte-identically)."""
    rows = []
    for s in dataset:
        rel = s.stream_file.relative_to(dataset.root) if dataset.root else s.stream_file
        rows.append([s.sample_id, s.subject_id, s.gender, s.topic, str(s.label),
                     s.transcript_file, rel.as_posix()])
    _write_tsv(path, MANIFEST_COLUMNS, rows)


def filter_topic(dataset, topic):
    """Samples of one topic in dataset order; ``both`` returns everything."""
    if topic not in TOPIC_CHOICES:
        raise ConfigError(f"unknown topic {topic!r}; choose from {TOPIC_CHOICES}")
    if topic == "both":
        return Dataset(dataset.samples, dataset.root)
    return Dataset([s for s in dataset if s.topic == topic], dataset.root)
