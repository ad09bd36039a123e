"""Transcript cleaning, vocabulary, skip-gram embeddings and M x 32 arrays."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmbeddingFormatError, EmptyCorpusError, InvalidIdError,
                     LengthOverflowError)

VOCAB_CAP = 500
EMBED_DIM = 32
UNK = 0
MIN_ROWS = 5  # largest LingCNN filter side

_BRACKETED = re.compile(r"\[[^\]]*\]")
_TOKEN = re.compile(r"[^\W_]+")


def clean_transcript(text):
    """Drop ``[...]`` annotations, lowercase, and keep runs of letters/digits."""
    return _TOKEN.findall(_BRACKETED.sub(" ", text).lower())


@dataclass(frozen=True)
class Vocabulary:
    """Word -> id for the most frequent words; id 0 is UNK and padding."""

    word_to_id: dict
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.word_to_id)

    def __contains__(self, word):
        return word in self.word_to_id

    @property
    def words(self):
        """Words in id order (index 0 is id 1)."""
        return sorted(self.word_to_id, key=self.word_to_id.__getitem__)

    def lookup(self, word):
        return self.word_to_id.get(word, UNK)


def build_vocab(corpus, cap=VOCAB_CAP):
    """Ids 1..cap by descending frequency, ties broken alphabetically."""
    counts = Counter(tok for seq in corpus for tok in seq)
    if not counts:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary({w: i + 1 for i, (w, _) in enumerate(ranked)},
                      {w: c for w, c in ranked})


@dataclass
class CorpusStats:
    M: int
    lengths: list

    @classmethod
    def of(cls, token_seqs, min_rows=MIN_ROWS):
        """``M`` is the longest transcript, floored at ``min_rows``."""
        lengths = [len(t) for t in token_seqs]
        return cls(M=max([min_rows, 1, *lengths]), lengths=lengths)


@dataclass
class EmbeddingModel:
    """(|vocab| + 1) x dim matrix whose row 0 stays zero."""

    matrix: np.ndarray
    vocab: Vocabulary
    missing: list = field(default_factory=list)

    @property
    def dim(self):
        return self.matrix.shape[1]

    def save(self, path):
        save_embeddings(path, self)


@dataclass
class EmbeddedTranscript:
    array: np.ndarray
    true_length: int


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def skipgram_pairs(id_seqs, window):
    """All (center, context) pairs within ``window``; UNK positions are skipped."""
    centers, contexts = [], []
    for ids in id_seqs:
        ids = np.asarray(ids, dtype=np.int64)
        n = ids.size
        for off in range(1, window + 1):
            if off >= n:
                break
            a, b = ids[:-off], ids[off:]
            keep = (a != UNK) & (b != UNK)
            centers.extend([a[keep], b[keep]])
            contexts.extend([b[keep], a[keep]])
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_skipgram(corpus, vocab, dim=EMBED_DIM, window=5, negatives=5, epochs=15,
                   lr=0.025, min_lr=1e-4, batch_size=64, seed=0, return_history=False):
    """Train skip-gram embeddings with negative sampling.

    ``corpus`` is a list of token sequences. Pairs are visited in a seeded
    shuffled order in mini-batches of summed per-pair SGD updates; the
    learning rate decays linearly from ``lr`` to ``min_lr``. Negatives are
    drawn from the unigram distribution raised to 0.75.
    """
    id_seqs = [[vocab.lookup(t) for t in seq] for seq in corpus]
    if not any(len(s) for s in id_seqs):
        raise EmptyCorpusError("skip-gram corpus is empty")
    rng = np.random.default_rng(seed)
    V = len(vocab) + 1
    w_in = np.zeros((V, dim))
    w_in[1:] = rng.uniform(-0.5 / dim, 0.5 / dim, size=(V - 1, dim))
    w_out = np.zeros((V, dim))

    freq = np.zeros(V)
    for seq in id_seqs:
        np.add.at(freq, np.asarray(seq, dtype=np.int64), 1.0)
    freq[UNK] = 0.0
    noise = freq ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    centers, contexts = skipgram_pairs(id_seqs, window)
    n_pairs = centers.size
    total_steps = max(1, epochs * -(-n_pairs // batch_size))
    step = 0
    history = []
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for lo in range(0, n_pairs, batch_size):
            sel = order[lo:lo + batch_size]
            c, o = centers[sel], contexts[sel]
            neg = np.searchsorted(noise_cdf, rng.random((sel.size, negatives)), side="right")
            neg = np.minimum(neg, V - 1)
            alpha = max(min_lr, lr * (1.0 - step / total_steps))
            step += 1

            v = w_in[c]
            u_pos = w_out[o]
            u_neg = w_out[neg]
            s_pos = _sigmoid(np.einsum("bd,bd->b", v, u_pos))
            s_neg = _sigmoid(np.einsum("bd,bkd->bk", v, u_neg))
            epoch_loss -= np.log(s_pos + 1e-12).sum() + np.log(1.0 - s_neg + 1e-12).sum()

            g_pos = s_pos - 1.0
            g_neg = s_neg
            grad_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", g_neg, u_neg)
            np.add.at(w_out, o, -alpha * g_pos[:, None] * v)
            np.add.at(w_out, neg, -alpha * g_neg[..., None] * v[:, None, :])
            np.add.at(w_in, c, -alpha * grad_v)
        history.append(epoch_loss / max(1, n_pairs))
    w_in[UNK] = 0.0
    model = EmbeddingModel(w_in, vocab)
    return (model, history) if return_history else model


# ---------------------------------------------------------------------------
# Embedding files
# ---------------------------------------------------------------------------

def save_embeddings(path, model):
    """Write ``<vocab_size> <dim>`` then one ``word v1 ... vdim`` line per word."""
    lines = [f"{len(model.vocab)} {model.dim}"]
    for word in model.vocab.words:
        row = model.matrix[model.vocab.word_to_id[word]]
        lines.append(" ".join([word, *(format(float(v), ".17g") for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path, vocab=None):
    """Read an embedding file, aligning rows to ``vocab``.

    Without ``vocab`` the file's own word order defines ids 1..n. Vocabulary
    words absent from the file get zero rows and are listed in
    ``model.missing``.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EmbeddingFormatError("empty embedding file", 1)
    head = lines[0].split()
    try:
        n_words, dim = int(head[0]), int(head[1])
        if len(head) != 2:
            raise ValueError
    except (ValueError, IndexError):
        raise EmbeddingFormatError(f"bad header {lines[0]!r}", 1) from None
    vectors = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise EmbeddingFormatError(f"expected a word and {dim} values, got {len(parts)} fields", lineno)
        try:
            vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
        except ValueError:
            raise EmbeddingFormatError(f"non-numeric value in {line[:40]!r}", lineno) from None
    if len(vectors) != n_words:
        raise EmbeddingFormatError(f"header promises {n_words} words, found {len(vectors)}", 1)
    if vocab is None:
        vocab = Vocabulary({w: i + 1 for i, w in enumerate(vectors)})
    matrix = np.zeros((len(vocab) + 1, dim))
    missing = []
    for word in vocab.words:
        if word in vectors:
            matrix[vocab.word_to_id[word]] = vectors[word]
        else:
            missing.append(word)
    return EmbeddingModel(matrix, vocab, missing)


# ---------------------------------------------------------------------------
# Lookup
# ---------------------------------------------------------------------------

def vectorize(tokens, vocab, M):
    """Ids of ``tokens`` (UNK -> 0), right-padded with zeros to length ``M``."""
    if len(tokens) > M:
        raise LengthOverflowError(f"transcript has {len(tokens)} tokens but M={M}")
    ids = np.zeros(M, dtype=np.int64)
    ids[:len(tokens)] = [vocab.lookup(t) for t in tokens]
    return ids


def embed(ids, model, true_length=None):
    """Row ``i`` of the result is embedding-matrix row ``ids[i]``."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = model.matrix.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        bad = ids[(ids < 0) | (ids >= rows)][0]
        raise InvalidIdError(f"id {bad} outside embedding matrix with {rows} rows")
    if true_length is None:
        nz = np.flatnonzero(ids)
        true_length = int(nz[-1]) + 1 if nz.size else 0
    return EmbeddedTranscript(model.matrix[ids], int(true_length))
