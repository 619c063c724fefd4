"""Corpus ingestion, batching with padding/masking, and task generators."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, IngestionError


@dataclass
class SequenceBatch:
    """Time-major padded batch: inputs [T, m, F] floats (or [T, m] token ids),
    per-frame targets [T, m], 0/1 mask [T, m], and true lengths [m]."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    def validate(self):
        t_len, m = self.targets.shape
        if self.mask.shape != (t_len, m):
            raise DimensionError("mask shape does not match targets")
        if self.lengths.shape != (m,):
            raise DimensionError("lengths shape does not match batch size")
        if int(self.lengths.max()) != t_len:
            raise DimensionError("max(lengths) must equal T")
        expect = (np.arange(t_len)[:, None] < self.lengths[None, :])
        if not np.array_equal(self.mask.astype(bool), expect):
            raise DimensionError("mask inconsistent with lengths")
        if self.inputs.ndim == 3:
            if np.any(self.inputs[~expect]):
                raise DimensionError("padded input frames must be zero")
        return self


class Vocabulary:
    """Dense bijective symbol <-> id mapping."""

    def __init__(self, symbols):
        self.id_to_symbol = list(symbols)
        self.symbol_to_id = {s: i for i, s in enumerate(self.id_to_symbol)}
        if len(self.symbol_to_id) != len(self.id_to_symbol):
            raise IngestionError("duplicate symbols in vocabulary")

    @property
    def size(self):
        return len(self.id_to_symbol)

    def encode(self, text):
        return np.array([self.symbol_to_id[ch] for ch in text], dtype=np.int64)

    def decode(self, ids):
        return "".join(self.id_to_symbol[int(i)] for i in ids)


@dataclass
class CharLmData:
    vocab: Vocabulary
    train: np.ndarray
    valid: np.ndarray
    kind: str = "char-lm"


@dataclass
class AlignmentData:
    train: list
    valid: list
    num_features: int
    num_classes: int
    kind: str = "synth-align"
    dropped: int = 0


def load_char_corpus(path, train_fraction=0.9):
    """Character-level corpus: vocabulary plus contiguous train/valid streams."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return char_corpus_from_text(text, train_fraction)


def char_corpus_from_text(text, train_fraction=0.9):
    if not text:
        raise IngestionError("empty corpus")
    vocab = Vocabulary(sorted(set(text)))
    stream = vocab.encode(text)
    cut = int(len(stream) * train_fraction)
    if cut < 1 or cut >= len(stream):
        raise IngestionError("split leaves an empty stream")
    return CharLmData(vocab, stream[:cut], stream[cut:])


def make_lm_batches(stream, batch_size, window):
    """Reshape a token stream into ``batch_size`` parallel tracks and yield
    consecutive BPTT windows. Track t of window w+1 continues track t of
    window w, so hidden state can be carried; targets are inputs shifted by
    one (the stream keeps one lookahead token per track)."""
    stream = np.asarray(stream, dtype=np.int64)
    m, t_len = int(batch_size), int(window)
    if len(stream) < m * (t_len + 1):
        raise IngestionError(
            f"stream of {len(stream)} tokens too short for "
            f"{m} tracks x window {t_len}")
    track_len = (len(stream) - 1) // m
    inputs = stream[:m * track_len].reshape(m, track_len)
    targets = stream[1:m * track_len + 1].reshape(m, track_len)
    batches = []
    for start in range(0, track_len - t_len + 1, t_len):
        x = inputs[:, start:start + t_len].T.copy()      # [T, m]
        y = targets[:, start:start + t_len].T.copy()
        batches.append(SequenceBatch(
            inputs=x, targets=y,
            mask=np.ones((t_len, m), dtype=np.float64),
            lengths=np.full(m, t_len, dtype=np.int64)))
    return batches


def make_padded_batches(sequences, batch_size, max_length=None, rng=None):
    """Pad variable-length (frames [T_i, F], labels [T_i]) pairs into
    time-major batches, each padded to its own longest member.

    Sequences longer than ``max_length`` are dropped (the count is returned).
    ``rng`` shuffles sequence order deterministically when given.
    """
    kept = [(np.asarray(f, dtype=np.float64), np.asarray(l, dtype=np.int64))
            for f, l in sequences]
    if max_length is not None:
        before = len(kept)
        kept = [s for s in kept if s[0].shape[0] <= max_length]
        dropped = before - len(kept)
    else:
        dropped = 0
    if not kept:
        raise IngestionError("no sequences left after length filtering")
    order = np.arange(len(kept))
    if rng is not None:
        rng.shuffle(order)
    batches = []
    for start in range(0, len(kept), batch_size):
        group = [kept[i] for i in order[start:start + batch_size]]
        m = len(group)
        lengths = np.array([f.shape[0] for f, _ in group], dtype=np.int64)
        t_len = int(lengths.max())
        n_feat = group[0][0].shape[1]
        x = np.zeros((t_len, m, n_feat))
        y = np.zeros((t_len, m), dtype=np.int64)
        mask = np.zeros((t_len, m))
        for i, (frames, labels) in enumerate(group):
            x[:lengths[i], i, :] = frames
            y[:lengths[i], i] = labels
            mask[:lengths[i], i] = 1.0
        batches.append(SequenceBatch(x, y, mask, lengths))
    return batches, dropped


def synth_alignment_task(seed, num_sequences, num_features, num_classes,
                         length_range=(10, 20), switch_prob=0.1,
                         scale_spread=1.0):
    """Desk-scale frame labelling task: random-walk features whose drift is
    set by a latent regime that switches stochastically; the per-frame label
    is the regime. The walk's magnitude grows along the sequence, and with
    ``scale_spread`` > 1 feature j carries a fixed unit log-spaced between 1
    and the spread (heterogeneous input units), so feature scale varies a
    lot, which is exactly where normalization should help."""
    rng = np.random.default_rng(seed)
    lo, hi = length_range
    if lo < 1 or hi < lo or num_classes < 2 or scale_spread < 1:
        raise ValueError("invalid generator parameters")
    scales = np.geomspace(1.0, scale_spread, num_features)
    drifts = rng.standard_normal((num_classes, num_features))
    drifts *= 1.5 / np.linalg.norm(drifts, axis=1, keepdims=True)
    sequences = []
    for _ in range(num_sequences):
        t_len = int(rng.integers(lo, hi + 1))
        regime = int(rng.integers(num_classes))
        x = np.zeros((t_len, num_features))
        labels = np.zeros(t_len, dtype=np.int64)
        pos = rng.standard_normal(num_features)
        for t in range(t_len):
            if rng.random() < switch_prob:
                regime = int(rng.integers(num_classes))
            pos = pos + drifts[regime] + 0.5 * rng.standard_normal(num_features)
            x[t] = pos
            labels[t] = regime
        sequences.append((x * scales, labels))
    return sequences


def make_alignment_data(seed, num_sequences, num_features, num_classes,
                        length_range=(10, 20), valid_fraction=0.2,
                        switch_prob=0.1, scale_spread=1.0):
    seqs = synth_alignment_task(seed, num_sequences, num_features,
                                num_classes, length_range, switch_prob,
                                scale_spread)
    cut = int(len(seqs) * (1.0 - valid_fraction))
    if cut < 1 or cut >= len(seqs):
        raise IngestionError("split leaves an empty set")
    return AlignmentData(seqs[:cut], seqs[cut:], num_features, num_classes)
