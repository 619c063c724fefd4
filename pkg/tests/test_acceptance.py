"""Acceptance suite: one test per release criterion.

Criteria 4 and 5 train real models and together take several minutes of CPU
time; everything else is fast. Run with ``pytest tests/test_acceptance.py -v``
for the per-criterion pass/fail lines.
"""

import math
import os
import statistics

import numpy as np
import numpy.testing as npt
import pytest

from bnrnn.autodiff import check_gradients
from bnrnn.checkpoint import load_checkpoint, save_checkpoint
from bnrnn.cli import main
from bnrnn.data import (SequenceBatch, char_corpus_from_text,
                        make_alignment_data, make_padded_batches)
from bnrnn.metrics import cross_entropy, frame_error_rate, perplexity
from bnrnn.normalization import BatchNormLayer, NormAxis
from bnrnn.recurrent import build_stack, init_parameters, run_sequence
from bnrnn.training import (SearchSpace, TrainConfig, random_search, train)


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness, every cell x placement x axis combo
# ---------------------------------------------------------------------------

def _gradcheck_batch(full, seed=3, t_len=4, m=3, f=3, c=4):
    rng = np.random.default_rng(seed)
    if full:
        lengths = np.full(m, t_len, dtype=np.int64)
    else:
        lengths = np.array([t_len] + list(rng.integers(1, t_len + 1, m - 1)))
    mask = (np.arange(t_len)[:, None] < lengths[None, :]).astype(np.float64)
    x = rng.standard_normal((t_len, m, f)) * mask[:, :, None]
    y = rng.integers(0, c, (t_len, m))
    return SequenceBatch(x, y, mask, lengths)


_COMBOS = [("none", "frame"), ("input", "frame"),
           ("input", "sequence"), ("preact", "frame")]


@pytest.mark.parametrize("cell", ["rnn", "lstm"])
@pytest.mark.parametrize("placement,axis", _COMBOS)
def test_criterion_1_gradients_match_finite_differences(cell, placement, axis):
    stack = build_stack(dict(cell=cell, layers=1, hidden=5, input_dim=3,
                             num_classes=4, placement=placement, axis=axis))
    init_parameters(stack, "gaussian", seed=1, scale=0.4)
    batch = _gradcheck_batch(full=(axis != "sequence"))
    report = check_gradients(stack, batch, step=1e-5, tolerance=1e-5)
    assert report.passed, report.failures
    assert report.max_relative_error < 1e-5


# ---------------------------------------------------------------------------
# criterion 2: normalization invariants
# ---------------------------------------------------------------------------

def _bn_block(seed=0, t_len=5, m=4, f=3):
    rng = np.random.default_rng(seed)
    lengths = np.array([t_len, t_len, 3, 2])
    mask = (np.arange(t_len)[:, None] < lengths[None, :]).astype(np.float64)
    # feature scale well above sqrt(100 * eps): variance >= 100 * eps
    x = rng.standard_normal((t_len, m, f)) * 2.0 * mask[:, :, None]
    return x, mask


def test_criterion_2_normalization_invariants():
    eps = 1e-5
    x, mask = _bn_block()
    flat = x.reshape(-1, 3)
    w = mask.reshape(-1)
    assert (((flat - (flat * w[:, None]).sum(0) / w.sum()) ** 2
             * w[:, None]).sum(0) / w.sum()).min() >= 100 * eps

    layer = BatchNormLayer("bn", 3, axis=NormAxis.SEQUENCE_WISE, eps=eps)
    out = layer.apply(x, mask=mask, mode="train").data.reshape(-1, 3)
    n = w.sum()
    mean = (out * w[:, None]).sum(axis=0) / n
    var = (((out - mean) ** 2) * w[:, None]).sum(axis=0) / n
    assert np.abs(mean).max() < 1e-10
    assert np.all(var >= 1.0 - 1e-3) and np.all(var <= 1.0)

    # padding invariance: extra masked-out frames change nothing, bit-exact
    layer_b = BatchNormLayer("bn", 3, axis=NormAxis.SEQUENCE_WISE, eps=eps)
    x2 = np.concatenate([x, np.zeros((2, 4, 3))], axis=0)
    mask2 = np.concatenate([mask, np.zeros((2, 4))], axis=0)
    out_b = layer_b.apply(x2, mask=mask2, mode="train").data
    npt.assert_array_equal(out.reshape(5, 4, 3), out_b[:5])

    # recovery: gamma = sqrt(var + eps), beta = mean gives back the input
    rec = BatchNormLayer("bn", 3, axis=NormAxis.SEQUENCE_WISE, eps=eps)
    bmean = (flat * w[:, None]).sum(axis=0) / n
    bvar = (((flat - bmean) ** 2) * w[:, None]).sum(axis=0) / n
    rec.gamma.data[...] = np.sqrt(bvar + eps)
    rec.beta.data[...] = bmean
    out_rec = rec.apply(x, mask=mask, mode="train").data
    npt.assert_allclose(out_rec, x * mask[:, :, None], atol=1e-12)


# ---------------------------------------------------------------------------
# criterion 3: sequence-wise estimator on the lengths-(3,1) worked example
# ---------------------------------------------------------------------------

def test_criterion_3_sequence_wise_estimator_worked_example():
    # seq A frames (1,2,3), seq B frame (4), time-major with B padded
    x = np.array([[[1.0], [4.0]], [[2.0], [0.0]], [[3.0], [0.0]]])
    mask = np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 0.0]])

    flat = x.reshape(-1, 1)
    w = mask.reshape(-1)
    n = w.sum()
    brute_mean = (flat * w[:, None]).sum(axis=0) / n
    brute_var = (((flat - brute_mean) ** 2) * w[:, None]).sum(axis=0) / n
    assert n == 4.0
    npt.assert_allclose(brute_mean, [2.5], atol=1e-12)
    npt.assert_allclose(brute_var, [1.25], atol=1e-12)

    layer = BatchNormLayer("bn", 1, axis=NormAxis.SEQUENCE_WISE, momentum=0.5)
    layer.apply(x, mask=mask, mode="train")
    mean, var = layer.store.get()
    npt.assert_allclose(mean, brute_mean, atol=1e-12)
    npt.assert_allclose(var, brute_var, atol=1e-12)


# ---------------------------------------------------------------------------
# criterion 4: convergence trend on the synthetic alignment task
# ---------------------------------------------------------------------------

def _alignment_run(data, placement, axis, seed, epochs):
    stack = build_stack(dict(cell="lstm", layers=2, hidden=64, input_dim=8,
                             num_classes=4, bidirectional=True,
                             placement=placement, axis=axis))
    init_parameters(stack, "glorot", seed=seed)
    config = TrainConfig(learning_rate=0.003, momentum=0.9, batch_size=32,
                         epochs=epochs, seed=seed, grad_norm_threshold=10.0)
    return train(stack, data, config)


def test_criterion_4_batch_norm_converges_faster():
    # heterogeneous per-feature units (log-spaced scales) are the regime
    # where input normalization pays off
    data = make_alignment_data(0, 2000, num_features=8, num_classes=4,
                               length_range=(8, 16), scale_spread=100.0)
    epochs_to_target = []
    for seed in (0, 1, 2):
        baseline = _alignment_run(data, "none", "frame", seed, epochs=10)
        assert baseline.status == "completed"
        target = baseline.split_rows("train")[-1].fce
        bn = _alignment_run(data, "input", "sequence", seed, epochs=7)
        reached = next((row.epoch for row in bn.split_rows("train")
                        if row.fce <= target), 8)
        epochs_to_target.append(reached)
    assert statistics.median(epochs_to_target) <= 7, epochs_to_target


# ---------------------------------------------------------------------------
# criterion 5: random-search trend on a small character LM
# ---------------------------------------------------------------------------

def _make_corpus(seed=0, size=500_000):
    """Deterministic ~500KB text: syllable words in short sentences."""
    rng = np.random.default_rng(seed)
    syllables = [c + v for c in "bdklmnrst" for v in "aeiou"]
    words = ["".join(syllables[int(rng.integers(len(syllables)))]
                     for _ in range(int(rng.integers(2, 5))))
             for _ in range(80)]
    parts, n = [], 0
    while n < size:
        k = int(rng.integers(4, 10))
        sent = " ".join(words[int(rng.integers(len(words)))]
                        for _ in range(k)) + ". "
        parts.append(sent)
        n += len(sent)
    return "".join(parts)[:size]


def _char_lm_factory(data, placement):
    def factory():
        stack = build_stack(dict(cell="rnn", layers=1, hidden=64,
                                 vocab_size=data.vocab.size, embedding_dim=16,
                                 num_classes=data.vocab.size,
                                 placement=placement, axis="frame"))
        return init_parameters(stack, "glorot", seed=0)
    return factory


def test_criterion_5_preactivation_trend_and_divergence():
    data = char_corpus_from_text(_make_corpus(), 0.9)
    space = SearchSpace(lr_range=(1e-4, 2.5),
                        momentum_choices=(0.5, 0.8, 0.9, 0.95, 0.995),
                        batch_choices=(32, 64, 128), trials=10)
    base = TrainConfig(epochs=5, bptt_window=20, seed=0,
                       grad_norm_threshold=None)
    baseline = random_search(_char_lm_factory(data, "none"), data, space,
                             base, seed=123)
    preact = random_search(_char_lm_factory(data, "preact"), data, space,
                           base, seed=123)

    best_baseline = min(r.best_valid_fce for r in baseline)
    best_preact = min(r.best_valid_fce for r in preact)
    # the normalized variant's best may not beat the baseline's by over 1%
    assert best_preact >= best_baseline * 0.99, (best_baseline, best_preact)

    # at least one learning rate where the baseline diverges and the
    # normalized network still trains (the trial pairs share hyperparameters)
    pairs = [(b, p) for b, p in zip(baseline, preact)
             if b.status == "diverged" and p.status == "completed"]
    assert pairs, [(r.learning_rate, r.status) for r in baseline]


# ---------------------------------------------------------------------------
# criterion 6: inference determinism across batch sizes and checkpoints
# ---------------------------------------------------------------------------

def _per_sequence_metrics(stack, sequences, batch_size):
    out = []
    for start in range(0, len(sequences), batch_size):
        batches, _ = make_padded_batches(sequences[start:start + batch_size],
                                         batch_size)
        batch = batches[0]
        logits = run_sequence(stack, batch, mode="infer").data
        for i, length in enumerate(batch.lengths):
            z = logits[:length, i, :]
            y = batch.targets[:length, i]
            out.append((cross_entropy(z, y), frame_error_rate(z, y)))
    return out


def test_criterion_6_inference_determinism(tmp_path):
    data = make_alignment_data(0, 40, num_features=3, num_classes=3,
                               length_range=(4, 8))
    stack = build_stack(dict(cell="lstm", layers=2, hidden=8, input_dim=3,
                             num_classes=3, bidirectional=True,
                             placement="input", axis="sequence"))
    init_parameters(stack, "glorot", seed=0)
    train(stack, data, TrainConfig(epochs=1, batch_size=8,
                                   learning_rate=0.05, seed=0))

    seqs = data.valid
    singles = _per_sequence_metrics(stack, seqs, 1)
    grouped = _per_sequence_metrics(stack, seqs, 8)
    assert singles == grouped  # bit-exact per sequence

    path = tmp_path / "model.ckpt"
    save_checkpoint(stack, str(path))
    reloaded, _ = load_checkpoint(str(path))
    assert _per_sequence_metrics(reloaded, seqs, 8) == grouped


# ---------------------------------------------------------------------------
# criterion 7: unit conventions
# ---------------------------------------------------------------------------

def test_criterion_7_unit_conventions():
    assert perplexity(math.log(50.0)) == 50.0
    for c in (2, 7, 50, 1000):
        ce = cross_entropy(np.zeros((3, c)), np.zeros(3, dtype=int))
        assert abs(ce - math.log(c)) < 1e-12


# ---------------------------------------------------------------------------
# criterion 8: byte-identical metrics CSVs for identical runs
# ---------------------------------------------------------------------------

_SPEC = """
[task]
kind = synth-align
sequences = 40
features = 3
classes = 3
min_length = 4
max_length = 8

[model]
cell = lstm
layers = 1
hidden = 8
bidirectional = true
init = glorot

[bn]
placement = input
axis = sequence

[train]
lr = 0.05
epochs = 3
batch_size = 8
seed = 11
"""


def test_criterion_8_training_is_byte_deterministic(tmp_path):
    spec = tmp_path / "run.ini"
    spec.write_text(_SPEC)
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["train", str(spec), "--out", out_a]) == 0
    assert main(["train", str(spec), "--out", out_b]) == 0
    read = lambda d, f: open(os.path.join(d, f), "rb").read()
    assert read(out_a, "metrics.csv") == read(out_b, "metrics.csv")
    assert read(out_a, "best.ckpt") == read(out_b, "best.ckpt")
