"""Frame-wise evaluation metrics and the metrics CSV format."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

CSV_HEADER = ["epoch", "split", "fce", "ppl", "fer", "lr", "seconds"]


def _flatten(logits, targets, mask):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 3:
        t_len, m, c = logits.shape
        logits = logits.reshape(t_len * m, c)
    targets = np.asarray(targets, dtype=np.int64).ravel()
    if mask is None:
        mask = np.ones(len(targets))
    else:
        mask = np.asarray(mask, dtype=np.float64).ravel()
    if mask.sum() <= 0:
        raise DegenerateInputError("no unmasked frames")
    return logits, targets, mask


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood in nats over masked-in frames."""
    logits, targets, mask = _flatten(logits, targets, mask)
    zmax = logits.max(axis=1, keepdims=True)
    logz = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    nll = logz - logits[np.arange(len(targets)), targets]
    return float((nll * mask).sum() / mask.sum())


def frame_error_rate(logits, targets, mask=None):
    """Fraction of masked-in frames whose argmax class is wrong; argmax ties
    break toward the lowest class index."""
    logits, targets, mask = _flatten(logits, targets, mask)
    pred = np.argmax(logits, axis=1)
    wrong = (pred != targets).astype(np.float64)
    return float((wrong * mask).sum() / mask.sum())


def perplexity(ce_nats):
    """exp of mean nats, preferring the float whose log is exactly ce_nats.

    libm exp is only faithful (within 1 ulp), so exp(log(50.0)) lands one
    ulp under 50. Snapping to the neighbor that round-trips through log
    makes perplexity the exact inverse of the nats convention whenever the
    input is itself a rounded logarithm.
    """
    if ce_nats < 0:
        raise ValueError("cross-entropy must be non-negative")
    y = float(np.exp(ce_nats))
    matches = [c for c in (y, float(np.nextafter(y, np.inf)),
                           float(np.nextafter(y, -np.inf)))
               if c > 0 and float(np.log(c)) == ce_nats]
    if matches:
        # several neighbors can share the same log; take the cleanest one
        return min(matches, key=lambda c: (len(repr(c)), abs(c - y)))
    return y


@dataclass
class MetricsRow:
    epoch: int
    split: str
    fce: float
    ppl: float
    fer: float
    lr: float
    seconds: float

    def as_list(self):
        return [self.epoch, self.split, repr(self.fce), repr(self.ppl),
                repr(self.fer), repr(self.lr), f"{self.seconds:.3f}"]


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_list())
