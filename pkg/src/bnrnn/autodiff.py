"""Parameters, structural graph ops, and finite-difference gradient checking."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionError
from .tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor whose gradient accumulates across a training step."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(data)
        self.name = name

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


# ----- structural ops -----

def slice_rows(t, start, stop):
    """Rows [start:stop) of a 2-d tensor; backward scatters into the slab."""
    out = Tensor(t.data[start:stop], parents=(t,))

    def backward(out=out, t=t, start=start, stop=stop):
        t._ensure_grad()
        t.grad[start:stop] += out.grad

    out._backward = backward
    return out


def concat_rows(parts):
    """Concatenate 2-d tensors along axis 0."""
    out = Tensor(np.concatenate([p.data for p in parts], axis=0),
                 parents=tuple(parts))

    def backward(out=out, parts=parts):
        offset = 0
        for p in parts:
            n = p.data.shape[0]
            p._ensure_grad()
            p.grad += out.grad[offset:offset + n]
            offset += n

    out._backward = backward
    return out


def concat_features(a, b):
    """Concatenate two 2-d tensors along the feature axis."""
    if a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"row counts differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))
    na = a.data.shape[1]

    def backward(out=out, a=a, b=b, na=na):
        a._ensure_grad()
        a.grad += out.grad[:, :na]
        b._ensure_grad()
        b.grad += out.grad[:, na:]

    out._backward = backward
    return out


def scale_rows(t, weights):
    """Multiply each row of a 2-d tensor by a per-row scalar (e.g. a frame mask)."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    if w.shape[0] != t.data.shape[0]:
        raise DimensionError(
            f"row weights {w.shape[0]} vs rows {t.data.shape[0]}")
    out = Tensor(t.data * w, parents=(t,))

    def backward(out=out, t=t, w=w):
        t._ensure_grad()
        t.grad += out.grad * w

    out._backward = backward
    return out


def embedding_lookup(table, ids):
    """Select rows of an embedding table by integer id; scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64).ravel()
    out = Tensor(table.data[ids], parents=(table,))

    def backward(out=out, table=table, ids=ids):
        table._ensure_grad()
        np.add.at(table.grad, ids, out.grad)

    out._backward = backward
    return out


def softmax_cross_entropy(logits, targets, weights=None):
    """Mean negative log-likelihood (nats) over weighted rows, as one fused node.

    ``logits`` is [N, C]; ``targets`` integer class ids [N]; ``weights`` an
    optional per-row 0/1 mask. The mean is taken over the total weight.
    """
    targets = np.asarray(targets, dtype=np.int64).ravel()
    n_rows = logits.data.shape[0]
    if weights is None:
        w = np.ones(n_rows)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
    total = w.sum()
    if total <= 0:
        raise DegenerateInputError("no unmasked frames in loss")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    nll = -logp[np.arange(n_rows), targets]
    loss = float((nll * w).sum() / total)
    out = Tensor(loss, parents=(logits,))

    def backward(out=out, logits=logits, probs=probs, targets=targets,
                 w=w, total=total):
        d = probs.copy()
        d[np.arange(len(targets)), targets] -= 1.0
        d *= (w / total)[:, None]
        logits._ensure_grad()
        logits.grad += d * out.grad

    out._backward = backward
    return out


def dropout(t, p, rng):
    """Inverted dropout: zero entries with probability p, scale the rest."""
    if p <= 0.0:
        return t
    keep = (rng.random(t.data.shape) >= p).astype(np.float64) / (1.0 - p)
    return t * Tensor(keep)


# ----- gradient checking -----

@dataclass
class GradCheckReport:
    per_parameter: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def max_relative_error(self):
        return max(self.per_parameter.values(), default=0.0)

    @property
    def passed(self):
        return not self.failures


def _relative_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def check_gradients(model, batch, step=1e-5, tolerance=1e-5,
                    max_elements=100, seed=0):
    """Compare analytic gradients against central finite differences.

    ``model`` must expose ``parameters()`` and ``loss(batch)``, the latter
    rebuilding the graph from the current parameter values and returning a
    scalar tensor. Large parameters are spot-checked on a random sample of
    at least ``max_elements`` entries.

    A single step size cannot serve every coordinate: float64 roundoff in
    the loss puts a ~1e-11 absolute noise floor on a 1e-5-step difference
    (drowning gradients of magnitude ~1e-7), while BN layers over tiny
    batches have enormous curvature and need a much smaller step. Each
    coordinate is therefore tried on a small ladder around ``step`` and
    judged on its best estimate, stopping early once it passes.
    """
    rng = np.random.default_rng(seed)
    steps = (step, step * 1e-1, step * 1e-2, step * 1e1, step * 1e2)
    params = list(model.parameters())
    for p in params:
        p.zero_grad()
    loss = model.loss(batch)
    loss.backward()
    report = GradCheckReport()
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.ravel()
        size = flat.size
        if size > max_elements:
            idxs = rng.choice(size, size=max_elements, replace=False)
        else:
            idxs = np.arange(size)
        worst = 0.0
        for i in idxs:
            a = float(analytic.ravel()[i])
            if not np.isfinite(a):
                report.failures.append(f"{p.name}[{i}]: non-finite gradient")
                worst = float("inf")
                continue
            saved = flat[i]
            best = float("inf")
            for h in steps:
                flat[i] = saved + h
                up = float(model.loss(batch).data.item())
                flat[i] = saved - h
                down = float(model.loss(batch).data.item())
                flat[i] = saved
                numeric = (up - down) / (2.0 * h)
                if not np.isfinite(numeric):
                    continue
                # difference at the roundoff floor of the central quotient
                # means the estimate carries no more information; treat as
                # exact agreement rather than inflating the relative error
                noise = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(up), abs(down)) / h
                if abs(a - numeric) <= noise:
                    best = 0.0
                else:
                    best = min(best, _relative_error(a, numeric))
                if best <= tolerance:
                    break
            worst = max(worst, best)
        report.per_parameter[p.name] = worst
        if worst > tolerance:
            report.failures.append(
                f"{p.name}: max relative error {worst:.3e} > {tolerance:.1e}")
    return report
