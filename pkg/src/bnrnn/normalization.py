"""Batch normalization with frame-wise and sequence-wise statistics.

Frame-wise normalization computes one mean and one variance per feature at
each time step of the unrolled network, tracking separate inference
statistics per step (but a single gamma/beta shared across steps).
Sequence-wise normalization pools the time and batch axes, restricting the
sums to unpadded frames; the divisor is the total number of unpadded frames
in the mini-batch.
"""

import enum

import numpy as np

from .autodiff import Parameter
from .errors import (ConfigurationError, DegenerateInputError, DimensionError,
                     MissingStatisticsError)
from .tensor import Tensor


class NormAxis(enum.Enum):
    FRAME_WISE = "frame"
    SEQUENCE_WISE = "sequence"


def batch_statistics(x):
    """Biased per-feature mean and variance over the batch axis of [m, F]."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError(f"expected [m, F], got shape {data.shape}")
    if data.shape[0] == 0:
        raise DegenerateInputError("empty batch")
    mean = data.mean(axis=0)
    var = ((data - mean) ** 2).mean(axis=0)
    return mean, var


def masked_statistics(x2d, weights):
    """Biased mean/variance over rows of [N, F] weighted by a 0/1 row mask."""
    n = weights.sum()
    if n <= 0:
        raise DegenerateInputError("no unpadded frames in mini-batch")
    w = weights.reshape(-1, 1)
    mean = (x2d * w).sum(axis=0) / n
    var = (((x2d - mean) ** 2) * w).sum(axis=0) / n
    return mean, var, float(n)


def standardize(x, mean, var, eps):
    """(x - mean) / sqrt(var + eps) with per-feature statistics."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return (data - mean) / np.sqrt(var + eps)


class StatisticsStore:
    """Running inference statistics: one slot per time step under frame-wise
    normalization, a single slot under sequence-wise."""

    def __init__(self, axis, num_features):
        self.axis = axis
        self.num_features = num_features
        self.update_count = 0
        if axis is NormAxis.FRAME_WISE:
            self.per_step = {}  # t -> [mean, var, count]
        else:
            self.mean = None
            self.var = None

    def update(self, batch_mean, batch_var, momentum, time_index=None):
        if not (0.0 < momentum < 1.0):
            raise ValueError("momentum must be in (0, 1)")
        batch_mean = np.asarray(batch_mean, dtype=np.float64)
        batch_var = np.asarray(batch_var, dtype=np.float64)
        if batch_mean.shape != (self.num_features,) or batch_var.shape != (self.num_features,):
            raise DimensionError(
                f"statistics shape {batch_mean.shape} does not match "
                f"store width ({self.num_features},)")
        self.update_count += 1
        if self.axis is NormAxis.FRAME_WISE:
            if time_index is None:
                raise ConfigurationError("frame-wise store update needs a time index")
            slot = self.per_step.get(time_index)
            if slot is None:
                self.per_step[time_index] = [batch_mean.copy(), batch_var.copy(), 1]
            else:
                slot[0] = momentum * slot[0] + (1.0 - momentum) * batch_mean
                slot[1] = momentum * slot[1] + (1.0 - momentum) * batch_var
                slot[2] += 1
        else:
            if self.mean is None:
                self.mean = batch_mean.copy()
                self.var = batch_var.copy()
            else:
                self.mean = momentum * self.mean + (1.0 - momentum) * batch_mean
                self.var = momentum * self.var + (1.0 - momentum) * batch_var

    def get(self, time_index=None):
        if self.axis is NormAxis.FRAME_WISE:
            slot = self.per_step.get(time_index)
            if slot is None:
                raise MissingStatisticsError(
                    f"no statistics recorded for time step {time_index}")
            return slot[0], slot[1]
        if self.mean is None:
            raise MissingStatisticsError("no statistics recorded yet")
        return self.mean, self.var


def update_running(store, batch_mean, batch_var, momentum, time_index=None):
    store.update(batch_mean, batch_var, momentum, time_index=time_index)
    return store


class BatchNormLayer:
    """gamma * standardize(x) + beta over the configured statistics axis."""

    def __init__(self, name, num_features, axis=NormAxis.SEQUENCE_WISE,
                 eps=1e-5, momentum=0.9):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.name = name
        self.num_features = num_features
        self.axis = axis
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Parameter(f"{name}.gamma", np.ones(num_features))
        self.beta = Parameter(f"{name}.beta", np.zeros(num_features))
        self.store = StatisticsStore(axis, num_features)

    def parameters(self):
        return [self.gamma, self.beta]

    def apply(self, x, mask=None, mode="train", time_index=None,
              update_stats=True):
        """Normalize ``x``.

        Frame-wise: x is [m, F], ``time_index`` selects the statistics slot,
        ``mask`` an optional per-row 0/1 array. Sequence-wise: x is
        [T, m, F] with ``mask`` [T, m]; output padded frames are zeroed.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if self.axis is NormAxis.SEQUENCE_WISE:
            if x.ndim != 3:
                raise DimensionError(
                    f"sequence-wise BN expects [T, m, F], got {x.shape}")
            t_len, m, f = x.shape
            weights = None
            if mask is not None:
                weights = np.asarray(mask, dtype=np.float64).reshape(t_len * m)
            flat = x.reshape(t_len * m, f)
            out = self.apply_flat(flat, weights, mode, None, update_stats)
            return out.reshape(t_len, m, f)
        if x.ndim != 2:
            raise DimensionError(f"frame-wise BN expects [m, F], got {x.shape}")
        if mode == "train" and time_index is None:
            raise ConfigurationError("frame-wise BN in train mode needs a time index")
        weights = None
        if mask is not None:
            weights = np.asarray(mask, dtype=np.float64).reshape(-1)
        return self.apply_flat(x, weights, mode, time_index, update_stats)

    def apply_flat(self, x2d, weights, mode, time_index, update_stats=True):
        """Core path on flattened rows [N, F]; used directly by the recurrent
        layers, which manage the [T, m] -> [T*m] flattening themselves."""
        if x2d.data.shape[1] != self.num_features:
            raise DimensionError(
                f"BN layer width {self.num_features}, input width "
                f"{x2d.data.shape[1]}")
        if mode == "infer":
            try:
                mean, var = self.store.get(time_index)
            except MissingStatisticsError as exc:
                raise MissingStatisticsError(f"{self.name}: {exc}") from None
            return self._affine_node(x2d, mean, var, weights)
        if weights is None:
            mean, var = batch_statistics(x2d.data)
        else:
            mean, var, _ = masked_statistics(x2d.data, weights)
        if update_stats:
            self.store.update(mean, var, self.momentum, time_index=time_index)
        return self._train_node(x2d, mean, var, weights)

    def _train_node(self, x2d, mean, var, weights):
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x2d.data - mean) * inv
        y = self.gamma.data * xhat + self.beta.data
        n = x2d.data.shape[0]
        if weights is not None:
            w = weights.reshape(-1, 1)
            y = y * w
            n = weights.sum()
        out = Tensor(y, parents=(x2d, self.gamma, self.beta))
        gamma, beta = self.gamma, self.beta
        wcol = None if weights is None else weights.reshape(-1, 1)

        def backward(out=out, x2d=x2d, gamma=gamma, beta=beta,
                     xhat=xhat, inv=inv, wcol=wcol, n=n):
            dy = out.grad if wcol is None else out.grad * wcol
            gamma._ensure_grad()
            gamma.grad += (dy * xhat).sum(axis=0)
            beta._ensure_grad()
            beta.grad += dy.sum(axis=0)
            dxhat = dy * gamma.data
            s1 = dxhat.sum(axis=0) / n
            s2 = (dxhat * xhat).sum(axis=0) / n
            dx = (dxhat - s1 - xhat * s2) * inv
            if wcol is not None:
                dx = dx * wcol
            x2d._ensure_grad()
            x2d.grad += dx

        out._backward = backward
        return out

    def _affine_node(self, x2d, mean, var, weights):
        scale = self.gamma.data / np.sqrt(var + self.eps)
        shift = self.beta.data - mean * scale
        y = x2d.data * scale + shift
        if weights is not None:
            y = y * weights.reshape(-1, 1)
        out = Tensor(y, parents=(x2d,))
        wcol = None if weights is None else weights.reshape(-1, 1)

        def backward(out=out, x2d=x2d, scale=scale, wcol=wcol):
            dy = out.grad if wcol is None else out.grad * wcol
            x2d._ensure_grad()
            x2d.grad += dy * scale

        out._backward = backward
        return out

    # ----- checkpoint support -----

    def state(self):
        st = {"axis": self.axis.value, "eps": self.eps,
              "momentum": self.momentum, "update_count": self.store.update_count}
        arrays = {}
        if self.axis is NormAxis.FRAME_WISE:
            st["steps"] = sorted(self.store.per_step)
            st["step_counts"] = [self.store.per_step[t][2] for t in st["steps"]]
            for t in st["steps"]:
                arrays[f"mean.t{t}"] = self.store.per_step[t][0]
                arrays[f"var.t{t}"] = self.store.per_step[t][1]
        else:
            st["has_stats"] = self.store.mean is not None
            if self.store.mean is not None:
                arrays["mean"] = self.store.mean
                arrays["var"] = self.store.var
        return st, arrays

    def load_state(self, st, arrays):
        self.eps = float(st["eps"])
        self.momentum = float(st["momentum"])
        self.store = StatisticsStore(self.axis, self.num_features)
        self.store.update_count = int(st["update_count"])
        if self.axis is NormAxis.FRAME_WISE:
            for t, c in zip(st["steps"], st["step_counts"]):
                self.store.per_step[int(t)] = [
                    arrays[f"mean.t{t}"].copy(), arrays[f"var.t{t}"].copy(), int(c)]
        elif st.get("has_stats"):
            self.store.mean = arrays["mean"].copy()
            self.store.var = arrays["var"].copy()


def bn_apply(layer, x, mask=None, mode="train", time_index=None):
    return layer.apply(x, mask=mask, mode=mode, time_index=time_index)
