"""Vanilla RNN and LSTM cells, bidirectional/stacked composition, and the
three batch-normalization placements (none, input-to-hidden, pre-activation).

Input-to-hidden placement normalizes only the W_x projections, leaving the
recurrent path untouched; under sequence-wise statistics the whole [T, m, H]
projection block is normalized at once before the time loop. Pre-activation
placement wraps the full recurrent pre-activation and is necessarily
frame-wise (statistics at step t depend on the hidden state at t-1).

Hidden (and cell) states are multiplied by the frame mask at every step, so
padded frames carry zero state. This keeps padding bit-invariant and gives
the backward direction of a bidirectional layer a clean initial state at
each sequence's true end.
"""

import enum

import numpy as np

from .autodiff import (Parameter, concat_features, concat_rows, dropout,
                       scale_rows, slice_rows, softmax_cross_entropy,
                       embedding_lookup)
from .errors import ConfigurationError, DimensionError
from .normalization import BatchNormLayer, NormAxis
from .tensor import Tensor


class Placement(enum.Enum):
    NONE = "none"
    INPUT_TO_HIDDEN = "input"
    PRE_ACTIVATION = "preact"


# late-bound so a monkeypatched Tensor.tanh (cli --corrupt-backward) is seen
_ACTIVATIONS = {"tanh": lambda t: t.tanh(), "sigmoid": lambda t: t.sigmoid()}


def _zeros(m, h):
    return Tensor(np.zeros((m, h)))


class RnnCell:
    """h_t = phi(W_h h_{t-1} + W_x x_t), with optional BN per placement."""

    def __init__(self, name, in_dim, hidden, activation="tanh",
                 placement=Placement.NONE, bn_axis=NormAxis.FRAME_WISE,
                 eps=1e-5, bn_momentum=0.9):
        if activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        if placement is Placement.PRE_ACTIVATION and bn_axis is NormAxis.SEQUENCE_WISE:
            raise ConfigurationError(
                "pre-activation BN cannot use sequence-wise statistics: "
                "step-t statistics depend on the step t-1 hidden state")
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        self.activation = activation
        self.placement = placement
        self.W_x = Parameter(f"{name}.W_x", np.zeros((in_dim, hidden)))
        self.W_h = Parameter(f"{name}.W_h", np.zeros((hidden, hidden)))
        self.bn = None
        if placement is not Placement.NONE:
            self.bn = BatchNormLayer(f"{name}.bn", hidden, axis=bn_axis,
                                     eps=eps, momentum=bn_momentum)

    def parameters(self):
        out = [self.W_x, self.W_h]
        if self.bn is not None:
            out.extend(self.bn.parameters())
        return out

    def bn_layers(self):
        return [] if self.bn is None else [self.bn]

    def _require_bn(self):
        if self.bn is None:
            raise ConfigurationError(
                f"{self.name}: placement {self.placement.value} requires a BN layer")

    def projections(self, x_flat, t_len, m, mask_flat, mode, update_stats=True):
        """Per-step input projections [m, H], BN'd under input-to-hidden."""
        proj = x_flat @ self.W_x
        if self.placement is Placement.INPUT_TO_HIDDEN:
            self._require_bn()
            if self.bn.axis is NormAxis.SEQUENCE_WISE:
                proj = self.bn.apply_flat(proj, mask_flat, mode, None, update_stats)
                return [slice_rows(proj, t * m, (t + 1) * m) for t in range(t_len)]
            steps = []
            for t in range(t_len):
                sl = slice_rows(proj, t * m, (t + 1) * m)
                w_t = None if mask_flat is None else mask_flat[t * m:(t + 1) * m]
                steps.append(self.bn.apply_flat(sl, w_t, mode, t, update_stats))
            return steps
        return [slice_rows(proj, t * m, (t + 1) * m) for t in range(t_len)]

    def step(self, h_prev, proj_t, t, mode, mask_t=None, update_stats=True):
        pre = proj_t + (h_prev @ self.W_h)
        if self.placement is Placement.PRE_ACTIVATION:
            self._require_bn()
            pre = self.bn.apply_flat(pre, mask_t, mode, t, update_stats)
        h = _ACTIVATIONS[self.activation](pre)
        if mask_t is not None:
            h = scale_rows(h, mask_t)
        return h

    def initial_state(self, m):
        return _zeros(m, self.hidden)


_GATES = ("i", "f", "c", "o")


class LstmCell:
    """Peephole LSTM; under input-to-hidden placement each of the four W_x
    projections passes through its own BN layer."""

    def __init__(self, name, in_dim, hidden, placement=Placement.NONE,
                 bn_axis=NormAxis.FRAME_WISE, eps=1e-5, bn_momentum=0.9):
        if placement is Placement.PRE_ACTIVATION and bn_axis is NormAxis.SEQUENCE_WISE:
            raise ConfigurationError(
                "pre-activation BN cannot use sequence-wise statistics")
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        self.placement = placement
        self.W_x = {g: Parameter(f"{name}.W_x{g}", np.zeros((in_dim, hidden)))
                    for g in _GATES}
        self.W_h = {g: Parameter(f"{name}.W_h{g}", np.zeros((hidden, hidden)))
                    for g in _GATES}
        self.w_co = Parameter(f"{name}.w_co", np.zeros(hidden))
        self.bn = None
        if placement is not Placement.NONE:
            self.bn = {g: BatchNormLayer(f"{name}.bn_{g}", hidden, axis=bn_axis,
                                         eps=eps, momentum=bn_momentum)
                       for g in _GATES}

    def parameters(self):
        out = []
        for g in _GATES:
            out.append(self.W_x[g])
        for g in _GATES:
            out.append(self.W_h[g])
        out.append(self.w_co)
        if self.bn is not None:
            for g in _GATES:
                out.extend(self.bn[g].parameters())
        return out

    def bn_layers(self):
        return [] if self.bn is None else [self.bn[g] for g in _GATES]

    def _require_bn(self):
        if self.bn is None:
            raise ConfigurationError(
                f"{self.name}: placement {self.placement.value} requires BN layers")

    def projections(self, x_flat, t_len, m, mask_flat, mode, update_stats=True):
        """Per-step dict of gate projections, BN'd under input-to-hidden."""
        per_gate = {}
        for g in _GATES:
            proj = x_flat @ self.W_x[g]
            if self.placement is Placement.INPUT_TO_HIDDEN:
                self._require_bn()
                if self.bn[g].axis is NormAxis.SEQUENCE_WISE:
                    proj = self.bn[g].apply_flat(proj, mask_flat, mode, None,
                                                 update_stats)
                    per_gate[g] = [slice_rows(proj, t * m, (t + 1) * m)
                                   for t in range(t_len)]
                else:
                    steps = []
                    for t in range(t_len):
                        sl = slice_rows(proj, t * m, (t + 1) * m)
                        w_t = (None if mask_flat is None
                               else mask_flat[t * m:(t + 1) * m])
                        steps.append(self.bn[g].apply_flat(sl, w_t, mode, t,
                                                           update_stats))
                    per_gate[g] = steps
            else:
                per_gate[g] = [slice_rows(proj, t * m, (t + 1) * m)
                               for t in range(t_len)]
        return [{g: per_gate[g][t] for g in _GATES} for t in range(t_len)]

    def _pre(self, gate, proj_t, h_prev, t, mode, mask_t, update_stats):
        pre = proj_t[gate] + (h_prev @ self.W_h[gate])
        if self.placement is Placement.PRE_ACTIVATION and gate != "o":
            self._require_bn()
            pre = self.bn[gate].apply_flat(pre, mask_t, mode, t, update_stats)
        return pre

    def step(self, h_prev, c_prev, proj_t, t, mode, mask_t=None,
             update_stats=True):
        i = self._pre("i", proj_t, h_prev, t, mode, mask_t, update_stats).sigmoid()
        f = self._pre("f", proj_t, h_prev, t, mode, mask_t, update_stats).sigmoid()
        g = self._pre("c", proj_t, h_prev, t, mode, mask_t, update_stats).tanh()
        c = f * c_prev + i * g
        pre_o = proj_t["o"] + (h_prev @ self.W_h["o"]) + self.w_co * c
        if self.placement is Placement.PRE_ACTIVATION:
            self._require_bn()
            pre_o = self.bn["o"].apply_flat(pre_o, mask_t, mode, t, update_stats)
        o = pre_o.sigmoid()
        h = o * c.tanh()
        if mask_t is not None:
            h = scale_rows(h, mask_t)
            c = scale_rows(c, mask_t)
        return h, c

    def initial_state(self, m):
        return _zeros(m, self.hidden), _zeros(m, self.hidden)


def rnn_step(cell, h_prev, x_t, mode="train", t=0, mask_t=None,
             update_stats=True):
    """One recurrent step from a raw input frame [m, F]."""
    if not isinstance(h_prev, Tensor):
        h_prev = Tensor(h_prev)
    if not isinstance(x_t, Tensor):
        x_t = Tensor(x_t)
    m = x_t.data.shape[0]
    proj = cell.projections(x_t, 1, m, mask_t, mode, update_stats)[0]
    return cell.step(h_prev, proj, t, mode, mask_t, update_stats)


def lstm_step(cell, h_prev, c_prev, x_t, mode="train", t=0, mask_t=None,
              update_stats=True):
    """One LSTM step from a raw input frame [m, F]; returns (h_t, c_t)."""
    if not isinstance(h_prev, Tensor):
        h_prev = Tensor(h_prev)
    if not isinstance(c_prev, Tensor):
        c_prev = Tensor(c_prev)
    if not isinstance(x_t, Tensor):
        x_t = Tensor(x_t)
    m = x_t.data.shape[0]
    proj = cell.projections(x_t, 1, m, mask_t, mode, update_stats)[0]
    return cell.step(h_prev, c_prev, proj, t, mode, mask_t, update_stats)


class RecurrentLayer:
    """One stack level: a forward cell and, if bidirectional, a backward cell
    whose outputs are concatenated per time step."""

    def __init__(self, cell_fwd, cell_bwd=None):
        self.cell_fwd = cell_fwd
        self.cell_bwd = cell_bwd
        if cell_bwd is not None and cell_bwd.hidden != cell_fwd.hidden:
            raise ConfigurationError("direction hidden sizes differ")

    @property
    def bidirectional(self):
        return self.cell_bwd is not None

    @property
    def out_dim(self):
        return self.cell_fwd.hidden * (2 if self.bidirectional else 1)

    def parameters(self):
        out = self.cell_fwd.parameters()
        if self.cell_bwd is not None:
            out = out + self.cell_bwd.parameters()
        return out

    def bn_layers(self):
        out = self.cell_fwd.bn_layers()
        if self.cell_bwd is not None:
            out = out + self.cell_bwd.bn_layers()
        return out

    def _run_direction(self, cell, x_flat, t_len, m, mask, mode,
                       init_state, update_stats, reverse):
        mask_flat = None if mask is None else mask.reshape(t_len * m)
        projs = cell.projections(x_flat, t_len, m, mask_flat, mode, update_stats)
        is_lstm = isinstance(cell, LstmCell)
        if init_state is not None:
            if is_lstm:
                state = (Tensor(init_state[0]), Tensor(init_state[1]))
            else:
                state = Tensor(init_state)
        else:
            state = cell.initial_state(m)
        outputs = [None] * t_len
        order = range(t_len - 1, -1, -1) if reverse else range(t_len)
        for t in order:
            mask_t = None if mask is None else mask[t]
            if is_lstm:
                h, c = cell.step(state[0], state[1], projs[t], t, mode,
                                 mask_t, update_stats)
                state = (h, c)
            else:
                state = cell.step(state, projs[t], t, mode, mask_t, update_stats)
                h = state
            outputs[t] = h
        if is_lstm:
            final = (state[0].data.copy(), state[1].data.copy())
        else:
            final = state.data.copy()
        return outputs, final

    def run(self, x_flat, t_len, m, mask, mode, init_state=None,
            update_stats=True):
        """x_flat is [T*m, F_in] time-major; returns ([T*m, out_dim], final)."""
        fwd_out, final = self._run_direction(
            self.cell_fwd, x_flat, t_len, m, mask, mode, init_state,
            update_stats, reverse=False)
        if self.cell_bwd is None:
            return concat_rows(fwd_out), final
        if init_state is not None:
            raise ConfigurationError(
                "state carry is not supported for bidirectional layers")
        bwd_out, _ = self._run_direction(
            self.cell_bwd, x_flat, t_len, m, mask, mode, None,
            update_stats, reverse=True)
        steps = [concat_features(fwd_out[t], bwd_out[t]) for t in range(t_len)]
        return concat_rows(steps), None


class RecurrentStack:
    """Embedding (optional) -> recurrent layers -> per-frame softmax logits."""

    def __init__(self, layers, num_classes, input_dim=None, vocab_size=None,
                 embedding_dim=None, dropout_p=0.0):
        self.layers = list(layers)
        self.num_classes = num_classes
        self.dropout_p = float(dropout_p)
        self.embedding = None
        if embedding_dim is not None:
            if vocab_size is None:
                raise ConfigurationError("embedding needs a vocabulary size")
            self.embedding = Parameter("embedding",
                                       np.zeros((vocab_size, embedding_dim)))
            first_in = embedding_dim
        else:
            if input_dim is None:
                raise ConfigurationError("need input_dim or an embedding")
            first_in = input_dim
        expected = first_in
        for i, layer in enumerate(self.layers):
            if layer.cell_fwd.in_dim != expected:
                raise ConfigurationError(
                    f"layer {i} input width {layer.cell_fwd.in_dim} != "
                    f"previous output width {expected}")
            expected = layer.out_dim
        self.W_out = Parameter("output.W", np.zeros((expected, num_classes)))
        self.b_out = Parameter("output.b", np.zeros(num_classes))
        # populated by build_stack so checkpoints can rebuild the model
        self.config = None

    def parameters(self):
        out = []
        if self.embedding is not None:
            out.append(self.embedding)
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend([self.W_out, self.b_out])
        return out

    def bn_layers(self):
        out = []
        for layer in self.layers:
            out.extend(layer.bn_layers())
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _input_node(self, batch):
        t_len, m = batch.targets.shape
        if self.embedding is not None:
            ids = np.asarray(batch.inputs, dtype=np.int64).reshape(t_len * m)
            return embedding_lookup(self.embedding, ids), t_len, m
        frames = np.asarray(batch.inputs, dtype=np.float64)
        if frames.ndim != 3:
            raise DimensionError(f"expected [T, m, F] frames, got {frames.shape}")
        return Tensor(frames.reshape(t_len * m, frames.shape[2])), t_len, m

    def run(self, batch, mode="train", init_states=None, update_stats=True,
            dropout_rng=None):
        """Returns (logits [T*m, C] tensor, per-layer final states)."""
        x, t_len, m = self._input_node(batch)
        mask = np.asarray(batch.mask, dtype=np.float64)
        if mask.min() >= 1.0:
            mask = None  # fully unpadded batch: skip all mask work
        finals = []
        for li, layer in enumerate(self.layers):
            init = None if init_states is None else init_states[li]
            x, final = layer.run(x, t_len, m, mask, mode, init, update_stats)
            finals.append(final)
            if mode == "train" and self.dropout_p > 0.0:
                if dropout_rng is None:
                    raise ConfigurationError(
                        "dropout requires a random generator in train mode")
                x = dropout(x, self.dropout_p, dropout_rng)
        logits = (x @ self.W_out) + self.b_out
        return logits, finals

    def loss(self, batch, mode="train", init_states=None, update_stats=False,
             dropout_rng=None):
        """Scalar masked cross-entropy node; stats updates off by default so
        repeated calls (gradient checking) are pure."""
        logits, _ = self.run(batch, mode, init_states, update_stats, dropout_rng)
        t_len, m = batch.targets.shape
        targets = np.asarray(batch.targets, dtype=np.int64).reshape(t_len * m)
        weights = np.asarray(batch.mask, dtype=np.float64).reshape(t_len * m)
        return softmax_cross_entropy(logits, targets, weights)


def run_sequence(stack, batch, mode="train", dropout_rng=None):
    """Unroll the stack over a batch; returns logits as a [T, m, C] tensor."""
    logits, _ = stack.run(batch, mode=mode, dropout_rng=dropout_rng)
    t_len, m = batch.targets.shape
    return logits.reshape(t_len, m, stack.num_classes)


# ----- construction and initialization -----

def glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_parameters(stack, scheme="glorot", seed=0, scale=None):
    """Draw weights per scheme; embedding is unit Gaussian, gamma/beta reset
    to 1/0, vector weights and biases to zero. Deterministic in the seed."""
    rng = np.random.default_rng(seed)
    for p in stack.parameters():
        name = p.name
        if name == "embedding":
            p.data[...] = rng.standard_normal(p.data.shape)
        elif name.endswith(".gamma"):
            p.data[...] = 1.0
        elif name.endswith(".beta") or p.data.ndim == 1:
            p.data[...] = 0.0
        elif scheme == "glorot":
            bound = glorot_bound(p.data.shape[0], p.data.shape[1])
            p.data[...] = rng.uniform(-bound, bound, p.data.shape)
        elif scheme == "uniform":
            r = 0.1 if scale is None else float(scale)
            p.data[...] = rng.uniform(-r, r, p.data.shape)
        elif scheme == "gaussian":
            sigma = 1.0 if scale is None else float(scale)
            p.data[...] = sigma * rng.standard_normal(p.data.shape)
        else:
            raise ConfigurationError(f"unknown init scheme {scheme!r}")
    return stack


def build_stack(config):
    """Build a RecurrentStack from a flat config dict (see cli.RunSpec)."""
    cell_kind = config.get("cell", "lstm")
    n_layers = int(config.get("layers", 1))
    hidden = int(config["hidden"])
    bidirectional = bool(config.get("bidirectional", False))
    placement = Placement(config.get("placement", "none"))
    axis = NormAxis(config.get("axis", "frame"))
    eps = float(config.get("eps", 1e-5))
    bn_momentum = float(config.get("bn_momentum", 0.9))
    embedding_dim = config.get("embedding_dim")
    input_dim = config.get("input_dim")
    num_classes = int(config["num_classes"])
    vocab_size = config.get("vocab_size")
    dropout_p = float(config.get("dropout", 0.0))
    activation = config.get("activation", "tanh")

    def make_cell(name, in_dim):
        if cell_kind == "lstm":
            return LstmCell(name, in_dim, hidden, placement=placement,
                            bn_axis=axis, eps=eps, bn_momentum=bn_momentum)
        if cell_kind == "rnn":
            return RnnCell(name, in_dim, hidden, activation=activation,
                           placement=placement, bn_axis=axis, eps=eps,
                           bn_momentum=bn_momentum)
        raise ConfigurationError(f"unknown cell type {cell_kind!r}")

    layers = []
    in_dim = int(embedding_dim) if embedding_dim else int(input_dim)
    for i in range(n_layers):
        fwd = make_cell(f"layer{i}.fwd", in_dim)
        bwd = make_cell(f"layer{i}.bwd", in_dim) if bidirectional else None
        layers.append(RecurrentLayer(fwd, bwd))
        in_dim = layers[-1].out_dim
    stack = RecurrentStack(
        layers, num_classes,
        input_dim=None if embedding_dim else int(input_dim),
        vocab_size=int(vocab_size) if vocab_size else None,
        embedding_dim=int(embedding_dim) if embedding_dim else None,
        dropout_p=dropout_p)
    stack.config = dict(config)
    return stack
