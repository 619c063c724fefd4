"""SGD with momentum, gradient rescaling, LR schedules, the training loop,
and the random hyperparameter search."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import softmax_cross_entropy
from .data import CharLmData, make_lm_batches, make_padded_batches
from .errors import ConfigurationError
from .metrics import MetricsRow, cross_entropy, frame_error_rate, perplexity
from .recurrent import run_sequence


@dataclass
class LrSchedule:
    """constant | halve_after(k) | divide_by(factor, k)."""

    kind: str = "constant"
    factor: float = 2.0
    after_epoch: int = 0

    def validate(self):
        if self.kind not in ("constant", "halve_after", "divide_by"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "divide_by" and self.factor <= 0:
            raise ConfigurationError("schedule factor must be positive")


def lr_at(schedule, epoch, base_lr):
    """Learning rate for 1-based ``epoch`` under the schedule."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    if schedule.kind == "constant":
        return base_lr
    decays = max(0, epoch - schedule.after_epoch)
    factor = 2.0 if schedule.kind == "halve_after" else schedule.factor
    return base_lr * factor ** (-decays)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    bptt_window: int = 20
    grad_norm_threshold: float = 10.0
    schedule: LrSchedule = field(default_factory=LrSchedule)
    epochs: int = 5
    seed: int = 0
    dropout_p: float = 0.0
    max_length: int = None

    def validate(self):
        problems = []
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            problems.append("momentum must be in [0, 1)")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not (0.0 <= self.dropout_p < 1.0):
            problems.append("dropout_p must be in [0, 1)")
        if self.grad_norm_threshold is not None and self.grad_norm_threshold <= 0:
            problems.append("grad_norm_threshold must be positive or none")
        if problems:
            raise ConfigurationError("; ".join(problems))
        self.schedule.validate()
        return self


def sgd_momentum_step(params, velocity, lr, momentum):
    """Classical momentum: v <- mu*v - lr*g; theta <- theta + v.

    ``velocity`` maps parameter name to its velocity array and is updated in
    place. A non-finite gradient aborts the step, naming the parameter.
    """
    for p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {p.name}")
        v = velocity.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v - lr * g
        velocity[p.name] = v
        p.data += v


def rescale_gradients(params, threshold):
    """Global-norm clipping: if the L2 norm over all gradients exceeds the
    threshold, scale every gradient by threshold/norm. Returns the norm."""
    if threshold is None:
        return 0.0
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    norm = np.sqrt(sq)
    if norm > threshold:
        scale = threshold / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    status: str = "completed"
    best_valid_fce: float = float("inf")
    best_epoch: int = 0
    best_state: object = None
    dropped_sequences: int = 0

    def split_rows(self, split):
        return [r for r in self.rows if r.split == split]


def evaluate(stack, batches, mode="infer", carry_state=False):
    """Frame-weighted metrics over a batch list, inference mode by default.

    ``carry_state`` threads each batch's final hidden states into the next
    batch; use it for language-model windows, where track t of one window
    continues track t of the previous one and a cold zero state at every
    window boundary would systematically inflate the cross entropy.
    """
    ce_sum = err_sum = frames = 0.0
    carried = None
    for batch in batches:
        logits, finals = stack.run(batch, mode=mode, init_states=carried,
                                   update_stats=False)
        t_len, m = batch.targets.shape
        arr = logits.data.reshape(t_len, m, stack.num_classes)
        fce = cross_entropy(arr, batch.targets, batch.mask)
        fer = frame_error_rate(arr, batch.targets, batch.mask)
        n = float(np.asarray(batch.mask).sum())
        ce_sum += fce * n
        err_sum += fer * n
        frames += n
        if carry_state:
            carried = finals
    return ce_sum / frames, err_sum / frames


def _epoch_batches(dataset, config, epoch_rng):
    if isinstance(dataset, CharLmData):
        train = make_lm_batches(dataset.train, config.batch_size,
                                config.bptt_window)
        valid = make_lm_batches(dataset.valid, config.batch_size,
                                config.bptt_window)
        return train, valid, 0
    train, dropped = make_padded_batches(
        dataset.train, config.batch_size, config.max_length, rng=epoch_rng)
    valid, _ = make_padded_batches(dataset.valid, config.batch_size,
                                   config.max_length)
    return train, valid, dropped


def _snapshot(stack):
    params = {p.name: p.data.copy() for p in stack.parameters()}
    stats = [layer.state() for layer in stack.bn_layers()]
    return params, stats


def restore_snapshot(stack, snap):
    params, stats = snap
    for p in stack.parameters():
        p.data[...] = params[p.name]
    for layer, (st, arrays) in zip(stack.bn_layers(), stats):
        layer.load_state(st, arrays)


def train(stack, dataset, config, log=None):
    """Run the full training loop; returns a RunRecord.

    Language-model datasets carry hidden state across consecutive BPTT
    windows within an epoch (gradients truncated at window boundaries);
    alignment datasets reset state per batch of whole sequences. Divergence
    (non-finite loss, or train FCE above twice the uniform-prediction cross
    entropy 2*ln(C) for three consecutive epochs) ends the run gracefully
    with status "diverged".
    """
    config.validate()
    is_lm = isinstance(dataset, CharLmData)
    rng = np.random.default_rng(config.seed)
    velocity = {}
    params = stack.parameters()
    record = RunRecord()
    divergence_limit = 2.0 * np.log(stack.num_classes)
    bad_epochs = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr = lr_at(config.schedule, epoch, config.learning_rate)
        train_batches, valid_batches, dropped = _epoch_batches(
            dataset, config, rng)
        record.dropped_sequences = dropped
        carried = None
        ce_sum = err_sum = frames = 0.0
        diverged = False
        for batch in train_batches:
            stack.zero_grad()
            logits, finals = stack.run(
                batch, mode="train", init_states=carried, update_stats=True,
                dropout_rng=rng if config.dropout_p > 0 else None)
            t_len, m = batch.targets.shape
            targets = batch.targets.reshape(t_len * m)
            weights = np.asarray(batch.mask, dtype=np.float64).reshape(t_len * m)
            loss = softmax_cross_entropy(logits, targets, weights)
            if not np.isfinite(loss.data):
                diverged = True
                break
            n = weights.sum()
            ce_sum += float(loss.data) * n
            arr = logits.data.reshape(t_len, m, stack.num_classes)
            err_sum += frame_error_rate(arr, batch.targets, batch.mask) * n
            frames += n
            loss.backward()
            rescale_gradients(params, config.grad_norm_threshold)
            try:
                sgd_momentum_step(params, velocity, lr, config.momentum)
            except FloatingPointError:
                diverged = True
                break
            if is_lm:
                carried = finals  # truncation: finals are detached arrays
        if diverged or frames == 0:
            record.status = "diverged"
            if log:
                log(f"epoch {epoch}: diverged (non-finite loss)")
            break
        train_fce = ce_sum / frames
        train_fer = err_sum / frames
        valid_fce, valid_fer = evaluate(stack, valid_batches, mode="infer",
                                        carry_state=is_lm)
        elapsed = time.perf_counter() - started
        # seconds column is fixed at 0.0 so identical runs produce
        # byte-identical CSVs; wall time goes to the log line only
        record.rows.append(MetricsRow(epoch, "train", train_fce,
                                      perplexity(train_fce), train_fer, lr, 0.0))
        record.rows.append(MetricsRow(epoch, "valid", valid_fce,
                                      perplexity(valid_fce), valid_fer, lr, 0.0))
        if log:
            log(f"epoch {epoch}: lr {lr:.3g} train fce {train_fce:.4f} "
                f"fer {train_fer:.3f} | valid fce {valid_fce:.4f} "
                f"fer {valid_fer:.3f} ({elapsed:.1f}s)")
        if valid_fce < record.best_valid_fce:
            record.best_valid_fce = valid_fce
            record.best_epoch = epoch
            record.best_state = _snapshot(stack)
        if train_fce > divergence_limit or not np.isfinite(train_fce):
            bad_epochs += 1
            if bad_epochs >= 3:
                record.status = "diverged"
                if log:
                    log(f"epoch {epoch}: diverged (fce stuck above "
                        f"2 ln C = {divergence_limit:.3f})")
                break
        else:
            bad_epochs = 0
    return record


@dataclass
class SearchSpace:
    lr_range: tuple = (1e-4, 1.0)
    momentum_choices: tuple = (0.5, 0.8, 0.9, 0.95, 0.995)
    batch_choices: tuple = (32, 64, 128)
    trials: int = 10

    def validate(self):
        lo, hi = self.lr_range
        if self.trials < 1 or lo <= 0 or hi < lo:
            raise ConfigurationError("invalid search space")
        if not self.momentum_choices or not self.batch_choices:
            raise ConfigurationError("empty choice sets")
        return self

    def sample(self, rng):
        lo, hi = self.lr_range
        lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        momentum = float(rng.choice(self.momentum_choices))
        batch = int(rng.choice(self.batch_choices))
        return lr, momentum, batch


@dataclass
class TrialResult:
    trial: int
    learning_rate: float
    momentum: float
    batch_size: int
    status: str
    best_train_fce: float
    best_valid_fce: float


def random_search(model_factory, dataset, space, base_config, seed=0, log=None):
    """Sample hyperparameters and train one fresh model per trial. Diverged
    runs are recorded with their status; the sweep never aborts."""
    space.validate()
    rng = np.random.default_rng(seed)
    samples = [space.sample(rng) for _ in range(space.trials)]
    results = []
    for trial, (lr, momentum, batch) in enumerate(samples):
        config = replace(base_config, learning_rate=lr, momentum=momentum,
                         batch_size=batch, seed=base_config.seed + trial)
        stack = model_factory()
        record = train(stack, dataset, config)
        train_rows = record.split_rows("train")
        best_train = min((r.fce for r in train_rows), default=float("inf"))
        results.append(TrialResult(
            trial, lr, momentum, batch, record.status,
            best_train, record.best_valid_fce))
        if log:
            log(f"trial {trial}: lr {lr:.3g} mom {momentum} batch {batch} "
                f"-> {record.status}, best valid fce {record.best_valid_fce:.4f}")
    return results
