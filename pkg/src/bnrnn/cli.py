"""Command-line entry point: train, eval, sweep, gradcheck.

Run specs are flat INI files (sections: task, model, bn, train); every key
can be overridden with ``--set section.key=value``. ``preset:<name>`` in
place of a spec path loads one of the shipped presets.
"""

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (SequenceBatch, load_char_corpus, make_alignment_data,
                   make_lm_batches, make_padded_batches)
from .errors import BnrnnError, SpecValidationError
from .metrics import write_metrics_csv
from .normalization import NormAxis
from .presets import PRESETS
from .recurrent import Placement, build_stack, init_parameters
from .training import (LrSchedule, SearchSpace, TrainConfig, evaluate,
                       random_search, restore_snapshot, train)
from . import autodiff
from .tensor import Tensor

_KNOWN_KEYS = {
    "task": {"kind", "corpus", "train_fraction", "sequences", "features",
             "classes", "min_length", "max_length", "data_seed",
             "valid_fraction", "switch_prob", "scale_spread"},
    "model": {"cell", "layers", "hidden", "bidirectional", "embedding",
              "init", "activation"},
    "bn": {"placement", "axis", "eps", "momentum"},
    "train": {"lr", "momentum", "batch_size", "bptt_window", "grad_clip",
              "dropout", "epochs", "schedule", "seed", "max_length"},
}


@dataclass
class RunSpec:
    task: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    bn: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def get(self, section, key, default=None):
        return getattr(self, section).get(key, default)


def parse_spec(source, overrides=()):
    """Load an INI run spec from a path or ``preset:<name>``."""
    parser = configparser.ConfigParser()
    if source.startswith("preset:"):
        name = source[len("preset:"):]
        if name not in PRESETS:
            raise SpecValidationError(
                [f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"])
        parser.read_string(PRESETS[name])
    else:
        if not os.path.exists(source):
            raise SpecValidationError([f"spec file not found: {source}"])
        parser.read(source)
    spec = RunSpec()
    problems = []
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            problems.append(f"unknown section [{section}]")
            continue
        for key, value in parser.items(section):
            if key not in _KNOWN_KEYS[section]:
                problems.append(f"unknown key {section}.{key}")
            getattr(spec, section)[key] = value
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            problems.append(f"override {item!r} is not section.key=value")
            continue
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in _KNOWN_KEYS or key not in _KNOWN_KEYS[section]:
            problems.append(f"unknown override target {target}")
            continue
        getattr(spec, section)[key] = value
    if problems:
        raise SpecValidationError(problems)
    return spec


def _parse_schedule(text):
    parts = text.split(":")
    if parts[0] == "constant":
        return LrSchedule("constant")
    if parts[0] == "halve_after":
        return LrSchedule("halve_after", after_epoch=int(parts[1]))
    if parts[0] == "divide_by":
        return LrSchedule("divide_by", factor=float(parts[1]),
                          after_epoch=int(parts[2]))
    raise ValueError(f"unknown schedule {text!r}")


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def validate_spec(spec):
    """Check every cross-field constraint; report all violations at once."""
    problems = []
    kind = spec.get("task", "kind", "")
    if kind not in ("char-lm", "synth-align"):
        problems.append("task.kind must be char-lm or synth-align")
    placement = spec.get("bn", "placement", "none")
    axis = spec.get("bn", "axis", "frame")
    if placement not in ("none", "input", "preact"):
        problems.append("bn.placement must be none, input, or preact")
    if axis not in ("frame", "sequence"):
        problems.append("bn.axis must be frame or sequence")
    bidirectional = _bool(spec.get("model", "bidirectional", "false"))
    if kind == "char-lm":
        if placement != "none" and axis == "sequence":
            problems.append(
                "task.kind=char-lm cannot use bn.axis=sequence: next-symbol "
                "prediction has no access to future frames")
        if bidirectional:
            problems.append(
                "model.bidirectional with task.kind=char-lm leaks future "
                "symbols into next-symbol prediction")
        if kind == "char-lm" and not spec.get("task", "corpus"):
            problems.append("task.corpus is required for char-lm")
    if placement == "preact" and axis == "sequence":
        problems.append(
            "bn.placement=preact requires bn.axis=frame (step statistics "
            "depend on the previous hidden state)")
    cell = spec.get("model", "cell", "lstm")
    if cell not in ("rnn", "lstm"):
        problems.append("model.cell must be rnn or lstm")
    try:
        _parse_schedule(spec.get("train", "schedule", "constant"))
    except (ValueError, IndexError):
        problems.append("train.schedule must be constant, halve_after:K, "
                        "or divide_by:F:K")
    init = spec.get("model", "init", "glorot")
    if init.split(":")[0] not in ("glorot", "uniform", "gaussian"):
        problems.append("model.init must be glorot, uniform:R, or gaussian:S")
    for section, key, cast, check, what in [
            ("model", "layers", int, lambda v: v >= 1, ">= 1"),
            ("model", "hidden", int, lambda v: v >= 1, ">= 1"),
            ("bn", "eps", float, lambda v: v > 0, "> 0"),
            ("bn", "momentum", float, lambda v: 0 < v < 1, "in (0, 1)"),
            ("train", "lr", float, lambda v: v > 0, "> 0"),
            ("train", "momentum", float, lambda v: 0 <= v < 1, "in [0, 1)"),
            ("train", "batch_size", int, lambda v: v >= 1, ">= 1"),
            ("train", "epochs", int, lambda v: v >= 1, ">= 1"),
            ("train", "dropout", float, lambda v: 0 <= v < 1, "in [0, 1)")]:
        raw = spec.get(section, key)
        if raw is None:
            continue
        try:
            if not check(cast(raw)):
                problems.append(f"{section}.{key} must be {what}")
        except ValueError:
            problems.append(f"{section}.{key} must be a {cast.__name__}")
    if problems:
        raise SpecValidationError(problems)
    return spec


def build_train_config(spec, seed_override=None):
    t = spec.train
    clip = t.get("grad_clip")
    return TrainConfig(
        learning_rate=float(t.get("lr", 1e-2)),
        momentum=float(t.get("momentum", 0.0)),
        batch_size=int(t.get("batch_size", 32)),
        bptt_window=int(t.get("bptt_window", 20)),
        grad_norm_threshold=None if clip in (None, "", "none") else float(clip),
        schedule=_parse_schedule(t.get("schedule", "constant")),
        epochs=int(t.get("epochs", 5)),
        seed=int(seed_override if seed_override is not None
                 else t.get("seed", 0)),
        dropout_p=float(t.get("dropout", 0.0)),
        max_length=(int(t["max_length"]) if t.get("max_length") else None),
    ).validate()


def load_dataset(spec):
    kind = spec.task["kind"]
    if kind == "char-lm":
        return load_char_corpus(
            spec.task["corpus"],
            float(spec.task.get("train_fraction", 0.9)))
    return make_alignment_data(
        seed=int(spec.task.get("data_seed", 0)),
        num_sequences=int(spec.task.get("sequences", 2000)),
        num_features=int(spec.task.get("features", 8)),
        num_classes=int(spec.task.get("classes", 4)),
        length_range=(int(spec.task.get("min_length", 8)),
                      int(spec.task.get("max_length", 16))),
        valid_fraction=float(spec.task.get("valid_fraction", 0.2)),
        switch_prob=float(spec.task.get("switch_prob", 0.1)),
        scale_spread=float(spec.task.get("scale_spread", 1.0)))


def build_model(spec, dataset, hidden=None):
    kind = spec.task["kind"]
    config = {
        "cell": spec.model.get("cell", "lstm"),
        "layers": int(spec.model.get("layers", 1)),
        "hidden": int(hidden if hidden is not None
                      else spec.model.get("hidden", 64)),
        "bidirectional": _bool(spec.model.get("bidirectional", "false")),
        "placement": spec.bn.get("placement", "none"),
        "axis": spec.bn.get("axis", "frame"),
        "eps": float(spec.bn.get("eps", 1e-5)),
        "bn_momentum": float(spec.bn.get("momentum", 0.9)),
        "dropout": float(spec.train.get("dropout", 0.0)),
        "activation": spec.model.get("activation", "tanh"),
    }
    if kind == "char-lm":
        config["vocab_size"] = dataset.vocab.size
        config["num_classes"] = dataset.vocab.size
        config["embedding_dim"] = int(spec.model.get(
            "embedding", spec.model.get("hidden", 64)))
    else:
        config["input_dim"] = dataset.num_features
        config["num_classes"] = dataset.num_classes
    return build_stack(config)


def init_from_spec(stack, spec, seed):
    init = spec.model.get("init", "glorot")
    parts = init.split(":")
    scale = float(parts[1]) if len(parts) > 1 else None
    init_parameters(stack, parts[0], seed=seed, scale=scale)
    return stack


def cmd_train(args):
    spec = validate_spec(parse_spec(args.spec, args.set or ()))
    config = build_train_config(spec, args.seed)
    dataset = load_dataset(spec)
    stack = init_from_spec(build_model(spec, dataset), spec, config.seed)
    os.makedirs(args.out, exist_ok=True)
    record = train(stack, dataset, config, log=print)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), record.rows)
    if record.best_state is not None:
        restore_snapshot(stack, record.best_state)
        save_checkpoint(stack, os.path.join(args.out, "best.ckpt"),
                        epoch=record.best_epoch,
                        valid_metric=record.best_valid_fce)
    print(f"status: {record.status}")
    return 0 if record.status == "completed" else 1


def _eval_batches(spec, dataset, batch_size):
    if dataset.kind == "char-lm":
        window = int(spec.train.get("bptt_window", 20))
        return make_lm_batches(dataset.valid, batch_size, window)
    batches, _ = make_padded_batches(dataset.valid, batch_size)
    return batches


def cmd_eval(args):
    stack, meta = load_checkpoint(args.checkpoint)
    spec = validate_spec(parse_spec(args.spec, args.set or ()))
    dataset = load_dataset(spec)
    batches = _eval_batches(spec, dataset, args.batch_size)
    fce, fer = evaluate(stack, batches, mode="infer",
                        carry_state=dataset.kind == "char-lm")
    from .metrics import MetricsRow, perplexity
    row = MetricsRow(meta.get("epoch", 0), "eval", fce, perplexity(fce),
                     fer, 0.0, 0.0)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_metrics_csv(os.path.join(args.out, "eval.csv"), [row])
    print(f"eval fce {fce!r} ppl {perplexity(fce)!r} fer {fer!r}")
    return 0


def cmd_sweep(args):
    spec = validate_spec(parse_spec(args.spec, args.set or ()))
    base = build_train_config(spec, args.seed)
    dataset = load_dataset(spec)
    space = SearchSpace(
        lr_range=(args.lr_min, args.lr_max),
        momentum_choices=tuple(args.momenta),
        batch_choices=tuple(args.batches),
        trials=args.trials)
    counter = {"n": 0}

    def factory():
        stack = build_model(spec, dataset)
        init_from_spec(stack, spec, base.seed + counter["n"])
        counter["n"] += 1
        return stack

    results = random_search(factory, dataset, space, base,
                            seed=base.seed, log=print)
    ranked = sorted(results, key=lambda r: (r.best_valid_fce, r.trial))
    os.makedirs(args.out, exist_ok=True)
    import csv
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "lr", "momentum", "batch_size", "status",
                         "best_train_fce", "best_valid_fce"])
        for r in ranked:
            writer.writerow([r.trial, repr(r.learning_rate), r.momentum,
                             r.batch_size, r.status, repr(r.best_train_fce),
                             repr(r.best_valid_fce)])
    return 0


def _gradcheck_model(spec, placement, axis, hidden, corrupt=False):
    config = {
        "cell": spec.model.get("cell", "lstm"),
        "layers": min(2, int(spec.model.get("layers", 1))),
        "hidden": hidden,
        "bidirectional": _bool(spec.model.get("bidirectional", "false")),
        "placement": placement.value,
        "axis": axis.value,
        "input_dim": 3,
        "num_classes": 4,
    }
    stack = build_stack(config)
    init_parameters(stack, "gaussian", seed=1, scale=0.4)
    return stack


def _gradcheck_batch(t_len, m):
    rng = np.random.default_rng(3)
    lengths = np.array([t_len] + list(rng.integers(1, t_len + 1, m - 1)))
    mask = (np.arange(t_len)[:, None] < lengths[None, :]).astype(np.float64)
    x = rng.standard_normal((t_len, m, 3)) * mask[:, :, None]
    y = rng.integers(0, 4, (t_len, m))
    return SequenceBatch(x, y, mask, lengths)


def cmd_gradcheck(args):
    spec = validate_spec(parse_spec(args.spec, args.set or ()))
    hidden = min(16, int(spec.model.get("hidden", 16)))
    t_len, m = min(8, 4), 3
    batch = _gradcheck_batch(t_len, m)
    combos = [(Placement.NONE, NormAxis.FRAME_WISE),
              (Placement.INPUT_TO_HIDDEN, NormAxis.FRAME_WISE),
              (Placement.INPUT_TO_HIDDEN, NormAxis.SEQUENCE_WISE),
              (Placement.PRE_ACTIVATION, NormAxis.FRAME_WISE)]
    if spec.task.get("kind") == "char-lm":
        combos = [c for c in combos if c[1] is not NormAxis.SEQUENCE_WISE]
    ok = True
    if args.corrupt_backward:
        original = Tensor.tanh

        def broken_tanh(self):
            return self._unary(np.tanh, lambda y, x: 1.0 - 0.9 * y * y)

        Tensor.tanh = broken_tanh
    try:
        for placement, axis in combos:
            stack = _gradcheck_model(spec, placement, axis, hidden)
            report = autodiff.check_gradients(
                stack, batch, step=1e-5, tolerance=args.tolerance)
            status = "pass" if report.passed else "FAIL"
            print(f"{placement.value}/{axis.value}: {status} "
                  f"(max rel err {report.max_relative_error:.2e})")
            for f in report.failures:
                print(f"  {f}")
            ok = ok and report.passed
    finally:
        if args.corrupt_backward:
            Tensor.tanh = original
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bnrnn",
        description="Train and evaluate batch-normalized recurrent networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("spec", help="spec file path or preset:<name>")
        p.add_argument("--set", action="append", metavar="section.key=value")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="runs/out")

    p_train = sub.add_parser("train", help="run a training spec")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("spec", help="spec file providing the dataset")
    p_eval.add_argument("--set", action="append", metavar="section.key=value")
    p_eval.add_argument("--batch-size", type=int, default=32)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="random hyperparameter search")
    common(p_sweep)
    p_sweep.add_argument("--trials", type=int, default=10)
    p_sweep.add_argument("--lr-min", type=float, default=1e-4)
    p_sweep.add_argument("--lr-max", type=float, default=1.0)
    p_sweep.add_argument("--momenta", type=float, nargs="+",
                         default=[0.5, 0.8, 0.9, 0.95, 0.995])
    p_sweep.add_argument("--batches", type=int, nargs="+",
                         default=[32, 64, 128])
    p_sweep.set_defaults(func=cmd_sweep)

    p_gc = sub.add_parser("gradcheck",
                          help="finite-difference check of all BN variants")
    p_gc.add_argument("spec")
    p_gc.add_argument("--set", action="append", metavar="section.key=value")
    p_gc.add_argument("--tolerance", type=float, default=1e-5)
    p_gc.add_argument("--corrupt-backward", action="store_true",
                      help="deliberately break a backward rule (sanity check)")
    p_gc.set_defaults(func=cmd_gradcheck)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecValidationError as exc:
        print("invalid spec:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return 2
    except BnrnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
