import numpy as np
import numpy.testing as npt
import pytest

from bnrnn.autodiff import Parameter
from bnrnn.data import char_corpus_from_text, make_alignment_data
from bnrnn.errors import ConfigurationError
from bnrnn.recurrent import build_stack, init_parameters
from bnrnn.training import (LrSchedule, SearchSpace, TrainConfig, evaluate,
                            lr_at, random_search, rescale_gradients,
                            sgd_momentum_step, train)


class TestLrSchedules:
    def test_constant(self):
        assert lr_at(LrSchedule("constant"), 17, 0.3) == 0.3

    def test_halve_after_boundary(self):
        sched = LrSchedule("halve_after", after_epoch=6)
        assert lr_at(sched, 6, 1.0) == 1.0

    def test_halve_after_decay(self):
        sched = LrSchedule("halve_after", after_epoch=6)
        assert lr_at(sched, 8, 1.0) == 0.25

    def test_divide_by(self):
        sched = LrSchedule("divide_by", factor=1.2, after_epoch=6)
        assert abs(lr_at(sched, 7, 1.0) - 1.0 / 1.2) < 1e-15

    def test_one_based_epochs(self):
        with pytest.raises(ValueError):
            lr_at(LrSchedule("constant"), 0, 1.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            LrSchedule("cosine").validate()


class TestSgdMomentum:
    def _param(self, value, grad):
        p = Parameter("w", np.array(value))
        p.grad = np.array(grad)
        return p

    def test_zero_momentum_is_sgd(self):
        p = self._param([1.0], [2.0])
        sgd_momentum_step([p], {}, lr=0.1, momentum=0.0)
        npt.assert_allclose(p.data, [0.8], atol=1e-15)

    def test_hand_iterated_two_steps(self):
        # theta=0, g=1, lr=0.1, mu=0.9: v1=-0.1, v2=-0.19, theta2=-0.29
        p = self._param([0.0], [1.0])
        velocity = {}
        sgd_momentum_step([p], velocity, lr=0.1, momentum=0.9)
        p.grad = np.array([1.0])
        sgd_momentum_step([p], velocity, lr=0.1, momentum=0.9)
        npt.assert_allclose(p.data, [-0.29], atol=1e-15)

    def test_zero_gradient_zero_velocity_fixed_point(self):
        p = self._param([3.0], [0.0])
        sgd_momentum_step([p], {}, lr=0.1, momentum=0.9)
        npt.assert_array_equal(p.data, [3.0])

    def test_nonfinite_gradient_names_parameter(self):
        p = self._param([0.0], [np.nan])
        with pytest.raises(FloatingPointError) as exc:
            sgd_momentum_step([p], {}, lr=0.1, momentum=0.0)
        assert "w" in str(exc.value)

    def test_zero_lr_changes_nothing(self):
        rng = np.random.default_rng(0)
        p = self._param(rng.standard_normal(5), rng.standard_normal(5))
        before = p.data.copy()
        sgd_momentum_step([p], {}, lr=0.0, momentum=0.9)
        npt.assert_array_equal(p.data, before)


class TestRescaleGradients:
    def _params(self, grads):
        out = []
        for i, g in enumerate(grads):
            p = Parameter(f"p{i}", np.zeros_like(np.asarray(g, dtype=float)))
            p.grad = np.asarray(g, dtype=float)
            out.append(p)
        return out

    def test_above_threshold_halved(self):
        params = self._params([[12.0], [16.0]])  # norm 20
        norm = rescale_gradients(params, 10.0)
        assert norm == 20.0
        npt.assert_allclose(params[0].grad, [6.0], atol=1e-12)
        npt.assert_allclose(params[1].grad, [8.0], atol=1e-12)

    def test_below_threshold_untouched(self):
        params = self._params([[3.0], [4.0]])  # norm 5
        g0 = params[0].grad.copy()
        rescale_gradients(params, 10.0)
        npt.assert_array_equal(params[0].grad, g0)

    def test_zero_gradients(self):
        params = self._params([[0.0, 0.0]])
        assert rescale_gradients(params, 10.0) == 0.0
        npt.assert_array_equal(params[0].grad, [0.0, 0.0])

    def test_idempotent(self):
        params = self._params([[30.0], [40.0]])
        rescale_gradients(params, 10.0)
        once = [p.grad.copy() for p in params]
        rescale_gradients(params, 10.0)
        for p, g in zip(params, once):
            npt.assert_allclose(p.grad, g, rtol=1e-12)

    def test_none_threshold_disables(self):
        params = self._params([[100.0]])
        rescale_gradients(params, None)
        npt.assert_array_equal(params[0].grad, [100.0])


class TestTrainConfig:
    def test_valid_defaults(self):
        TrainConfig().validate()

    def test_all_problems_listed(self):
        config = TrainConfig(learning_rate=-1.0, momentum=1.5, batch_size=0)
        with pytest.raises(ConfigurationError) as exc:
            config.validate()
        message = str(exc.value)
        assert "learning_rate" in message
        assert "momentum" in message
        assert "batch_size" in message


def _toy_alignment(seed=0, n=24):
    return make_alignment_data(seed, n, num_features=3, num_classes=3,
                               length_range=(4, 7))


def _toy_stack(seed=0, **overrides):
    config = dict(cell="rnn", layers=1, hidden=8, input_dim=3, num_classes=3)
    config.update(overrides)
    stack = build_stack(config)
    return init_parameters(stack, "glorot", seed=seed)


class TestTrainLoop:
    def test_one_epoch_bookkeeping(self):
        record = train(_toy_stack(), _toy_alignment(),
                       TrainConfig(epochs=1, batch_size=8,
                                   learning_rate=0.05))
        assert record.status == "completed"
        assert len(record.split_rows("train")) == 1
        assert len(record.split_rows("valid")) == 1
        assert record.best_epoch == 1

    def test_determinism_bit_exact(self):
        config = TrainConfig(epochs=3, batch_size=8, learning_rate=0.05,
                             momentum=0.5, seed=4)
        rec_a = train(_toy_stack(seed=4), _toy_alignment(), config)
        rec_b = train(_toy_stack(seed=4), _toy_alignment(), config)
        assert [r.as_list() for r in rec_a.rows] == \
            [r.as_list() for r in rec_b.rows]

    def test_validation_never_updates_bn_stats(self):
        stack = _toy_stack(seed=1, placement="input", axis="sequence")
        dataset = _toy_alignment(seed=1)
        train(stack, dataset, TrainConfig(epochs=1, batch_size=8,
                                          learning_rate=0.05))
        counts = [layer.store.update_count for layer in stack.bn_layers()]
        from bnrnn.data import make_padded_batches
        batches, _ = make_padded_batches(dataset.valid, 8)
        evaluate(stack, batches)
        assert [layer.store.update_count
                for layer in stack.bn_layers()] == counts

    def test_memorizes_single_batch(self):
        # overfit check: repeated identical batch drives train FCE near zero
        from bnrnn.autodiff import softmax_cross_entropy
        from bnrnn.training import sgd_momentum_step
        from bnrnn.data import make_padded_batches
        stack = _toy_stack(seed=2, cell="lstm", layers=2, hidden=32)
        data = _toy_alignment(seed=2, n=10)
        batch = make_padded_batches(data.train[:4], 4)[0][0]
        velocity = {}
        losses = []
        for step in range(500):
            stack.zero_grad()
            loss = stack.loss(batch, mode="train", update_stats=True)
            losses.append(float(loss.data))
            if losses[-1] < 0.01:
                break
            loss.backward()
            rescale_gradients(stack.parameters(), 10.0)
            sgd_momentum_step(stack.parameters(), velocity, 0.1, 0.9)
        assert min(losses) < 0.01

    def test_huge_lr_diverges(self):
        record = train(_toy_stack(seed=3), _toy_alignment(seed=3),
                       TrainConfig(epochs=10, batch_size=8,
                                   learning_rate=10.0,
                                   grad_norm_threshold=None))
        assert record.status == "diverged"

    def test_lm_mode_runs_and_carries_state(self):
        data = char_corpus_from_text("the quick brown fox jumps " * 40,
                                     train_fraction=0.8)
        stack = build_stack(dict(cell="rnn", layers=1, hidden=8,
                                 vocab_size=data.vocab.size,
                                 embedding_dim=8,
                                 num_classes=data.vocab.size))
        init_parameters(stack, "glorot", seed=5)
        record = train(stack, data, TrainConfig(epochs=2, batch_size=4,
                                                bptt_window=10,
                                                learning_rate=0.1))
        assert record.status == "completed"
        assert len(record.rows) == 4


class TestRandomSearch:
    def test_sample_ranges(self):
        space = SearchSpace(trials=200)
        rng = np.random.default_rng(0)
        for _ in range(200):
            lr, momentum, batch = space.sample(rng)
            assert 1e-4 <= lr <= 1.0
            assert momentum in space.momentum_choices
            assert batch in space.batch_choices

    def test_same_seed_same_samples(self):
        space = SearchSpace(trials=5)
        a = [space.sample(np.random.default_rng(3)) for _ in range(5)]
        b = [space.sample(np.random.default_rng(3)) for _ in range(5)]
        assert a == b

    def test_invalid_space(self):
        with pytest.raises(ConfigurationError):
            SearchSpace(trials=0).validate()
        with pytest.raises(ConfigurationError):
            SearchSpace(lr_range=(0.0, 1.0)).validate()

    def test_sweep_records_every_trial(self):
        space = SearchSpace(lr_range=(1e-3, 0.3), batch_choices=(8,),
                            momentum_choices=(0.0, 0.5), trials=2)
        dataset = _toy_alignment(seed=6)
        base = TrainConfig(epochs=1, batch_size=8, seed=6)
        counter = {"n": 0}

        def factory():
            counter["n"] += 1
            return _toy_stack(seed=counter["n"])

        results = random_search(factory, dataset, space, base, seed=6)
        assert len(results) == 2
        assert [r.trial for r in results] == [0, 1]
        assert all(r.status in ("completed", "diverged") for r in results)
