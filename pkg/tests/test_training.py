"""Hinge loss, lr rule, backprop gradients, and the per-task training loops."""

import numpy as np
import pytest

from ffnb.classifiers import ClassifierBank, LinearHead
from ffnb.network import FfnbNetwork, PPolicy, forward, forward_cached, project_gradient
from ffnb.stream import synth_gaussian_stream
from ffnb.training import (
    Accumulators,
    TrainConfig,
    backward,
    hinge_loss,
    lr_step,
    train_task_ffnb,
    train_task_naive,
)


def small_config(**kw):
    base = dict(
        epochs=3,
        batch_size=16,
        lr0=0.01,
        band_size=2,
        n_feature_layers=3,
        activation="tanh",
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def fresh_ffnb(stream, config):
    net = FfnbNetwork.create(stream.d0, config.n_feature_layers, config.activation)
    bank = ClassifierBank(epsilon=config.epsilon, heteroscedastic=True)
    acc = Accumulators.create(stream.d0, config.n_feature_layers, config.band_size, config.gamma)
    return net, bank, acc


class TestHingeLoss:
    def test_satisfied_margins_zero(self):
        scores = np.array([[2.0, -1.5], [-1.5, 2.0]])
        loss, grad = hinge_loss(scores, np.array([0, 1]))
        assert loss == 0.0
        assert not grad.any()

    def test_exact_margin_is_flat(self):
        scores = np.array([[1.0], [-1.0]])
        loss, grad = hinge_loss(scores, np.array([0]))
        assert loss == 0.0
        assert not grad.any()

    def test_known_value(self):
        # one sample, true class 0: terms max(0, 1-0.5) + max(0, 1-(-(-0.25)))
        scores = np.array([[0.5], [-0.25]])
        loss, _ = hinge_loss(scores, np.array([0]))
        assert loss == pytest.approx(0.5 + 0.75)

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal((4, 7)) * 2
        labels = rng.integers(0, 4, 7)
        _, grad = hinge_loss(scores, labels)
        h = 1e-7
        for _ in range(20):
            i, j = rng.integers(0, 4), rng.integers(0, 7)
            up, down = scores.copy(), scores.copy()
            up[i, j] += h
            down[i, j] -= h
            num = (hinge_loss(up, labels)[0] - hinge_loss(down, labels)[0]) / (2 * h)
            assert grad[i, j] == pytest.approx(num, abs=1e-6)


class TestLrStep:
    def test_rising_speed_decays(self):
        assert lr_step(0.1, [0.0, 0.5, 1.5], 0.99) == pytest.approx(0.1 * 0.99)

    def test_falling_speed_grows(self):
        assert lr_step(0.1, [0.0, 1.0, 1.5], 0.99) == pytest.approx(0.1 / 0.99)

    def test_constant_loss_grows(self):
        assert lr_step(0.1, [2.0, 2.0, 2.0], 0.99) == pytest.approx(0.1 / 0.99)

    def test_short_history_keeps(self):
        assert lr_step(0.1, [1.0], 0.99) == 0.1
        assert lr_step(0.1, [], 0.99) == 0.1

    def test_two_entries_compare_against_zero_speed(self):
        assert lr_step(0.1, [1.0, 0.4], 0.99) == pytest.approx(0.1 * 0.99)
        assert lr_step(0.1, [1.0, 1.0], 0.99) == pytest.approx(0.1 / 0.99)


def loss_at(net, classifier, x, rows, task):
    acts, pre = forward_cached(net, x)
    scores = classifier.score_matrix(acts[-1])
    loss, dscores = hinge_loss(scores, rows)
    return loss, acts, pre, dscores


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_projected_alpha_gradients_match_finite_differences(self, seed):
        """Central differences on every alpha entry of a 3-layer net."""
        rng = np.random.default_rng(seed)
        stream = synth_gaussian_stream(2, 2, 6, 12, 4.0, seed=seed)
        config = small_config(epochs=1, activation="tanh")
        net, bank, acc = fresh_ffnb(stream, config)
        train_task_ffnb(net, bank, stream.tasks[0], config, acc)
        train_task_ffnb(net, bank, stream.tasks[1], config, acc)

        task = stream.tasks[1]
        x = task.train_matrix()[:, :8]
        rows = np.array(
            [list(bank.class_order).index(c) for c in task.train_labels()[:8]]
        )
        loss, acts, pre, dscores = loss_at(net, bank, x, rows, task.id)
        band_grads, _ = backward(net, bank, acts, pre, dscores, task.id)

        h = 1e-6
        for i, layer in enumerate(net.feature_layers):
            band = layer.bands[-1]
            galpha = project_gradient(band_grads[i], band.basis)
            band.frozen = False
            flat = band.alpha
            for r in range(flat.shape[0]):
                for c in range(flat.shape[1]):
                    keep = flat[r, c]
                    flat[r, c] = keep + h
                    up = loss_at(net, bank, x, rows, task.id)[0]
                    flat[r, c] = keep - h
                    down = loss_at(net, bank, x, rows, task.id)[0]
                    flat[r, c] = keep
                    num = (up - down) / (2 * h)
                    denom = max(abs(num), abs(galpha[r, c]), 1e-4)
                    assert abs(galpha[r, c] - num) / denom < 1e-4

    def test_head_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        stream = synth_gaussian_stream(1, 3, 5, 10, 4.0, seed=3)
        config = small_config(epochs=1, head_mode="one_vs_all")
        net = FfnbNetwork.create(5, 3, "tanh")
        head = LinearHead.empty(0)
        acc = Accumulators.create(5, 3, 2, 1e-2)
        train_task_ffnb(net, head, stream.tasks[0], config, acc)

        task = stream.tasks[0]
        x = task.train_matrix()[:, :6]
        rows = np.array([list(head.class_order).index(c) for c in task.train_labels()[:6]])
        loss, acts, pre, dscores = loss_at(net, head, x, rows, 0)
        _, head_grad = backward(net, head, acts, pre, dscores, 0)

        h = 1e-6
        for _ in range(25):
            r = rng.integers(0, head.weights.shape[0])
            c = rng.integers(0, head.weights.shape[1])
            keep = head.weights[r, c]
            head.weights[r, c] = keep + h
            up = loss_at(net, head, x, rows, 0)[0]
            head.weights[r, c] = keep - h
            down = loss_at(net, head, x, rows, 0)[0]
            head.weights[r, c] = keep
            num = (up - down) / (2 * h)
            assert head_grad[r, c] == pytest.approx(num, abs=2e-5)


class TestTrainTask:
    def test_single_task_matches_naive_loop_exactly(self):
        """With projection off, random init, and a linear head, the two loops
        are the same algorithm and must produce bit-identical parameters."""
        stream = synth_gaussian_stream(1, 2, 6, 20, 4.0, seed=1)
        config = small_config(
            epochs=4, init_mode="rand", null_space=False, head_mode="one_vs_all"
        )
        task = stream.tasks[0]

        net_a = FfnbNetwork.create(6, 3, config.activation)
        head_a = LinearHead.empty(0)
        acc = Accumulators.create(6, 3, config.band_size, config.gamma)
        res_a = train_task_ffnb(net_a, head_a, task, config, acc)

        net_b = FfnbNetwork.create(6, 3, config.activation)
        head_b = LinearHead.empty(0)
        res_b = train_task_naive(net_b, head_b, task, config)

        for la, lb in zip(net_a.feature_layers, net_b.feature_layers):
            assert np.array_equal(la.bands[0].alpha, lb.bands[0].alpha)
        assert np.array_equal(head_a.weights, head_b.weights)
        assert [t.loss for t in res_a.traces] == [t.loss for t in res_b.traces]

    def test_previous_bands_and_stats_frozen_bytewise(self):
        stream = synth_gaussian_stream(3, 1, 8, 15, 5.0, seed=2)
        config = small_config(epochs=2, activation="relu")
        net, bank, acc = fresh_ffnb(stream, config)
        train_task_ffnb(net, bank, stream.tasks[0], config, acc)

        old_alphas = [layer.bands[0].alpha.tobytes() for layer in net.feature_layers]
        d_old = {c: bank.stats[c].dim for c in bank.class_order}
        old_stats = {
            c: (bank.stats[c].sum_x.tobytes(), bank.stats[c].sum_outer.tobytes())
            for c in bank.class_order
        }
        old_pairs = {k: h.w.tobytes() for k, h in bank.pairs.items()}

        train_task_ffnb(net, bank, stream.tasks[1], config, acc)
        train_task_ffnb(net, bank, stream.tasks[2], config, acc)

        for layer, frozen in zip(net.feature_layers, old_alphas):
            assert layer.bands[0].alpha.tobytes() == frozen
        # stats grow with the network; the pre-existing coordinates must be
        # byte-identical and every appended coordinate exactly zero
        for c, (sx, so) in old_stats.items():
            d = d_old[c]
            st = bank.stats[c]
            assert st.sum_x[:d].tobytes() == sx
            assert st.sum_outer[:d, :d].tobytes() == so
            assert not st.sum_x[d:].any()
            assert not st.sum_outer[d:, :].any() and not st.sum_outer[:, d:].any()
        for k, w in old_pairs.items():
            assert bank.pairs[k].w.tobytes() == w

    def test_moment_accumulators_updated_once_per_task(self):
        stream = synth_gaussian_stream(2, 1, 5, 10, 4.0, seed=4)
        config = small_config(epochs=3)
        net, bank, acc = fresh_ffnb(stream, config)
        n0 = len(stream.tasks[0].train)
        train_task_ffnb(net, bank, stream.tasks[0], config, acc)
        assert all(m.count == n0 for m in acc.moments)
        train_task_ffnb(net, bank, stream.tasks[1], config, acc)
        n1 = len(stream.tasks[1].train)
        assert all(m.count == n0 + n1 for m in acc.moments)

    def test_zero_epochs_leaves_closed_form_state(self):
        # the ridge target is a task indicator, so with one class per task
        # the closed-form init alone should already separate the tasks
        stream = synth_gaussian_stream(3, 1, 6, 30, 6.0, seed=5)
        config = small_config(epochs=0)
        net, bank, acc = fresh_ffnb(stream, config)
        for task in stream.tasks:
            result = train_task_ffnb(net, bank, task, config, acc)
            assert result.traces == []
        assert all(band.frozen for layer in net.feature_layers for band in layer.bands)
        correct = total = 0
        for task in stream.tasks:
            x = np.column_stack([s.features for s in task.test])
            preds = bank.predict(forward(net, x)[-1])
            labels = np.array([s.label for s in task.test])
            correct += int(np.sum(preds == labels))
            total += labels.size
        assert correct / total > 0.9

    def test_weight_decay_shrinks_alpha(self):
        stream = synth_gaussian_stream(1, 2, 6, 30, 5.0, seed=6)
        task = stream.tasks[0]
        norms = {}
        for wd in (0.0, 0.5):
            config = small_config(epochs=10, weight_decay=wd, init_mode="rand")
            net, bank, acc = fresh_ffnb(stream, config)
            train_task_ffnb(net, bank, task, config, acc)
            norms[wd] = sum(
                float(np.linalg.norm(layer.bands[0].alpha)) for layer in net.feature_layers
            )
        assert norms[0.5] < norms[0.0]

    def test_rng_isolation_between_tasks(self):
        """Task t's draws depend on (seed, t), not on how many tasks ran before."""
        stream = synth_gaussian_stream(2, 1, 5, 10, 4.0, seed=7)
        config = small_config(epochs=2, init_mode="rand", null_space=False, head_mode="one_vs_all")

        net_a = FfnbNetwork.create(5, 3, config.activation)
        head_a = LinearHead.empty(0)
        train_task_naive(net_a, head_a, stream.tasks[0], config)
        train_task_naive(net_a, head_a, stream.tasks[1], config)

        net_b = FfnbNetwork.create(5, 3, config.activation)
        head_b = LinearHead.empty(0)
        train_task_naive(net_b, head_b, stream.tasks[0], config)
        # second run of task 1 on a clone must match the first run's task 1
        net_c = FfnbNetwork.create(5, 3, config.activation)
        head_c = LinearHead.empty(0)
        train_task_naive(net_c, head_c, stream.tasks[0], config)
        assert np.array_equal(
            net_b.feature_layers[0].bands[0].alpha, net_c.feature_layers[0].bands[0].alpha
        )
        train_task_naive(net_b, head_b, stream.tasks[1], config)
        for la, lb in zip(net_a.feature_layers, net_b.feature_layers):
            assert np.array_equal(la.bands[1].alpha, lb.bands[1].alpha)


class TestTraces:
    def test_epoch_traces_record_loss_lr_and_norms(self):
        stream = synth_gaussian_stream(1, 2, 6, 20, 4.0, seed=8)
        config = small_config(epochs=5)
        net, bank, acc = fresh_ffnb(stream, config)
        result = train_task_ffnb(net, bank, stream.tasks[0], config, acc)
        assert len(result.traces) == 5
        for i, tr in enumerate(result.traces):
            assert tr.epoch == i
            assert tr.loss >= 0.0
            assert tr.lr > 0.0
            assert len(tr.alpha_norms) == 3
