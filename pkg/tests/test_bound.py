"""Drift bound: probe capture, norm tracking, the closed-form series, and the
empirical guarantee that measured feature drift stays below it."""

import numpy as np
import pytest

from ffnb.bound import (
    BoundTracker,
    ProbeSet,
    bound,
    bound_series,
    measured_drift,
    old_coordinate_drift,
)
from ffnb.classifiers import ClassifierBank
from ffnb.errors import FfnbError
from ffnb.network import FfnbNetwork, PPolicy, forward
from ffnb.stream import Sample, Task, TaskStream, synth_gaussian_stream
from ffnb.training import Accumulators, TrainConfig, train_task_ffnb


def low_rank_stream(n_tasks, d0, rank, n_per_task, seed):
    """Tasks whose features all live in one fixed rank-dim subspace of R^d0."""
    rng = np.random.default_rng(seed)
    embed = np.linalg.qr(rng.standard_normal((d0, rank)))[0]
    tasks = []
    for t in range(n_tasks):
        center = rng.standard_normal(rank) * 4.0
        z = center[:, None] + 0.3 * rng.standard_normal((rank, n_per_task))
        x = embed @ z
        samples = tuple(Sample(x[:, i].copy(), t) for i in range(n_per_task))
        cut = (4 * n_per_task) // 5
        tasks.append(Task(id=t, classes=(t,), train=samples[:cut], test=samples[cut:]))
    return TaskStream(d0=d0, tasks=tuple(tasks))


def eq3_reference(alpha2, beta2, w2, n_layers):
    """Straight-line evaluation of the per-layer drift bound.

    B_ell = sum_{tau=1..eta} sum_{k=0..ell-1}
            (a2[tau][ell-k] b2[tau][ell-k] + a2[tau-1][ell-k] b2[tau-1][ell-k])
            * prod_{k'=0..k-1} w2[tau][ell-k']
    with layers 1-indexed in the formula, 0-indexed in the lists.
    """
    eta = len(alpha2) - 1
    out = []
    for ell in range(1, n_layers + 1):
        total = 0.0
        for tau in range(1, eta + 1):
            for k in range(ell):
                j = ell - k - 1
                term = (
                    alpha2[tau][j] * beta2[tau][j]
                    + alpha2[tau - 1][j] * beta2[tau - 1][j]
                )
                prod = 1.0
                for kp in range(k):
                    prod *= w2[tau][ell - kp - 1]
                total += term * prod
        out.append(total)
    return out


def run_stream(n_tasks, activation, p_policy, epochs=4, seed=3, d0=10, sep=5.0, stream=None):
    if stream is None:
        stream = synth_gaussian_stream(n_tasks, 1, d0, 24, sep, seed=seed)
    config = TrainConfig(
        epochs=epochs,
        batch_size=12,
        lr0=0.02,
        band_size=2,
        n_feature_layers=3,
        activation=activation,
        p_policy=p_policy,
        record_per_iteration=True,
        seed=seed,
    )
    net = FfnbNetwork.create(stream.d0, config.n_feature_layers, config.activation)
    bank = ClassifierBank(epsilon=config.epsilon, heteroscedastic=True)
    acc = Accumulators.create(
        stream.d0, config.n_feature_layers, config.band_size, config.gamma
    )
    results = []
    probes = {}
    for task in stream.tasks:
        res = train_task_ffnb(
            net, bank, task, config, acc, probe_features=probes or None
        )
        results.append(res)
        probes[task.id] = task.train_matrix()[:, :16]
    return net, results


class TestProbeSet:
    def test_capture_pools_tasks_in_id_order(self):
        net = FfnbNetwork.create(4, 2, "tanh")
        rng = np.random.default_rng(0)
        f0 = rng.standard_normal((4, 3))
        f1 = rng.standard_normal((4, 5))
        probe = ProbeSet.capture(net, {1: f1, 0: f0})
        assert probe.n_samples == 8
        np.testing.assert_array_equal(probe.features[:, :3], f0)
        np.testing.assert_array_equal(probe.features[:, 3:], f1)
        np.testing.assert_array_equal(probe.task_ids, [0, 0, 0, 1, 1, 1, 1, 1])

    def test_capture_freezes_baseline_activations(self):
        net = FfnbNetwork.create(4, 3, "relu")
        x = np.random.default_rng(1).standard_normal((4, 6))
        probe = ProbeSet.capture(net, {0: x})
        assert len(probe.baseline) == 4  # input plus one map per layer
        for got, want in zip(probe.baseline, forward(net, x)):
            np.testing.assert_array_equal(got, want)

    def test_capture_rejects_empty(self):
        net = FfnbNetwork.create(4, 2, "tanh")
        with pytest.raises(FfnbError):
            ProbeSet.capture(net, {})


class TestBoundFormula:
    def test_matches_straight_line_reference(self):
        rng = np.random.default_rng(7)
        n_layers, eta = 4, 6
        tracker = BoundTracker(task=1, n_layers=n_layers)
        w2 = list(rng.uniform(0.5, 3.0, n_layers))
        for _ in range(eta + 1):
            tracker.alpha2.append(list(rng.uniform(0.1, 2.0, n_layers)))
            tracker.beta2.append(list(rng.uniform(0.0, 1.5, n_layers)))
            tracker.w_frozen2.append(list(w2))
            tracker.drift2.append([0.0] * n_layers)
        got = bound(tracker)
        want = eq3_reference(tracker.alpha2, tracker.beta2, tracker.w_frozen2, n_layers)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_series_is_prefix_of_longer_run(self):
        rng = np.random.default_rng(8)
        n_layers = 3
        tracker = BoundTracker(task=1, n_layers=n_layers)
        w2 = list(rng.uniform(0.5, 2.0, n_layers))
        for _ in range(6):
            tracker.alpha2.append(list(rng.uniform(0.1, 2.0, n_layers)))
            tracker.beta2.append(list(rng.uniform(0.0, 1.5, n_layers)))
            tracker.w_frozen2.append(list(w2))
            tracker.drift2.append([0.0] * n_layers)
        series = bound_series(tracker)
        assert len(series) == 5
        for tau in range(1, 6):
            np.testing.assert_allclose(
                series[tau - 1],
                eq3_reference(
                    tracker.alpha2[: tau + 1],
                    tracker.beta2[: tau + 1],
                    tracker.w_frozen2[: tau + 1],
                    n_layers,
                ),
                rtol=1e-12,
            )

    def test_running_values_never_decrease(self):
        rng = np.random.default_rng(9)
        tracker = BoundTracker(task=1, n_layers=3)
        w2 = list(rng.uniform(0.5, 2.0, 3))
        for _ in range(8):
            tracker.alpha2.append(list(rng.uniform(0.1, 2.0, 3)))
            tracker.beta2.append(list(rng.uniform(0.0, 1.5, 3)))
            tracker.w_frozen2.append(list(w2))
            tracker.drift2.append([0.0] * 3)
        series = bound_series(tracker)
        arr = np.asarray(series)
        assert (np.diff(arr, axis=0) >= 0.0).all()

    def test_requires_an_iteration(self):
        tracker = BoundTracker(task=1, n_layers=2)
        tracker.alpha2.append([1.0, 1.0])
        tracker.beta2.append([1.0, 1.0])
        tracker.w_frozen2.append([1.0, 1.0])
        tracker.drift2.append([0.0, 0.0])
        with pytest.raises(FfnbError):
            bound_series(tracker)

    def test_tampered_frozen_norms_raise(self):
        tracker = BoundTracker(task=1, n_layers=2)
        for _ in range(3):
            tracker.alpha2.append([1.0, 1.0])
            tracker.beta2.append([0.5, 0.5])
            tracker.w_frozen2.append([2.0, 2.0])
            tracker.drift2.append([0.0, 0.0])
        tracker.w_frozen2[1] = [2.0, 2.0001]
        with pytest.raises(FfnbError, match="frozen"):
            bound_series(tracker)


class TestBoundOnRealRuns:
    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_drift_below_bound_every_iteration(self, activation):
        _, results = run_stream(3, activation, PPolicy("variance_ratio", 0.95))
        checked = 0
        for res in results[1:]:
            tracker = res.tracker
            assert tracker is not None
            series = bound_series(tracker)
            assert tracker.iterations == len(series)
            for tau in range(1, tracker.iterations + 1):
                for ell in range(tracker.n_layers):
                    drift = tracker.drift2[tau][ell]
                    cap = series[tau - 1][ell]
                    assert drift <= cap * (1 + 1e-9) + 1e-12
                    checked += 1
        assert checked >= 2 * 4 * 3  # tasks 1..2, >=4 iterations, 3 layers

    def test_final_drift_matches_last_snapshot(self):
        # net has not grown past task 1, so a fresh recomputation must agree
        net, results = run_stream(2, "tanh", PPolicy("variance_ratio", 0.95))
        res = results[1]
        drift = measured_drift(net, res.probe)
        np.testing.assert_allclose(drift, res.tracker.drift2[-1], rtol=1e-12)
        assert all(d <= b * (1 + 1e-9) + 1e-12 for d, b in zip(drift, bound(res.tracker)))

    def test_linear_exact_rank_drift_is_float_noise(self):
        # data of rank 3 inside R^10, exact-rank retention: the null space is
        # exact, and without a nonlinearity the new coordinates are invisible
        # on old data, so even total drift collapses to rounding
        stream = low_rank_stream(3, 10, 3, 25, seed=11)
        net, results = run_stream(
            3, "linear", PPolicy("exact_rank", 1e-9), epochs=3, stream=stream
        )
        # tracker values for tasks the net has since outgrown, a fresh
        # recomputation for the final one
        for res in results[1:-1]:
            for d in res.tracker.drift2[-1]:
                assert d <= 1e-8
        for d in measured_drift(net, results[-1].probe):
            assert d <= 1e-8

    def test_old_class_scores_invariant_in_exact_configuration(self):
        # pair scores among previously-learned classes are computed from
        # old-dimension directions on a feature prefix that does not drift
        stream = low_rank_stream(3, 10, 3, 25, seed=12)
        config = TrainConfig(
            epochs=3,
            batch_size=12,
            lr0=0.02,
            band_size=2,
            n_feature_layers=3,
            activation="linear",
            p_policy=PPolicy("exact_rank", 1e-9),
            seed=12,
        )
        net = FfnbNetwork.create(stream.d0, 3, "linear")
        bank = ClassifierBank(epsilon=config.epsilon, heteroscedastic=True)
        acc = Accumulators.create(stream.d0, 3, 2, config.gamma)
        x_old = stream.tasks[0].test_matrix()
        train_task_ffnb(net, bank, stream.tasks[0], config, acc)
        train_task_ffnb(
            net, bank, stream.tasks[1], config, acc,
            probe_features={0: stream.tasks[0].train_matrix()},
        )
        psi = forward(net, x_old)[-1]
        h_old = bank.pairs[(1, 0)]
        before = bank.pair_score(h_old, psi[: h_old.w.shape[0]])
        preds_before = bank.predict(psi)
        train_task_ffnb(
            net, bank, stream.tasks[2], config, acc,
            probe_features={t: stream.tasks[t].train_matrix() for t in (0, 1)},
        )
        psi2 = forward(net, x_old)[-1]
        h_old2 = bank.pairs[(1, 0)]
        assert h_old2.w.tobytes() == h_old.w.tobytes()
        after = bank.pair_score(h_old2, psi2[: h_old2.w.shape[0]])
        np.testing.assert_allclose(after, before, atol=1e-8)
        # and restricting prediction to the old classes reproduces old labels
        s01 = bank.pair_score(h_old2, psi2[: h_old2.w.shape[0]])
        restricted = np.where(s01 > 0, 1, 0)
        np.testing.assert_array_equal(restricted, preds_before)

    def test_old_coordinates_never_move(self):
        net, results = run_stream(3, "relu", PPolicy("variance_ratio", 0.95))
        for res in results[1:]:
            assert res.probe.old_dims is not None
            for d in old_coordinate_drift(net, res.probe):
                assert d == 0.0

    def test_old_coordinate_drift_requires_dims(self):
        net = FfnbNetwork.create(4, 2, "tanh")
        probe = ProbeSet.capture(net, {0: np.eye(4)})
        with pytest.raises(FfnbError):
            old_coordinate_drift(net, probe)
