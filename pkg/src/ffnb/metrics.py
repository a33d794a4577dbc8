"""Experiment orchestration: accuracy matrices, reports, bound series, sweeps.

The engine trains tasks strictly in order and evaluates after every task on
the test sets of all classes visited so far.  Accuracies are stored as
(correct, total) counts, so the union accuracy over pooled test sets and the
per-task cells come from the same numbers and the iCaRL-style average is an
exact mean.

Report files are deterministic under a fixed config and seed; anything
time-dependent goes to a separate timing file.  Test-set evaluation may fan
out over threads (FFNB_THREADS); training is sequential by construction.
"""

import copy
import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bound import bound_series
from .checkpoint import RunState, load_checkpoint, save_checkpoint
from .classifiers import ClassifierBank, LinearHead
from .config import validate
from .errors import ConfigError, FfnbError
from .network import FfnbNetwork
from .network import forward as _net_forward
from .stream import Standardizer, Task, TaskStream, load_stream, synth_gaussian_stream
from .training import Accumulators, train_task_ffnb, train_task_naive

__all__ = [
    "AccuracyMatrix",
    "evaluate_predictions",
    "union_accuracy",
    "avg_incremental_accuracy",
    "network_param_count",
    "param_count",
    "fresh_state",
    "materialize_stream",
    "pooled_task",
    "advance",
    "build_report",
    "evaluate_checkpoint",
    "run_experiment",
    "sweep_configs",
    "run_sweep",
]

SWEEP_AXES = ("p", "band_size", "layers", "weight_decay", "activation")


def _thread_count():
    raw = os.environ.get("FFNB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FFNB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _predict_block(net, classifier, x):
    if x.shape[1] == 0:
        return np.zeros(0, dtype=np.int64)
    psi = _net_forward(net, x)[-1]
    return classifier.predict(psi)


def evaluate_predictions(net, classifier, x):
    """Predicted class ids for a (d0, n) batch.

    FFNB_THREADS > 1 splits the columns into contiguous chunks evaluated in
    a thread pool; each column's prediction is independent, so the result
    does not depend on the chunking.
    """
    x = np.asarray(x, dtype=np.float64)
    threads = _thread_count()
    n = x.shape[1]
    if threads <= 1 or n < 2 * threads:
        return _predict_block(net, classifier, x)
    edges = np.linspace(0, n, threads + 1).astype(int)
    blocks = [x[:, a:b] for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda blk: _predict_block(net, classifier, blk), blocks))
    return np.concatenate(parts)


def _pct(correct, total):
    return 0.0 if total == 0 else 100.0 * correct / total


@dataclass
class AccuracyMatrix:
    """Lower-triangular accuracy records, kept as counts.

    counts[t][e] = [correct, total] of the model after training task t on the
    test set of task e, defined for e <= t only.  Keeping raw counts makes the
    union accuracy (pooled test sets) an exact derived quantity.
    """

    counts: list = field(default_factory=list)

    @property
    def n_checkpoints(self):
        return len(self.counts)

    def add_row(self, row):
        if len(row) != len(self.counts) + 1:
            raise FfnbError(
                f"row of length {len(row)} breaks lower-triangular growth "
                f"(expected {len(self.counts) + 1})"
            )
        self.counts.append([[int(c), int(n)] for c, n in row])

    def accuracy(self, t, e):
        """Percent accuracy of checkpoint t on task e's test set (e <= t)."""
        if e > t:
            raise FfnbError(f"task {e} was not visited yet at checkpoint {t}")
        c, n = self.counts[t][e]
        return _pct(c, n)

    def union_counts(self, t):
        row = self.counts[t]
        return sum(c for c, _ in row), sum(n for _, n in row)

    def union_accuracy(self, t):
        return _pct(*self.union_counts(t))

    def percentages(self):
        """Lower-triangular rows of percent values (no padding)."""
        return [
            [self.accuracy(t, e) for e in range(len(row))] for t, row in enumerate(self.counts)
        ]

    def to_csv(self):
        """One row per checkpoint; '--' marks not-yet-visited tasks."""
        t_total = self.n_checkpoints
        header = ["after_task", *(f"task_{e}" for e in range(t_total)), "union"]
        lines = [",".join(header)]
        for t, row in enumerate(self.counts):
            cells = [f"{self.accuracy(t, e):.6f}" if e < len(row) else "--" for e in range(t_total)]
            lines.append(",".join([str(t), *cells, f"{self.union_accuracy(t):.6f}"]))
        return "\n".join(lines) + "\n"


def avg_incremental_accuracy(matrix):
    """Mean of the union accuracies over all training checkpoints."""
    if matrix.n_checkpoints == 0:
        raise FfnbError("empty accuracy matrix")
    unions = [matrix.union_accuracy(t) for t in range(matrix.n_checkpoints)]
    return sum(unions) / len(unions)


def union_accuracy(net, classifier, stream, after_task):
    """Accuracy over the pooled test sets of tasks 0..after_task, in percent."""
    if not 0 <= after_task < len(stream.tasks):
        raise FfnbError(f"after_task {after_task} outside stream of {len(stream.tasks)} tasks")
    visited = set(classifier.visited)
    xs, ys = [], []
    for e in range(after_task + 1):
        task = stream.tasks[e]
        missing = sorted(set(int(c) for c in task.classes) - visited)
        if missing:
            raise FfnbError(f"task {task.id} not trained yet (classes {missing} never visited)")
        xs.append(task.test_matrix())
        ys.append(task.test_labels())
    x = np.concatenate(xs, axis=1)
    y = np.concatenate(ys)
    if y.size == 0:
        return 0.0
    preds = evaluate_predictions(net, classifier, x)
    return 100.0 * float(np.mean(preds == y))


def network_param_count(net):
    """Weight entries across all bands, counted in the ambient space.

    A band stores band_size x residual coefficients, but its footprint in the
    network is the effective (band_size x input-width) weight block; that is
    the count implied by (d0, band_size, layers, tasks) alone, independent of
    the data-driven residual dimensions.
    """
    return int(
        sum(b.alpha.shape[0] * b.in_dim for layer in net.feature_layers for b in layer.bands)
    )


def param_count(state):
    return network_param_count(state.net) + state.classifier.param_count()


def materialize_stream(config):
    """Load or synthesize the task stream named by a RunConfig."""
    sc = config.stream
    if "path" in sc:
        stream = load_stream(sc["path"], sc["format"])
    else:
        sy = sc["synth"]
        stream = synth_gaussian_stream(
            n_tasks=sy["n_tasks"],
            classes_per_task=sy["classes_per_task"],
            d0=sy["d0"],
            n_per_class=sy["n_per_class"],
            separation=sy["separation"],
            seed=sy.get("seed", config.seed),
        )
    if sc["normalize"]:
        stream = Standardizer.fit(stream).apply(stream)
    return stream


def pooled_task(stream):
    """All tasks merged into one (the joint-training comparator's view)."""
    classes = sorted({int(c) for task in stream.tasks for c in task.classes})
    train = tuple(s for task in stream.tasks for s in task.train)
    test = tuple(s for task in stream.tasks for s in task.test)
    return Task(id=0, classes=tuple(classes), train=train, test=test)


def fresh_state(config, stream):
    """RunState at task 0 for the configured method."""
    tc = config.train_config()
    net = FfnbNetwork.create(stream.d0, tc.n_feature_layers, tc.activation)
    bank = head = accumulators = None
    if config.method == "ffnb":
        accumulators = Accumulators.create(stream.d0, tc.n_feature_layers, tc.band_size, tc.gamma)
        if tc.head_mode == "fda":
            bank = ClassifierBank(
                epsilon=tc.epsilon,
                heteroscedastic=tc.heteroscedastic,
                use_bias=not tc.no_bias,
                prev_only=tc.prev_only_aggregation,
            )
        else:
            head = LinearHead.empty(0)
    else:
        head = LinearHead.empty(0)
    return RunState(
        method=config.method,
        seed=config.seed,
        net=net,
        bank=bank,
        head=head,
        accumulators=accumulators,
        config_snapshot=config.snapshot(),
    )


def advance(state, stream, tc):
    """Train the next task in `stream` and append its evaluation records."""
    tasks = stream.tasks
    t = state.next_task
    if t >= len(tasks):
        raise FfnbError(f"no tasks left to train (next_task={t}, stream has {len(tasks)})")
    task = tasks[t]
    if state.method == "ffnb":
        result = train_task_ffnb(
            state.net, state.classifier, task, tc, state.accumulators, probe_features=state.probe_store
        )
        x = task.train_matrix()
        state.probe_store[task.id] = x[:, : min(tc.probe_size, x.shape[1])].copy()
    else:
        result = train_task_naive(state.net, state.head, task, tc)

    row = []
    for e in range(t + 1):
        labels = tasks[e].test_labels()
        preds = evaluate_predictions(state.net, state.classifier, tasks[e].test_matrix())
        row.append([int(np.sum(preds == labels)), int(labels.size)])
    rep = state.report
    rep.matrix.append(row)
    rep.union.append([sum(c for c, _ in row), sum(n for _, n in row)])
    rep.param_counts.append(param_count(state))
    if state.method == "ffnb":
        rep.p_history.append([layer.bands[-1].basis.p for layer in state.net.feature_layers])
    else:
        rep.p_history.append(None)
    rep.task_classes.append([int(c) for c in task.classes])

    if result.tracker is not None and result.tracker.iterations >= 1:
        tracker = result.tracker
        series = bound_series(tracker)
        for tau in range(1, tracker.iterations + 1):
            for ell in range(tracker.n_layers):
                rep.bound_rows.append(
                    {
                        "task": task.id,
                        "iteration": tau,
                        "layer": ell + 1,
                        "bound": series[tau - 1][ell],
                        "drift": tracker.drift2[tau][ell],
                    }
                )
        rep.final_bound[task.id] = {
            "bound": list(series[-1]),
            "drift": list(tracker.drift2[-1]),
        }
    state.next_task = t + 1
    return result


def build_report(state):
    """Deterministic report dict (no wall-clock content)."""
    matrix = AccuracyMatrix(counts=state.report.matrix)
    n = matrix.n_checkpoints
    return {
        "format": "ffnb-report-v1",
        "method": state.method,
        "seed": state.seed,
        "config": state.config_snapshot,
        "task_classes": state.report.task_classes,
        "accuracy_counts": matrix.counts,
        "accuracy_matrix": matrix.percentages(),
        "union_accuracy": [matrix.union_accuracy(t) for t in range(n)],
        "avg_incremental_accuracy": avg_incremental_accuracy(matrix) if n else None,
        "param_counts": state.report.param_counts,
        "p_history": state.report.p_history,
        "bound_series": state.report.bound_rows,
        "bound_final": {str(k): v for k, v in sorted(state.report.final_bound.items())},
    }


def _write_report_files(report, state, out_dir, timings, keep_checkpoint):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    matrix = AccuracyMatrix(counts=state.report.matrix)
    with open(os.path.join(out_dir, "accuracy_matrix.csv"), "w", encoding="utf-8") as fh:
        fh.write(matrix.to_csv())
    with open(os.path.join(out_dir, "bound_series.csv"), "w", encoding="utf-8") as fh:
        fh.write("task,iteration,layer,bound,drift\n")
        for r in report["bound_series"]:
            fh.write(f"{r['task']},{r['iteration']},{r['layer']},{r['bound']!r},{r['drift']!r}\n")
    with open(os.path.join(out_dir, "timing.json"), "w", encoding="utf-8") as fh:
        json.dump({"wall_clock_per_task": timings}, fh, indent=2)
        fh.write("\n")
    if keep_checkpoint:
        save_checkpoint(state, os.path.join(out_dir, "checkpoint.json"))


def run_experiment(config, resume=None, stop_after=None):
    """Train per config, evaluate after every task, write report files.

    Parameters
    ----------
    config : RunConfig
    resume : path of a checkpoint to continue from (its recorded evaluation
        rows are kept, so the final report matches an uninterrupted run).
    stop_after : train until this many tasks are complete, then stop and
        write partial outputs (including the checkpoint when configured).

    Returns
    -------
    dict, the report (also written to config.output_dir when set).
    """
    stream = materialize_stream(config)
    tc = config.train_config()
    if resume is not None:
        state = load_checkpoint(resume)
        if state.method != config.method:
            raise ConfigError(
                f"checkpoint was produced by method {state.method!r}, config says {config.method!r}"
            )
        if state.seed != config.seed:
            raise ConfigError(
                f"checkpoint seed {state.seed} differs from config seed {config.seed}"
            )
    else:
        state = fresh_state(config, stream)
    if config.method == "multitask":
        # Joint-training comparator: one pooled task, but the same final
        # layer widths the sequential methods reach after all tasks.
        work = TaskStream(d0=stream.d0, tasks=(pooled_task(stream),))
        tc = dataclasses.replace(tc, band_size=tc.band_size * len(stream.tasks))
    else:
        work = stream
    limit = len(work.tasks) if stop_after is None else min(int(stop_after), len(work.tasks))
    timings = []
    while state.next_task < limit:
        tid = work.tasks[state.next_task].id
        t0 = time.perf_counter()
        advance(state, work, tc)
        timings.append({"task": tid, "seconds": time.perf_counter() - t0})
    report = build_report(state)
    if config.output_dir:
        _write_report_files(report, state, config.output_dir, timings, config.save_checkpoint)
    return report


def evaluate_checkpoint(state, stream):
    """Per-task and union accuracy of a restored run on a stream.

    Tasks containing classes the model never visited are listed as skipped
    rather than scored.
    """
    visited = set(state.classifier.visited)
    per_task = []
    skipped = []
    correct = total = 0
    for task in stream.tasks:
        if not {int(c) for c in task.classes} <= visited:
            skipped.append(task.id)
            continue
        labels = task.test_labels()
        preds = evaluate_predictions(state.net, state.classifier, task.test_matrix())
        c = int(np.sum(preds == labels))
        per_task.append(
            {
                "task": task.id,
                "classes": [int(cl) for cl in task.classes],
                "n_test": int(labels.size),
                "accuracy": _pct(c, labels.size),
            }
        )
        correct += c
        total += int(labels.size)
    return {
        "method": state.method,
        "tasks_trained": state.next_task,
        "per_task": per_task,
        "skipped_tasks": skipped,
        "union_accuracy": _pct(correct, total),
    }


def sweep_configs(config, axis, values):
    """Yield (value, RunConfig) pairs with the axis applied per value.

    Each derived config writes under <output_dir>/<axis>=<value> and is
    re-validated, so out-of-range sweep values fail with the usual messages.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if not config.output_dir:
        raise ConfigError("sweep requires output_dir in the base config")
    if not values:
        raise ConfigError("sweep requires at least one axis value")
    base = config.snapshot()
    for v in values:
        raw = copy.deepcopy(base)
        if axis == "p":
            raw["p_policy"] = {"kind": "fixed", "p": v}
        elif axis == "band_size":
            raw["train"]["band_size"] = v
        elif axis == "layers":
            raw["train"]["n_feature_layers"] = v
        elif axis == "weight_decay":
            raw["train"]["weight_decay"] = v
        else:
            raw["train"]["activation"] = v
        raw["output_dir"] = os.path.join(config.output_dir, f"{axis}={v}")
        yield v, validate(raw)


def run_sweep(config, axis, values):
    """One experiment per axis value plus a summary CSV in the base output_dir."""
    rows = []
    for v, cfg in sweep_configs(config, axis, values):
        report = run_experiment(cfg)
        final = report["bound_final"]
        if final:
            last = final[str(max(int(k) for k in final))]
            bound_last = repr(last["bound"][-1])
        else:
            bound_last = ""
        rows.append(
            {
                "axis": axis,
                "value": v,
                "final_union_accuracy": report["union_accuracy"][-1],
                "avg_incremental_accuracy": report["avg_incremental_accuracy"],
                "final_param_count": report["param_counts"][-1],
                "final_bound_last_layer": bound_last,
            }
        )
    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(
            "axis,value,final_union_accuracy,avg_incremental_accuracy,"
            "final_param_count,final_bound_last_layer\n"
        )
        for r in rows:
            fh.write(
                f"{r['axis']},{r['value']},{r['final_union_accuracy']:.6f},"
                f"{r['avg_incremental_accuracy']:.6f},{r['final_param_count']},"
                f"{r['final_bound_last_layer']}\n"
            )
    return rows
