"""Class-incremental task streams: data model, file IO, synthetic generator.

A stream is an ordered list of tasks over a shared feature space of dimension
`d0`.  Each task exposes one or more classes that are disjoint from every
other task's classes (class-shift setting), with a fixed train/test split.
Streams are immutable after construction and safe to share across threads.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, StreamFormatError

__all__ = [
    "Sample",
    "Task",
    "TaskStream",
    "Standardizer",
    "load_stream",
    "save_stream",
    "synth_gaussian_stream",
]


@dataclass(frozen=True)
class Sample:
    """One labeled feature vector."""

    features: np.ndarray  # (d0,) float64
    label: int


@dataclass(frozen=True)
class Task:
    """One training phase: a set of classes with train/test samples."""

    id: int
    classes: tuple  # sorted class ids
    train: tuple  # of Sample
    test: tuple  # of Sample

    def __post_init__(self):
        if len(self.train) < 1:
            raise StreamFormatError(f"task {self.id} has an empty train split")
        cls = set(self.classes)
        width = self.train[0].features.shape
        for split_name, samples in (("train", self.train), ("test", self.test)):
            for s in samples:
                if s.label not in cls:
                    raise StreamFormatError(
                        f"task {self.id} {split_name} sample labeled {s.label}, "
                        f"not in task classes {sorted(cls)}"
                    )
                if s.features.shape != width:
                    raise StreamFormatError(
                        f"task {self.id} {split_name}: feature shapes differ "
                        f"({s.features.shape} vs {width})"
                    )

    def _matrix(self, samples):
        return np.stack([s.features for s in samples], axis=1)

    def train_matrix(self):
        """Train features, one sample per column: shape (d0, n_train)."""
        return self._matrix(self.train)

    def train_labels(self):
        return np.array([s.label for s in self.train], dtype=np.int64)

    def test_matrix(self):
        if not self.test:
            return np.zeros((self.train[0].features.shape[0], 0))
        return self._matrix(self.test)

    def test_labels(self):
        return np.array([s.label for s in self.test], dtype=np.int64)


@dataclass(frozen=True)
class TaskStream:
    """Ordered tasks over a shared d0-dimensional feature space."""

    d0: int
    tasks: tuple  # of Task

    def __post_init__(self):
        seen = set()
        for i, task in enumerate(self.tasks):
            if task.id != i:
                raise StreamFormatError(
                    f"task ids must be consecutive from 0; position {i} has id {task.id}"
                )
            overlap = seen & set(task.classes)
            if overlap:
                raise StreamFormatError(
                    f"classes {sorted(overlap)} appear in more than one task"
                )
            seen |= set(task.classes)
            for s in list(task.train) + list(task.test):
                if s.features.shape != (self.d0,):
                    raise DimensionError(
                        f"task {task.id}: feature vector of shape {s.features.shape}, "
                        f"stream declares d0={self.d0}"
                    )
                if not np.isfinite(s.features).all():
                    raise NumericError(f"task {task.id}: non-finite features")


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension affine normalization frozen from the task-0 train split.

    Future tasks' statistics are unavailable in the incremental setting, so
    the transform is fitted once and never updated.
    """

    mean: np.ndarray
    scale: np.ndarray  # standard deviation floored at 1e-8

    @classmethod
    def fit(cls, stream):
        x = stream.tasks[0].train_matrix()
        mean = x.mean(axis=1)
        scale = np.maximum(x.std(axis=1), 1e-8)
        return cls(mean=mean, scale=scale)

    def apply(self, stream):
        def tx(sample):
            return Sample((sample.features - self.mean) / self.scale, sample.label)

        tasks = tuple(
            Task(
                id=t.id,
                classes=t.classes,
                train=tuple(tx(s) for s in t.train),
                test=tuple(tx(s) for s in t.test),
            )
            for t in stream.tasks
        )
        return TaskStream(d0=stream.d0, tasks=tasks)


def _build_stream(d0, rows):
    """Assemble a validated TaskStream from (task_id, label, split, features) rows."""
    by_task = {}
    for task_id, label, split, feats in rows:
        by_task.setdefault(task_id, {"train": [], "test": []})[split].append(
            Sample(np.asarray(feats, dtype=np.float64), label)
        )
    tasks = []
    for tid in sorted(by_task):
        splits = by_task[tid]
        classes = sorted(
            {s.label for s in splits["train"]} | {s.label for s in splits["test"]}
        )
        tasks.append(
            Task(
                id=tid,
                classes=tuple(classes),
                train=tuple(splits["train"]),
                test=tuple(splits["test"]),
            )
        )
    return TaskStream(d0=d0, tasks=tuple(tasks))


def load_stream(path, format="csv"):
    """Load and validate a task stream from disk.

    Parameters
    ----------
    path : str
        File to read.
    format : {"csv", "json"}
        `csv` expects header ``task_id,class_id,split,f0,...,f{d0-1}`` with
        split in {train, test}.  `json` expects
        ``{"d0": ..., "tasks": [{"id", "classes", "train": [...], "test": [...]}]}``
        with samples as ``{"label": ..., "features": [...]}``.

    Raises
    ------
    StreamFormatError
        On malformed records, class overlap across tasks, or bad split tags.
    DimensionError
        On feature-length mismatches.
    """
    if format not in ("csv", "json"):
        raise StreamFormatError(f"unknown stream format {format!r}")
    try:
        return _load_csv(path) if format == "csv" else _load_json(path)
    except OSError as exc:
        raise StreamFormatError(f"cannot read stream {path}: {exc}") from exc


def _load_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StreamFormatError(f"{path}: empty file") from None
        d0 = len(header) - 3
        expected = ["task_id", "class_id", "split"] + [f"f{i}" for i in range(d0)]
        if d0 < 1 or header != expected:
            raise StreamFormatError(
                f"{path}: bad header; expected task_id,class_id,split,f0,...,f{{d0-1}}"
            )
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise StreamFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}"
                )
            try:
                task_id = int(rec[0])
                label = int(rec[1])
                feats = [float(v) for v in rec[3:]]
            except ValueError as exc:
                raise StreamFormatError(f"{path}:{lineno}: {exc}") from exc
            split = rec[2]
            if split not in ("train", "test"):
                raise StreamFormatError(
                    f"{path}:{lineno}: split must be 'train' or 'test', got {split!r}"
                )
            rows.append((task_id, label, split, feats))
    if not rows:
        raise StreamFormatError(f"{path}: no data rows")
    return _build_stream(d0, rows)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StreamFormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        d0 = int(obj["d0"])
        tasks = []
        for entry in obj["tasks"]:
            def parse(split):
                return tuple(
                    Sample(np.asarray(s["features"], dtype=np.float64), int(s["label"]))
                    for s in entry[split]
                )

            tasks.append(
                Task(
                    id=int(entry["id"]),
                    classes=tuple(sorted(int(c) for c in entry["classes"])),
                    train=parse("train"),
                    test=parse("test"),
                )
            )
    except (KeyError, TypeError) as exc:
        raise StreamFormatError(f"{path}: malformed stream object: {exc!r}") from exc
    return TaskStream(d0=d0, tasks=tuple(tasks))


def save_stream(stream, path, format="csv"):
    """Write a stream to disk; `load_stream` round-trips it exactly."""
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["task_id", "class_id", "split"] + [f"f{i}" for i in range(stream.d0)]
            )
            for task in stream.tasks:
                for split, samples in (("train", task.train), ("test", task.test)):
                    for s in samples:
                        writer.writerow(
                            [task.id, s.label, split] + [repr(float(v)) for v in s.features]
                        )
    elif format == "json":
        obj = {
            "d0": stream.d0,
            "tasks": [
                {
                    "id": t.id,
                    "classes": list(t.classes),
                    "train": [
                        {"label": s.label, "features": [float(v) for v in s.features]}
                        for s in t.train
                    ],
                    "test": [
                        {"label": s.label, "features": [float(v) for v in s.features]}
                        for s in t.test
                    ],
                }
                for t in stream.tasks
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1)
            fh.write("\n")
    else:
        raise StreamFormatError(f"unknown stream format {format!r}")


def synth_gaussian_stream(n_tasks, classes_per_task, d0, n_per_class, separation, seed):
    """Generate a synthetic class-incremental stream of isotropic Gaussians.

    Class means are drawn from the seed by rejection sampling until all
    pairwise distances are >= `separation`; samples add unit-variance
    isotropic noise.  Each class is split 80/20 into train/test (at least one
    training sample).  Equal (arguments, seed) produce identical streams.

    Parameters
    ----------
    n_tasks, classes_per_task, d0, n_per_class : int
        All >= 1.  Class ids are assigned sequentially task by task.
    separation : float
        Minimum pairwise distance between class means; > 0.
    seed : int
        Generator seed.

    Returns
    -------
    TaskStream
    """
    if min(n_tasks, classes_per_task, d0, n_per_class) < 1:
        raise ValueError("all counts must be >= 1")
    if separation <= 0:
        raise ValueError("separation must be > 0")
    rng = np.random.default_rng(seed)
    n_classes = n_tasks * classes_per_task
    means = []
    attempts = 0
    while len(means) < n_classes:
        attempts += 1
        if attempts > 10000 * n_classes:
            raise RuntimeError("could not place class means at requested separation")
        # widen the proposal scale slowly so tight low-dimensional configs terminate
        scale = separation * (1.0 + attempts / (100.0 * n_classes))
        cand = rng.normal(0.0, scale, size=d0)
        if all(np.linalg.norm(cand - m) >= separation for m in means):
            means.append(cand)

    n_train = max(1, (4 * n_per_class) // 5)
    tasks = []
    for t in range(n_tasks):
        train, test = [], []
        for j in range(classes_per_task):
            cid = t * classes_per_task + j
            x = means[cid][:, None] + rng.normal(0.0, 1.0, size=(d0, n_per_class))
            for i in range(n_per_class):
                target = train if i < n_train else test
                target.append(Sample(x[:, i].copy(), cid))
        classes = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        tasks.append(Task(id=t, classes=classes, train=tuple(train), test=tuple(test)))
    return TaskStream(d0=d0, tasks=tuple(tasks))
