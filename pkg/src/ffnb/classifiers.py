"""Incremental pairwise Fisher-discriminant bank and the one-vs-all head.

Each class keeps only running first/second moments of its feature-layer
activations, so classifiers over any class pair can be (re)fitted at any time
without revisiting data.  The pair (t, r) hyperplane is the shrinkage FDA
solution

    w = (Σ_t + Σ_r + εI)^{-1} (μ_t − μ_r),    b = −w·(μ_t + μ_r)

scored as tanh(w·ψ + b/2), which vanishes at the midpoint of the class means.
A class's aggregate score sums its signed pair scores; argmax predicts.

The one-vs-all linear head is the baseline used by the naive trainer and the
multi-task comparator.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FrozenUpdateError
from .linalg import solve_spd

__all__ = ["ClassStats", "PairwiseHyperplane", "ClassifierBank", "LinearHead"]

_EPS_FLOOR = 1e-12


@dataclass
class ClassStats:
    """Running per-class moments in the last feature layer's space."""

    class_id: int
    sum_x: np.ndarray  # (d,)
    sum_outer: np.ndarray  # (d, d)
    count: int = 0
    frozen: bool = False

    @classmethod
    def empty(cls, class_id, dim):
        return cls(class_id, np.zeros(dim), np.zeros((dim, dim)), 0)

    @property
    def dim(self):
        return self.sum_x.shape[0]

    @property
    def mean(self):
        if self.count == 0:
            raise ValueError(f"class {self.class_id} has no samples")
        return self.sum_x / self.count

    @property
    def cov(self):
        """Maximum-likelihood covariance; a single sample gives exactly 0."""
        mu = self.mean
        c = self.sum_outer / self.count - np.outer(mu, mu)
        return (c + c.T) / 2.0

    def ingest(self, batch):
        if self.frozen:
            raise FrozenUpdateError(f"stats for class {self.class_id} are frozen")
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[0] != self.dim:
            raise DimensionError(
                f"class {self.class_id}: batch dim {batch.shape[0]} != stats dim {self.dim}"
            )
        self.sum_x += batch.sum(axis=1)
        self.sum_outer += batch @ batch.T
        self.count += batch.shape[1]

    def reset(self):
        if self.frozen:
            raise FrozenUpdateError(f"stats for class {self.class_id} are frozen")
        self.sum_x = np.zeros(self.dim)
        self.sum_outer = np.zeros((self.dim, self.dim))
        self.count = 0

    def grow_to(self, dim):
        if dim < self.dim:
            raise DimensionError("cannot shrink class stats")
        if dim == self.dim:
            return
        sx = np.zeros(dim)
        sx[: self.dim] = self.sum_x
        so = np.zeros((dim, dim))
        so[: self.dim, : self.dim] = self.sum_outer
        self.sum_x = sx
        self.sum_outer = so

    def copy(self):
        return ClassStats(
            self.class_id, self.sum_x.copy(), self.sum_outer.copy(), self.count, self.frozen
        )


@dataclass
class PairwiseHyperplane:
    pos: int  # newer class
    neg: int  # older class
    w: np.ndarray
    bias: float


@dataclass
class ClassifierBank:
    """All pairwise hyperplanes over the visited classes, plus their stats.

    epsilon=None applies the relative shrinkage 1e-3·trace(Σ_t+Σ_r)/d; an
    explicit float is used as-is.  heteroscedastic=False replaces the summed
    covariances with the identity (nearest-centroid direction).  use_bias
    selects tanh(w·ψ + b/2) versus the literal tanh(w·ψ).  prev_only makes a
    class's aggregate sum only over pairs where it is the newer class.
    """

    epsilon: float = None
    heteroscedastic: bool = True
    use_bias: bool = True
    prev_only: bool = False
    stats: dict = field(default_factory=dict)  # class_id -> ClassStats
    pairs: dict = field(default_factory=dict)  # (pos, neg) -> PairwiseHyperplane
    class_order: list = field(default_factory=list)  # introduction order

    @property
    def visited(self):
        return list(self.class_order)

    def add_classes(self, classes, dim):
        """Register newly introduced classes with empty, unfrozen stats."""
        for c in classes:
            c = int(c)
            if c in self.stats:
                raise FrozenUpdateError(f"class {c} was already introduced")
            self.stats[c] = ClassStats.empty(c, dim)
            self.class_order.append(c)

    def grow_to(self, dim):
        for st in self.stats.values():
            st.grow_to(dim)

    def update_stats(self, activations, labels):
        """Fold a labeled batch into per-class moments (current classes only)."""
        activations = np.asarray(activations, dtype=np.float64)
        labels = np.asarray(labels)
        for c in np.unique(labels):
            st = self.stats.get(int(c))
            if st is None:
                raise DimensionError(f"class {c} was never introduced to the bank")
            st.ingest(activations[:, labels == c])
        return self

    def reset_stats(self, classes):
        for c in classes:
            self.stats[int(c)].reset()

    def freeze_classes(self, classes):
        for c in classes:
            self.stats[int(c)].frozen = True

    def _scatter(self, st_a, st_b):
        d = st_a.dim
        if self.heteroscedastic:
            base = st_a.cov + st_b.cov
        else:
            base = np.eye(d)
        if self.epsilon is None:
            eps = max(1e-3 * float(np.trace(base)) / d, _EPS_FLOOR)
        else:
            eps = self.epsilon
        return base + eps * np.eye(d)

    def fit_pair(self, pos, neg):
        """Shrinkage-FDA hyperplane separating `pos` (newer) from `neg`."""
        st_p, st_n = self.stats[pos], self.stats[neg]
        if st_p.dim != st_n.dim:
            raise DimensionError("class stats live in different dimensions")
        delta = st_p.mean - st_n.mean
        w = solve_spd(self._scatter(st_p, st_n), delta)
        bias = -float(w @ (st_p.mean + st_n.mean))
        return PairwiseHyperplane(pos=pos, neg=neg, w=w, bias=bias)

    def refresh_pairs(self, current_classes):
        """(Re)fit every pair that involves a current class.

        Pairs between two previous classes are untouched; their stats are
        frozen so refitting would be a no-op anyway.
        """
        current = [int(c) for c in current_classes]
        intro = {c: i for i, c in enumerate(self.class_order)}
        for c in current:
            for other in self.class_order:
                if other == c:
                    continue
                pos, neg = (c, other) if intro[c] >= intro[other] else (other, c)
                self.pairs[(pos, neg)] = self.fit_pair(pos, neg)
        return self

    def pair_score(self, h, psi):
        """tanh pair score(s); positive favors h.pos.  psi: (d,) or (d, n)."""
        z = h.w @ psi
        if self.use_bias:
            z = z + h.bias / 2.0
        return np.tanh(z)

    def score_matrix(self, psi):
        """Aggregated class scores, (n_classes, n) in introduction order."""
        psi = np.asarray(psi, dtype=np.float64)
        if psi.ndim == 1:
            psi = psi[:, None]
        index = {c: i for i, c in enumerate(self.class_order)}
        scores = np.zeros((len(self.class_order), psi.shape[1]))
        for (pos, neg), h in self.pairs.items():
            s = self.pair_score(h, psi[: h.w.shape[0]])
            scores[index[pos]] += s
            if not self.prev_only:
                scores[index[neg]] -= s
        return scores

    def aggregate_and_predict(self, psi):
        """Class scores and argmax prediction for a single feature vector.

        Ties break toward the earliest-introduced class; with one visited
        class it is predicted unconditionally.
        """
        scores = self.score_matrix(psi)[:, 0]
        best = int(np.argmax(scores))  # first max wins = earliest introduction
        return dict(zip(self.class_order, scores)), self.class_order[best]

    def predict(self, psi):
        """Vectorized argmax prediction: (d, n) -> (n,) class ids."""
        scores = self.score_matrix(psi)
        idx = np.argmax(scores, axis=0)
        order = np.asarray(self.class_order)
        return order[idx]

    def param_count(self):
        return sum(h.w.size + 1 for h in self.pairs.values())


@dataclass
class LinearHead:
    """One-vs-all linear scores over visited classes (baseline head)."""

    weights: np.ndarray  # (n_classes, d)
    class_order: list
    trainable_rows: list  # row indices updated by the current task

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((0, dim)), [], [])

    @property
    def visited(self):
        return list(self.class_order)

    def expand(self, classes, dim, init_rows):
        """Zero-pad old rows to `dim`, append rows for new classes.

        Old rows become frozen; the appended rows (initialized from
        `init_rows`) are the only trainable ones until the next expansion.
        """
        old = np.zeros((self.weights.shape[0], dim))
        old[:, : self.weights.shape[1]] = self.weights
        init_rows = np.asarray(init_rows, dtype=np.float64)
        if init_rows.shape != (len(classes), dim):
            raise DimensionError(
                f"init rows shape {init_rows.shape} != ({len(classes)}, {dim})"
            )
        start = old.shape[0]
        self.weights = np.vstack([old, init_rows])
        self.class_order = self.class_order + [int(c) for c in classes]
        self.trainable_rows = list(range(start, start + len(classes)))

    def score_matrix(self, psi):
        return self.weights @ psi

    def predict(self, psi):
        scores = self.score_matrix(psi)
        idx = np.argmax(scores, axis=0)
        order = np.asarray(self.class_order)
        return order[idx]

    def param_count(self):
        return int(self.weights.size)

    def copy(self):
        return LinearHead(self.weights.copy(), list(self.class_order), list(self.trainable_rows))
