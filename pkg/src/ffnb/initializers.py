"""Closed-form ridge initialization of new-band coordinates.

A new band should already behave like a crude task detector before any
gradient step: +1 on current-task samples, 0 elsewhere.  With coding matrix C
over the band's rows, the ridge objective

    min_A  γ/2 ‖A‖² + 1/2 ‖C − A.T Φ_r.T ψ‖²

has the closed-form minimizer A = (γI + Φ_r.T G Φ_r)^{-1} Φ_r.T ψ C.T with
G = ψ ψ.T.  The multi-task variant replaces G and ψC.T with accumulators
summed over every visited task, so previous tasks push the band toward 0 on
their data without any of it being stored.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StreamFormatError
from .linalg import solve_spd

__all__ = [
    "coding_matrix",
    "InitAccumulators",
    "mono_task_init",
    "multi_task_init",
]


def coding_matrix(labels, current_band_classes, band_size, known_classes=None):
    """Target rows for the current band: +1 iff the sample's class is served.

    All `band_size` rows are identical; bands of previous tasks are all-zero
    targets and never materialized.

    Parameters
    ----------
    labels : (n,) int array
    current_band_classes : iterable of class ids served by the current band
    band_size : int
    known_classes : optional iterable; when given, any label outside it is
        rejected (guards against typo'd class ids in mixed batches).

    Returns
    -------
    (band_size, n) float64 array with entries in {0, +1}.
    """
    labels = np.asarray(labels)
    current = set(int(c) for c in current_band_classes)
    if known_classes is not None:
        known = set(int(c) for c in known_classes) | current
        unknown = set(int(v) for v in labels) - known
        if unknown:
            raise StreamFormatError(f"unknown class labels {sorted(unknown)}")
    member = np.isin(labels, sorted(current)).astype(np.float64)
    return np.tile(member, (band_size, 1))


@dataclass
class InitAccumulators:
    """Per-layer running sums feeding the multi-task closed form.

    gram = Σ over visited tasks of ψ ψ.T at the layer input; cross = Σ ψ C.T
    for the current band's rows (reset when a new band opens, since previous
    bands' target rows are all-zero).
    """

    layer: int
    gram: np.ndarray  # (d, d)
    cross: np.ndarray  # (d, band_size)
    gamma: float

    @classmethod
    def empty(cls, layer, dim, band_size, gamma):
        return cls(layer, np.zeros((dim, dim)), np.zeros((dim, band_size)), gamma)

    @property
    def dim(self):
        return self.gram.shape[0]

    def ingest(self, psi, coding):
        psi = np.asarray(psi, dtype=np.float64)
        coding = np.asarray(coding, dtype=np.float64)
        if psi.shape[0] != self.dim:
            raise DimensionError(
                f"layer {self.layer}: activations are {psi.shape[0]}-dim, "
                f"accumulator is {self.dim}-dim"
            )
        if coding.shape != (self.cross.shape[1], psi.shape[1]):
            raise DimensionError(
                f"coding shape {coding.shape} incompatible with "
                f"({self.cross.shape[1]}, {psi.shape[1]})"
            )
        self.gram += psi @ psi.T
        self.cross += psi @ coding.T

    def begin_band(self, band_size):
        """Open a new band: fresh zero cross-term, gram history kept."""
        self.cross = np.zeros((self.dim, band_size))

    def grow_to(self, dim):
        if dim < self.dim:
            raise DimensionError(f"cannot shrink accumulator from {self.dim} to {dim}")
        if dim == self.dim:
            return
        gram = np.zeros((dim, dim))
        gram[: self.dim, : self.dim] = self.gram
        cross = np.zeros((dim, self.cross.shape[1]))
        cross[: self.dim] = self.cross
        self.gram = gram
        self.cross = cross

    def copy(self):
        return InitAccumulators(self.layer, self.gram.copy(), self.cross.copy(), self.gamma)


def _ridge_alpha(gram, cross, basis, gamma):
    phi_r = basis.residual
    r = phi_r.shape[1]
    lhs = gamma * np.eye(r) + phi_r.T @ gram @ phi_r
    rhs = phi_r.T @ cross
    return solve_spd(lhs, rhs).T  # (band_size, r)


def mono_task_init(psi, basis, coding, gamma):
    """Closed-form band coordinates from current-task data alone.

    Parameters
    ----------
    psi : (d, n) activations at the layer input for the current task
    basis : ResidualBasis for this layer
    coding : (band_size, n) coding matrix
    gamma : positive ridge constant

    Returns
    -------
    alpha : (band_size, d - p) exact minimizer of the ridge objective.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    psi = np.asarray(psi, dtype=np.float64)
    coding = np.asarray(coding, dtype=np.float64)
    if psi.shape[0] != basis.dim:
        raise DimensionError(f"activations {psi.shape[0]}-dim, basis {basis.dim}-dim")
    if coding.shape[1] != psi.shape[1]:
        raise DimensionError("coding and activations disagree on sample count")
    return _ridge_alpha(psi @ psi.T, psi @ coding.T, basis, gamma)


def multi_task_init(acc, basis):
    """Closed-form band coordinates from accumulators over all visited tasks.

    The accumulators must already include the current task's contribution
    (the caller stages that on a copy so the persistent state is only updated
    once, after training).
    """
    if acc.dim != basis.dim:
        raise DimensionError(
            f"accumulator is {acc.dim}-dim, basis is {basis.dim}-dim"
        )
    return _ridge_alpha(acc.gram, acc.cross, basis, acc.gamma)
