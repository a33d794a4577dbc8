"""Catastrophic-forgetting bound: tracking, evaluation, drift verification.

For a 1-Lipschitz activation, the drift of previous-task feature maps over an
η-step update of task t's bands is bounded per layer ℓ by

    B_ℓ = Σ_{τ=1..η} Σ_{k=0..ℓ-1} (‖α_{ℓ-k}^τ‖²·‖β_{ℓ-k-1}^τ‖²
                                   + ‖α_{ℓ-k}^{τ-1}‖²·‖β_{ℓ-k-1}^{τ-1}‖²)
                     · Π_{k'=0..k-1} ‖W_{ℓ-k',P}^τ‖²

where α are the current bands' free coordinates, β the residual-basis
coordinates of probe activations entering each layer, and W_P the stacked
frozen bands.  The tracker records those three norm families per snapshot;
`measured_drift` recomputes probe activations and must stay below the bound
(checked empirically, not assumed).

Snapshots must align with parameter updates for the bound to be sound:
per-iteration recording is the verified mode.  Per-epoch recording is a
coarse series for reporting only.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FfnbError
from .linalg import frob_norm
from .network import forward

__all__ = [
    "ProbeSet",
    "BoundTracker",
    "record_iteration",
    "bound",
    "bound_series",
    "measured_drift",
    "old_coordinate_drift",
]


@dataclass
class ProbeSet:
    """Retained previous-task samples and their pre-training feature maps.

    Used only to verify the bound; never to train.  `old_dims[i]` is the
    width of layer i+1 before the current task's expansion, so drift can be
    split into old coordinates (must be exactly stable in the linear
    configuration) and new-band coordinates.
    """

    features: np.ndarray  # (d0, m), pooled over previous tasks
    task_ids: np.ndarray  # (m,)
    baseline: list = None  # [psi_0..psi_K] at capture time
    old_dims: list = None

    @classmethod
    def capture(cls, net, features_by_task):
        """Pool per-task probe features and freeze their current activations.

        Call after expansion + closed-form init, immediately before the
        iterative update starts.
        """
        if not features_by_task:
            raise FfnbError("probe capture requires at least one previous task")
        tids = []
        blocks = []
        for tid in sorted(features_by_task):
            x = np.asarray(features_by_task[tid], dtype=np.float64)
            blocks.append(x)
            tids.extend([tid] * x.shape[1])
        features = np.concatenate(blocks, axis=1)
        probe = cls(features=features, task_ids=np.asarray(tids, dtype=np.int64))
        probe.baseline = forward(net, features)
        probe.old_dims = None
        return probe

    @property
    def n_samples(self):
        return self.features.shape[1]


def _snapshot(net, task, probe):
    """Per-layer (alpha², beta², w_frozen², drift²) lists at the current state."""
    acts = forward(net, probe.features)
    alpha2, beta2, w2, drift2 = [], [], [], []
    for i, layer in enumerate(net.feature_layers):
        current = [b for b in layer.bands if b.task == task]
        if len(current) != 1:
            raise FfnbError(
                f"layer {layer.index}: expected exactly one band for task {task}"
            )
        band = current[0]
        if band.basis.dim != acts[i].shape[0]:
            raise DimensionError(
                f"layer {layer.index}: probe activations are {acts[i].shape[0]}-dim, "
                f"band basis is {band.basis.dim}-dim"
            )
        alpha2.append(frob_norm(band.alpha) ** 2)
        beta2.append(frob_norm(band.basis.residual.T @ acts[i]) ** 2)
        w2.append(sum(frob_norm(b.weights()) ** 2 for b in layer.bands if b.frozen))
        drift2.append(frob_norm(acts[i + 1] - probe.baseline[i + 1]) ** 2)
    return alpha2, beta2, w2, drift2


@dataclass
class BoundTracker:
    """Norm series over snapshots 0 (pre-update) .. η (post-update)."""

    task: int
    n_layers: int
    alpha2: list = field(default_factory=list)  # per snapshot: [K] floats
    beta2: list = field(default_factory=list)
    w_frozen2: list = field(default_factory=list)
    drift2: list = field(default_factory=list)  # measured, for reporting

    @classmethod
    def start(cls, net, task, probe):
        """Capture the τ=0 snapshot right after closed-form initialization."""
        tracker = cls(task=task, n_layers=len(net.feature_layers))
        tracker._append(_snapshot(net, task, probe))
        return tracker

    def _append(self, snap):
        a2, b2, w2, d2 = snap
        self.alpha2.append(a2)
        self.beta2.append(b2)
        self.w_frozen2.append(w2)
        self.drift2.append(d2)

    @property
    def iterations(self):
        return len(self.alpha2) - 1


def record_iteration(tracker, net, probe):
    """Append the norm families for one completed update step."""
    tracker._append(_snapshot(net, tracker.task, probe))
    return tracker


def bound_series(tracker):
    """Running bound after each recorded update: list over τ of per-layer B_ℓ.

    B is a sum over update steps, so the running value at τ is the prefix sum.
    Frozen-band norms must be constant across snapshots within the task; that
    invariant is asserted here rather than trusted.
    """
    if tracker.iterations < 1:
        raise FfnbError("bound requires at least one recorded iteration")
    w_ref = tracker.w_frozen2[0]
    for w in tracker.w_frozen2[1:]:
        if w != w_ref:
            raise FfnbError("frozen-band norms changed during the task")
    k_layers = tracker.n_layers
    running = [0.0] * k_layers
    series = []
    for tau in range(1, tracker.iterations + 1):
        a_now, b_now = tracker.alpha2[tau], tracker.beta2[tau]
        a_prev, b_prev = tracker.alpha2[tau - 1], tracker.beta2[tau - 1]
        w_now = tracker.w_frozen2[tau]
        for ell in range(1, k_layers + 1):
            prod = 1.0
            total = 0.0
            for k in range(ell):
                j = ell - k - 1  # list index of layer ℓ-k
                total += (a_now[j] * b_now[j] + a_prev[j] * b_prev[j]) * prod
                prod *= w_now[j]
            running[ell - 1] += total
        series.append(list(running))
    return series


def bound(tracker):
    """Final B_ℓ for every layer (index i of the result = layer i+1)."""
    return bound_series(tracker)[-1]


def measured_drift(net, probe):
    """Per-layer ‖ψ_ℓ(now) − ψ_ℓ(baseline)‖²_F over the pooled probe."""
    acts = forward(net, probe.features)
    out = []
    for ell in range(1, len(net.feature_layers) + 1):
        out.append(frob_norm(acts[ell] - probe.baseline[ell]) ** 2)
    return out


def old_coordinate_drift(net, probe):
    """Drift restricted to coordinates that existed before the current task.

    Requires probe.old_dims (recorded by the trainer at expansion time).
    These coordinates are produced by frozen bands reading frozen inputs, so
    the drift is zero by construction; tests assert it instead of assuming.
    """
    if probe.old_dims is None:
        raise FfnbError("probe has no pre-expansion dimension record")
    acts = forward(net, probe.features)
    out = []
    for ell in range(1, len(net.feature_layers) + 1):
        d_old = probe.old_dims[ell - 1]
        delta = acts[ell][:d_old] - probe.baseline[ell][:d_old]
        out.append(frob_norm(delta) ** 2)
    return out
