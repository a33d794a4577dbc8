"""Per-task training loops: projected SGD on new bands, plus the naive baseline.

The main loop (`train_task_ffnb`) runs, per task: residual bases from the
moment accumulators, expansion, closed-form band init, then minibatch SGD
with momentum on the current bands' α only.  Gradients reach α through the
residual-basis projection, so updates cannot leave the previous-task
null-space; weight decay acts on α; the discriminant bank is refreshed from
current-task activations once per epoch (or per batch behind a flag).

`train_task_naive` is the forgetting-prone baseline: same loop shape, but
bands live in the full ambient space, gradients hit raw weights, and a
one-vs-all linear head is trained jointly (previous classes' rows frozen).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .bound import BoundTracker, ProbeSet, record_iteration
from .classifiers import ClassifierBank, LinearHead
from .errors import DimensionError, FfnbError
from .initializers import InitAccumulators, coding_matrix, mono_task_init, multi_task_init
from .linalg import frob_norm
from .network import (
    MomentAccumulator,
    PPolicy,
    ResidualBasis,
    _layer_apply,
    activation_fn,
    expand_for_task,
    forward,
    forward_cached,
    project_gradient,
    residual_basis,
)

__all__ = [
    "TrainConfig",
    "EpochTrace",
    "Accumulators",
    "TrainResult",
    "hinge_loss",
    "backward",
    "lr_step",
    "train_task_ffnb",
    "train_task_naive",
]


@dataclass
class TrainConfig:
    """Optimization and architecture knobs for one run.

    The first block mirrors the benchmark settings (250 epochs, batch 50,
    momentum 0.9, multiplicative lr rule); the second holds the ablation
    switches.  `epsilon=None` means the relative shrinkage default.
    """

    epochs: int = 250
    batch_size: int = 50
    momentum: float = 0.9
    lr0: float = 0.05
    lr_factor: float = 0.99
    weight_decay: float = 1e-8
    band_size: int = 3
    n_feature_layers: int = 3
    activation: str = "relu"
    p_policy: PPolicy = field(default_factory=PPolicy)
    gamma: float = 1e-2
    epsilon: float = None
    seed: int = 0

    init_mode: str = "multi"  # multi | mono | rand
    head_mode: str = "fda"  # fda | one_vs_all
    null_space: bool = True
    heteroscedastic: bool = True
    no_bias: bool = False
    refresh_every_batch: bool = False
    center_pca: bool = False
    prev_only_aggregation: bool = False
    probe_size: int = 64
    record_per_iteration: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.init_mode not in ("multi", "mono", "rand"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.head_mode not in ("fda", "one_vs_all"):
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        activation_fn(self.activation)


@dataclass
class EpochTrace:
    epoch: int
    loss: float
    lr: float
    alpha_norms: list  # per layer, ‖α‖_F of the current band
    beta_norms: list  # per layer, ‖Φ_r.T ψ(probe)‖_F; [] when no previous task


@dataclass
class Accumulators:
    """Per-layer moment and init accumulators carried across tasks."""

    moments: list
    inits: list

    @classmethod
    def create(cls, d0, n_feature_layers, band_size, gamma):
        moments, inits = [], []
        for i in range(n_feature_layers):
            dim = d0 if i == 0 else 0
            moments.append(MomentAccumulator.empty(i + 1, dim))
            inits.append(InitAccumulators.empty(i + 1, dim, band_size, gamma))
        return cls(moments=moments, inits=inits)


@dataclass
class TrainResult:
    traces: list  # EpochTrace per epoch
    tracker: object  # BoundTracker or None (first task has nothing to forget)
    probe: object  # ProbeSet or None


def task_rng(seed, task_id):
    """Per-task generator; derivation depends only on (seed, task_id)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(task_id,)))


def hinge_loss(scores, label_rows, margin=1.0):
    """Multiclass hinge over aggregated class scores.

    E = mean over samples of Σ_c max(0, margin − y_c s_c) with y_c = +1 for
    the true class and −1 otherwise.  Returns (E, dE/dscores); the
    subgradient at exactly-margin points is 0.

    Parameters
    ----------
    scores : (n_classes, n)
    label_rows : (n,) row index of each sample's true class
    """
    scores = np.asarray(scores, dtype=np.float64)
    label_rows = np.asarray(label_rows)
    n = scores.shape[1]
    if label_rows.shape != (n,):
        raise DimensionError("one label per column of scores required")
    y = -np.ones_like(scores)
    y[label_rows, np.arange(n)] = 1.0
    viol = margin - y * scores
    active = viol > 0
    loss = float(viol[active].sum()) / n
    grad = np.where(active, -y, 0.0) / n
    return loss, grad


def lr_step(lr, loss_history, factor):
    """Multiplicative learning-rate rule on the loss's speed of change.

    speed = |loss[e] − loss[e−1]|; a strict speed increase multiplies lr by
    `factor`, otherwise divides.  Fewer than two entries keep lr; with
    exactly two, the previous speed counts as 0.
    """
    if len(loss_history) < 2:
        return lr
    speed = abs(loss_history[-1] - loss_history[-2])
    prev_speed = abs(loss_history[-2] - loss_history[-3]) if len(loss_history) >= 3 else 0.0
    return lr * factor if speed > prev_speed else lr / factor


def _head_dpsi(head, dscores):
    return head.weights.T @ dscores


def _bank_dpsi(bank, psi, dscores):
    """Backprop aggregated-score gradients through the tanh pair scores."""
    index = {c: i for i, c in enumerate(bank.class_order)}
    dpsi = np.zeros_like(psi)
    for (pos, neg), h in bank.pairs.items():
        d = h.w.shape[0]
        s = bank.pair_score(h, psi[:d])
        coeff = dscores[index[pos]].copy()
        if not bank.prev_only:
            coeff -= dscores[index[neg]]
        dz = coeff * (1.0 - s * s)
        dpsi[:d] += np.outer(h.w, dz)
    return dpsi


def backward(net, classifier, acts, preacts, dscores, task):
    """Reverse-mode gradients for the current task's band weights.

    Parameters
    ----------
    net : FfnbNetwork
    classifier : ClassifierBank or LinearHead (maps ψ_K to class scores)
    acts, preacts : forward_cached output for the batch
    dscores : (n_classes, n) gradient of the loss w.r.t. class scores
    task : current task id

    Returns
    -------
    (band_grads, head_grad)
        band_grads: list over layers of dE/dW for the current band (raw
        weight space; project with the band's basis before updating α).
        head_grad: dE/dW for a LinearHead, or None for the bank (pair
        hyperplanes are refitted in closed form, not descended).
    """
    if isinstance(classifier, LinearHead):
        dpsi = _head_dpsi(classifier, dscores)
        head_grad = dscores @ acts[-1].T
    else:
        dpsi = _bank_dpsi(classifier, acts[-1], dscores)
        head_grad = None
    g, dg = activation_fn(net.activation)
    band_grads = [None] * len(net.feature_layers)
    for i in range(len(net.feature_layers) - 1, -1, -1):
        layer = net.feature_layers[i]
        dz = dpsi * dg(preacts[i], acts[i + 1])
        for band in layer.bands:
            if band.task == task:
                rows = layer.band_rows(band)
                band_grads[i] = dz[rows] @ acts[i].T
        if i > 0:
            dprev = np.zeros_like(acts[i])
            for band in layer.bands:
                rows = layer.band_rows(band)
                dprev[: band.in_dim] += band.weights().T @ dz[rows]
            dpsi = dprev
    return band_grads, head_grad


def _label_rows(class_order, labels):
    index = {c: i for i, c in enumerate(class_order)}
    return np.array([index[int(c)] for c in labels], dtype=np.int64)


def _rand_alpha(rng, shape):
    return rng.standard_normal(shape) / math.sqrt(shape[1])


def _refresh_bank(net, bank, x, labels, classes):
    """Recompute current classes' stats from scratch and refit their pairs."""
    psi = forward(net, x)[-1]
    bank.reset_stats(classes)
    bank.update_stats(psi, labels)
    bank.refresh_pairs(classes)


def train_task_ffnb(net, bank, task, config, accumulators, probe_features=None):
    """Train one task without touching anything previous tasks learned.

    Steps: residual bases from accumulated moments (at post-expansion input
    widths), expansion, closed-form ridge α init (mono, multi, or rand per
    config), minibatch SGD with momentum on current α via projected
    gradients, per-epoch classifier refresh, then accumulator updates with
    post-training activations and freezing of the new bands.

    Parameters
    ----------
    net, bank, accumulators : mutated in place
    task : Task
    probe_features : dict task_id -> (d0, m) retained features of previous
        tasks; enables bound tracking.  None or empty disables it.

    Returns
    -------
    TrainResult
    """
    t = task.id
    rng = task_rng(config.seed, t)
    x = task.train_matrix()
    labels = task.train_labels()
    n = x.shape[1]
    g, _ = activation_fn(net.activation)
    use_fda = config.head_mode == "fda"

    old_dims = [layer.out_dim for layer in net.feature_layers]

    # Residual bases at post-expansion input widths: grow accumulators first;
    # never-observed coordinates carry zero variance and land in the residual.
    bases = {}
    for i, layer in enumerate(net.feature_layers):
        in_dim = net.d0 if i == 0 else net.feature_layers[i - 1].out_dim + config.band_size
        accumulators.moments[i].grow_to(in_dim)
        accumulators.inits[i].grow_to(in_dim)
        if config.null_space:
            bases[layer.index] = residual_basis(
                accumulators.moments[i], config.p_policy, center=config.center_pca
            )
        else:
            bases[layer.index] = ResidualBasis.identity(layer.index, in_dim)
    expand_for_task(net, t, config.band_size, bases)

    if use_fda:
        bank.grow_to(net.out_dim)
        bank.add_classes(task.classes, net.out_dim)

    # Closed-form init, layerwise: layer ℓ's targets are regressed on
    # activations that already include the initialized bands below it.
    coding = coding_matrix(labels, task.classes, config.band_size)
    psi = x
    for i, layer in enumerate(net.feature_layers):
        band = layer.bands[-1]
        if config.init_mode == "rand":
            band.set_alpha(_rand_alpha(rng, band.alpha.shape))
        elif config.init_mode == "mono":
            band.set_alpha(mono_task_init(psi, band.basis, coding, config.gamma))
        else:
            staged = accumulators.inits[i].copy()
            staged.begin_band(config.band_size)
            staged.ingest(psi, coding)
            band.set_alpha(multi_task_init(staged, band.basis))
        psi = g(_layer_apply(layer, psi))

    if use_fda:
        classifier = bank
        _refresh_bank(net, bank, x, labels, task.classes)
    else:
        classifier = bank  # LinearHead passed in place of the bank
        classifier.expand(task.classes, net.out_dim, np.zeros((len(task.classes), net.out_dim)))

    probe = None
    tracker = None
    if probe_features:
        probe = ProbeSet.capture(net, probe_features)
        probe.old_dims = old_dims
        tracker = BoundTracker.start(net, t, probe)

    current_bands = [layer.bands[-1] for layer in net.feature_layers]
    buffers = [np.zeros_like(b.alpha) for b in current_bands]
    head_buffer = None if use_fda else np.zeros_like(classifier.weights)
    lr = config.lr0
    losses = []
    traces = []
    rows_all = _label_rows(classifier.class_order, labels)

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            acts, preacts = forward_cached(net, x[:, idx])
            scores = classifier.score_matrix(acts[-1])
            loss, dscores = hinge_loss(scores, rows_all[idx])
            band_grads, head_grad = backward(net, classifier, acts, preacts, dscores, t)
            for i, band in enumerate(current_bands):
                galpha = project_gradient(band_grads[i], band.basis)
                galpha += config.weight_decay * band.alpha
                buffers[i] = config.momentum * buffers[i] + galpha
                band.set_alpha(band.alpha - lr * buffers[i])
            if head_grad is not None:
                mask = np.zeros_like(head_grad)
                mask[classifier.trainable_rows] = 1.0
                head_buffer = config.momentum * head_buffer + head_grad * mask
                classifier.weights = classifier.weights - lr * head_buffer
            batch_losses.append(loss)
            if use_fda and config.refresh_every_batch:
                _refresh_bank(net, bank, x, labels, task.classes)
            if tracker is not None and config.record_per_iteration:
                record_iteration(tracker, net, probe)
        if use_fda and not config.refresh_every_batch:
            _refresh_bank(net, bank, x, labels, task.classes)
        if tracker is not None and not config.record_per_iteration:
            record_iteration(tracker, net, probe)
        losses.append(float(np.mean(batch_losses)))
        traces.append(
            EpochTrace(
                epoch=epoch,
                loss=losses[-1],
                lr=lr,
                alpha_norms=[frob_norm(b.alpha) for b in current_bands],
                beta_norms=[math.sqrt(v) for v in tracker.beta2[-1]] if tracker else [],
            )
        )
        lr = lr_step(lr, losses, config.lr_factor)

    # Post-training bookkeeping: fold this task's final activations into the
    # accumulators exactly once, then freeze everything it owns.
    final_acts = forward(net, x)
    for i in range(len(net.feature_layers)):
        accumulators.moments[i].ingest(final_acts[i])
        accumulators.inits[i].begin_band(config.band_size)
        accumulators.inits[i].ingest(final_acts[i], coding)
    for band in current_bands:
        band.freeze()
    if use_fda:
        bank.freeze_classes(task.classes)
    return TrainResult(traces=traces, tracker=tracker, probe=probe)


def train_task_naive(net, head, task, config):
    """Forgetting-prone baseline: full-space bands, jointly trained linear head.

    Same loop shape as the projected trainer, but bands are free in the whole
    ambient space (identity basis, random init) and classification is a
    one-vs-all linear head whose previous-class rows stay frozen.

    Returns
    -------
    TrainResult (tracker and probe are always None)
    """
    t = task.id
    rng = task_rng(config.seed, t)
    x = task.train_matrix()
    labels = task.train_labels()
    n = x.shape[1]

    bases = {}
    for i, layer in enumerate(net.feature_layers):
        in_dim = net.d0 if i == 0 else net.feature_layers[i - 1].out_dim + config.band_size
        bases[layer.index] = ResidualBasis.identity(layer.index, in_dim)
    expand_for_task(net, t, config.band_size, bases)
    current_bands = [layer.bands[-1] for layer in net.feature_layers]
    for band in current_bands:
        band.set_alpha(_rand_alpha(rng, band.alpha.shape))
    head.expand(task.classes, net.out_dim, np.zeros((len(task.classes), net.out_dim)))

    buffers = [np.zeros_like(b.alpha) for b in current_bands]
    head_buffer = np.zeros_like(head.weights)
    lr = config.lr0
    losses = []
    traces = []
    rows_all = _label_rows(head.class_order, labels)

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            acts, preacts = forward_cached(net, x[:, idx])
            scores = head.score_matrix(acts[-1])
            loss, dscores = hinge_loss(scores, rows_all[idx])
            band_grads, head_grad = backward(net, head, acts, preacts, dscores, t)
            for i, band in enumerate(current_bands):
                galpha = project_gradient(band_grads[i], band.basis)
                galpha += config.weight_decay * band.alpha
                buffers[i] = config.momentum * buffers[i] + galpha
                band.set_alpha(band.alpha - lr * buffers[i])
            mask = np.zeros_like(head_grad)
            mask[head.trainable_rows] = 1.0
            head_buffer = config.momentum * head_buffer + head_grad * mask
            head.weights = head.weights - lr * head_buffer
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        traces.append(
            EpochTrace(
                epoch=epoch,
                loss=losses[-1],
                lr=lr,
                alpha_norms=[frob_norm(b.alpha) for b in current_bands],
                beta_norms=[],
            )
        )
        lr = lr_step(lr, losses, config.lr_factor)

    for band in current_bands:
        band.freeze()
    return TrainResult(traces=traces, tracker=None, probe=None)
