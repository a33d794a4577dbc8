"""Dynamically expanding feature sub-network with per-task null-space bands.

Layer ℓ maps ψ_{ℓ-1} to ψ_ℓ = g(W_ℓ ψ_{ℓ-1}).  W_ℓ is stacked from per-task
bands; the band added for task t is reparametrized as

    W_{ℓ,t} = α_{ℓ,t} · Φ_r.T

where Φ_r holds the trailing (lowest-variance) eigenvectors of the second
moment of previous tasks' activations at the layer input.  Training moves
only α, so W_{ℓ,t} can never leave the null-space of what earlier tasks
expressed, and bands of closed tasks are frozen outright.

Batches are column-major throughout this package: shape (dim, n_samples).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    EmptyNullSpaceError,
    FrozenUpdateError,
    NumericError,
)
from .linalg import sym_eigen

__all__ = [
    "ACTIVATIONS",
    "activation_fn",
    "PPolicy",
    "ResidualBasis",
    "MomentAccumulator",
    "TaskBand",
    "FeatureLayer",
    "FfnbNetwork",
    "forward",
    "forward_cached",
    "accumulate_moments",
    "residual_basis",
    "expand_for_task",
    "effective_weights",
    "project_gradient",
]


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z, a):
    return (z > 0).astype(np.float64)


def _dtanh(z, a):
    return 1.0 - a * a


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _dsigmoid(z, a):
    return a * (1.0 - a)


def _linear(z):
    return z


def _dlinear(z, a):
    return np.ones_like(z)


# name -> (g, g') with g' taking (pre-activation, activation); all 1-Lipschitz.
# "linear" is a test hook for exact-stability checks, not a benchmark setting.
ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "tanh": (np.tanh, _dtanh),
    "sigmoid": (_sigmoid, _dsigmoid),
    "linear": (_linear, _dlinear),
}


def activation_fn(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}"
        ) from None


@dataclass(frozen=True)
class PPolicy:
    """Rule for choosing the retained dimension p at each layer.

    kind:
      - "fixed": retain exactly `value` principal axes at the input layer;
        deeper (expanding) layers fall back to variance_ratio(0.95) because
        their widths start far below any table-scale p.
      - "variance_ratio": smallest p whose leading eigenvalues capture
        >= `value` of total variance (default 0.95).
      - "exact_rank": p = numerical rank, eigenvalues > `value` * lambda_max;
        used by exact-stability tests where the null-space must be literal.
    """

    kind: str = "variance_ratio"
    value: float = 0.95

    def __post_init__(self):
        if self.kind not in ("fixed", "variance_ratio", "exact_rank"):
            raise ValueError(f"unknown p policy kind {self.kind!r}")


@dataclass
class ResidualBasis:
    """Frozen orthonormal basis at a layer input, split into retained/residual."""

    layer: int
    full_basis: np.ndarray  # (d, d), columns by descending variance
    p: int  # retained leading axes; residual = columns p..d-1

    @property
    def dim(self):
        return self.full_basis.shape[0]

    @property
    def residual(self):
        """Columns spanning the previous-task null-space: (d, d - p)."""
        return self.full_basis[:, self.p :]

    @property
    def residual_dim(self):
        return self.dim - self.p

    @classmethod
    def identity(cls, layer, dim):
        return cls(layer=layer, full_basis=np.eye(dim), p=0)


@dataclass
class MomentAccumulator:
    """Running raw second moment of activations entering one layer.

    second_moment = sum over seen samples of psi psi.T; mean_sum and count
    support the optional centered variant.  Old contributions are never
    revisited; dimension growth zero-pads (old data express exactly 0 on
    coordinates that did not exist when they were seen — asserted in tests,
    not assumed).
    """

    layer: int
    second_moment: np.ndarray
    mean_sum: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, layer, dim):
        return cls(layer, np.zeros((dim, dim)), np.zeros(dim), 0)

    @property
    def dim(self):
        return self.mean_sum.shape[0]

    def ingest(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[0] != self.dim:
            raise DimensionError(
                f"layer {self.layer} accumulator is {self.dim}-dim, "
                f"batch has shape {batch.shape}"
            )
        if not np.isfinite(batch).all():
            raise NumericError("non-finite activations in moment accumulator")
        self.second_moment += batch @ batch.T
        self.mean_sum += batch.sum(axis=1)
        self.count += batch.shape[1]

    def grow_to(self, dim):
        if dim < self.dim:
            raise DimensionError(f"cannot shrink accumulator from {self.dim} to {dim}")
        if dim == self.dim:
            return
        old = self.dim
        sm = np.zeros((dim, dim))
        sm[:old, :old] = self.second_moment
        ms = np.zeros(dim)
        ms[:old] = self.mean_sum
        self.second_moment = sm
        self.mean_sum = ms

    def copy(self):
        return MomentAccumulator(
            self.layer, self.second_moment.copy(), self.mean_sum.copy(), self.count
        )


def accumulate_moments(acc, activations):
    """Fold a batch of layer-input activations into the accumulator."""
    acc.ingest(activations)
    return acc


def residual_basis(acc, policy, center=False):
    """Eigendecompose accumulated moments and split off the residual basis.

    With an empty accumulator (first task) the basis is the identity with
    p = 0: no previous task constrains anything yet.  Otherwise eigenvectors
    are ordered by descending eigenvalue and `policy` picks how many leading
    axes to retain (exclude from the trainable null-space).

    Raises
    ------
    EmptyNullSpaceError
        If the policy retains every dimension (p >= d).
    """
    d = acc.dim
    if acc.count == 0:
        return ResidualBasis.identity(acc.layer, d)
    s = acc.second_moment
    if center:
        mu = acc.mean_sum / acc.count
        s = s - acc.count * np.outer(mu, mu)
    eig = sym_eigen(s)
    lam = np.clip(eig.eigenvalues, 0.0, None)
    if policy.kind == "fixed":
        # table-style sweeps pin p on the input layer only
        p = int(policy.value) if acc.layer == 1 else _variance_p(lam, 0.95)
    elif policy.kind == "variance_ratio":
        p = _variance_p(lam, policy.value)
    else:  # exact_rank
        lmax = lam[0] if lam.size else 0.0
        p = 0 if lmax <= 0 else int(np.sum(lam > policy.value * lmax))
    if p >= d:
        raise EmptyNullSpaceError(
            f"layer {acc.layer}: retaining p={p} of d={d} leaves no free dimensions"
        )
    return ResidualBasis(layer=acc.layer, full_basis=eig.eigenvectors, p=p)


def _variance_p(lam, theta):
    total = lam.sum()
    if total <= 0.0:
        return 0
    frac = np.cumsum(lam) / total
    return int(np.searchsorted(frac, theta) + 1)


@dataclass
class TaskBand:
    """One task's block of output neurons at one layer."""

    task: int
    alpha: np.ndarray  # (band_size, residual_dim), the free coordinates
    basis: ResidualBasis  # frozen at creation; defines the reparametrization
    frozen: bool = False

    @property
    def band_size(self):
        return self.alpha.shape[0]

    @property
    def in_dim(self):
        return self.basis.dim

    def weights(self):
        return effective_weights(self, self.basis)

    def set_alpha(self, alpha):
        if self.frozen:
            raise FrozenUpdateError(
                f"band for task {self.task} is frozen; alpha cannot change"
            )
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != self.alpha.shape:
            raise DimensionError(
                f"alpha shape {alpha.shape} != band shape {self.alpha.shape}"
            )
        self.alpha = alpha

    def freeze(self):
        self.frozen = True


@dataclass
class FeatureLayer:
    index: int  # 1-based
    bands: list = field(default_factory=list)

    @property
    def out_dim(self):
        return sum(b.band_size for b in self.bands)

    def band_rows(self, band):
        """Output-row slice occupied by `band` within this layer."""
        start = 0
        for b in self.bands:
            if b is band:
                return slice(start, start + b.band_size)
            start += b.band_size
        raise ValueError("band does not belong to this layer")


@dataclass
class FfnbNetwork:
    """Feature layers 1..K over d0 inputs; classifier head lives elsewhere."""

    d0: int
    activation: str
    feature_layers: list

    @classmethod
    def create(cls, d0, n_feature_layers, activation):
        activation_fn(activation)  # validate eagerly
        layers = [FeatureLayer(index=i + 1) for i in range(n_feature_layers)]
        return cls(d0=d0, activation=activation, feature_layers=layers)

    def in_dim(self, layer_index):
        """Input dimension of layer `layer_index` (1-based) right now."""
        if layer_index == 1:
            return self.d0
        return self.feature_layers[layer_index - 2].out_dim

    @property
    def out_dim(self):
        return self.feature_layers[-1].out_dim

    def current_bands(self, task):
        return [
            (layer, band)
            for layer in self.feature_layers
            for band in layer.bands
            if band.task == task
        ]


def effective_weights(band, basis):
    """Materialize W = alpha · Φ_r.T for one band.

    Every row of the result is orthogonal to the retained principal axes by
    construction.
    """
    if band.alpha.shape[1] != basis.residual_dim:
        raise DimensionError(
            f"alpha has {band.alpha.shape[1]} columns, basis residual is "
            f"{basis.residual_dim}-dimensional"
        )
    return band.alpha @ basis.residual.T


def project_gradient(g_w, basis):
    """Chain rule through the W = α·Φ_rᵀ reparametrization: dE/dα = dE/dW · Φ_r."""
    g_w = np.asarray(g_w, dtype=np.float64)
    if g_w.ndim != 2 or g_w.shape[1] != basis.dim:
        raise DimensionError(
            f"weight gradient shape {g_w.shape} does not match basis dim {basis.dim}"
        )
    return g_w @ basis.residual


def _layer_apply(layer, psi_prev):
    """Pre-activations of one layer: stack each band's W @ (its slice of input).

    A band created when the layer input was d' columns reads only the first d'
    coordinates of psi_prev; coordinates appended later belong to newer tasks.
    """
    n = psi_prev.shape[1]
    z = np.empty((layer.out_dim, n))
    row = 0
    for band in layer.bands:
        z[row : row + band.band_size] = band.weights() @ psi_prev[: band.in_dim]
        row += band.band_size
    return z


def forward(net, x):
    """All layer activations [ψ_0, ψ_1, ..., ψ_K] for a (d0, n) batch."""
    return forward_cached(net, x)[0]


def forward_cached(net, x):
    """Forward pass returning (activations, pre-activations) for backprop."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != net.d0:
        raise DimensionError(f"input shape {x.shape}, expected ({net.d0}, n)")
    g, _ = activation_fn(net.activation)
    acts = [x]
    preacts = []
    for layer in net.feature_layers:
        z = _layer_apply(layer, acts[-1])
        preacts.append(z)
        acts.append(g(z))
    return acts, preacts


def expand_for_task(net, task, band_size, bases):
    """Append one zero-initialized band per layer for a new task.

    `bases` maps 1-based layer index to the ResidualBasis frozen for this
    task.  Basis dimensions must match each layer's post-expansion input
    width (shallower layers grow first, so a deep band sees same-task band
    outputs from the layer below).

    Raises
    ------
    FrozenUpdateError
        If any existing band is not frozen (a task is still open).
    EmptyNullSpaceError
        If any layer has no residual directions left.
    """
    for layer in net.feature_layers:
        for band in layer.bands:
            if not band.frozen:
                raise FrozenUpdateError(
                    f"layer {layer.index}: band for task {band.task} is still open"
                )
    for layer in net.feature_layers:
        expected = net.in_dim(layer.index)
        basis = bases[layer.index]
        if basis.dim != expected:
            raise DimensionError(
                f"layer {layer.index}: basis dim {basis.dim}, expected {expected}"
            )
        if basis.residual_dim < 1:
            raise EmptyNullSpaceError(
                f"layer {layer.index}: no residual directions for task {task}"
            )
        band = TaskBand(
            task=task,
            alpha=np.zeros((band_size, basis.residual_dim)),
            basis=basis,
            frozen=False,
        )
        layer.bands.append(band)
    return net
