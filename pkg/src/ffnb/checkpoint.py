"""Versioned checkpointing of a full run: model, accumulators, report data.

Everything lives in one JSON container so checkpoints stay human-inspectable
at desk scale.  Matrices are base64-encoded little-endian float64; the
payload is hashed (sha256 over its canonical JSON encoding) so truncation or
editing is detected, and unknown format versions are refused outright.

Randomness is captured by derivation rather than by raw generator state:
every task's generator is seeded by (run seed, task id), so `seed` plus
`next_task` reproduce the exact stream an uninterrupted run would have used.
"""

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .classifiers import ClassifierBank, ClassStats, LinearHead, PairwiseHyperplane
from .errors import CheckpointError
from .initializers import InitAccumulators
from .network import FeatureLayer, FfnbNetwork, MomentAccumulator, ResidualBasis, TaskBand
from .training import Accumulators

__all__ = ["FORMAT_VERSION", "ReportData", "RunState", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = "ffnb-checkpoint-v1"


@dataclass
class ReportData:
    """Pure-data evaluation results accumulated task by task.

    Carried inside checkpoints so a resumed run reassembles the identical
    final report (accuracy of the model after task t is only measurable at
    task t).
    """

    matrix: list = field(default_factory=list)  # rows[t] = [[correct, total], ...]
    union: list = field(default_factory=list)  # per checkpoint [correct, total]
    param_counts: list = field(default_factory=list)
    p_history: list = field(default_factory=list)  # per task: per-layer p, or None
    task_classes: list = field(default_factory=list)
    bound_rows: list = field(default_factory=list)  # flat dicts, see metrics
    final_bound: dict = field(default_factory=dict)  # task -> {bound, drift}


@dataclass
class RunState:
    """Everything mutable a sequential run carries from task to task."""

    method: str
    seed: int
    net: FfnbNetwork
    bank: ClassifierBank  # None when the run uses a linear head
    head: LinearHead  # None when the run uses the pairwise bank
    accumulators: Accumulators  # None for naive/multitask
    probe_store: dict = field(default_factory=dict)  # task_id -> (d0, m) features
    next_task: int = 0
    report: ReportData = field(default_factory=ReportData)
    config_snapshot: dict = field(default_factory=dict)

    @property
    def classifier(self):
        return self.bank if self.bank is not None else self.head


def _enc(arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _dec(obj):
    try:
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return arr.reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad matrix encoding: {exc}") from exc


def _net_payload(net):
    return {
        "d0": net.d0,
        "activation": net.activation,
        "layers": [
            {
                "index": layer.index,
                "bands": [
                    {
                        "task": b.task,
                        "frozen": b.frozen,
                        "alpha": _enc(b.alpha),
                        "basis": {
                            "layer": b.basis.layer,
                            "p": b.basis.p,
                            "full_basis": _enc(b.basis.full_basis),
                        },
                    }
                    for b in layer.bands
                ],
            }
            for layer in net.feature_layers
        ],
    }


def _net_restore(obj):
    layers = []
    for lp in obj["layers"]:
        bands = [
            TaskBand(
                task=bp["task"],
                alpha=_dec(bp["alpha"]),
                basis=ResidualBasis(
                    layer=bp["basis"]["layer"],
                    full_basis=_dec(bp["basis"]["full_basis"]),
                    p=bp["basis"]["p"],
                ),
                frozen=bp["frozen"],
            )
            for bp in lp["bands"]
        ]
        layers.append(FeatureLayer(index=lp["index"], bands=bands))
    return FfnbNetwork(d0=obj["d0"], activation=obj["activation"], feature_layers=layers)


def _bank_payload(bank):
    return {
        "epsilon": bank.epsilon,
        "heteroscedastic": bank.heteroscedastic,
        "use_bias": bank.use_bias,
        "prev_only": bank.prev_only,
        "class_order": list(bank.class_order),
        "stats": [
            {
                "class_id": st.class_id,
                "count": st.count,
                "frozen": st.frozen,
                "sum_x": _enc(st.sum_x),
                "sum_outer": _enc(st.sum_outer),
            }
            for st in (bank.stats[c] for c in bank.class_order)
        ],
        "pairs": [
            {"pos": pos, "neg": neg, "bias": h.bias, "w": _enc(h.w)}
            for (pos, neg), h in sorted(bank.pairs.items())
        ],
    }


def _bank_restore(obj):
    bank = ClassifierBank(
        epsilon=obj["epsilon"],
        heteroscedastic=obj["heteroscedastic"],
        use_bias=obj["use_bias"],
        prev_only=obj["prev_only"],
    )
    bank.class_order = list(obj["class_order"])
    for sp in obj["stats"]:
        st = ClassStats(
            class_id=sp["class_id"],
            sum_x=_dec(sp["sum_x"]).reshape(-1),
            sum_outer=_dec(sp["sum_outer"]),
            count=sp["count"],
            frozen=sp["frozen"],
        )
        bank.stats[st.class_id] = st
    for pp in obj["pairs"]:
        bank.pairs[(pp["pos"], pp["neg"])] = PairwiseHyperplane(
            pos=pp["pos"], neg=pp["neg"], w=_dec(pp["w"]).reshape(-1), bias=pp["bias"]
        )
    return bank


def _state_payload(state):
    return {
        "method": state.method,
        "seed": state.seed,
        "next_task": state.next_task,
        "rng": {"scheme": "seed-sequence(seed, spawn_key=(task,))", "seed": state.seed},
        "net": _net_payload(state.net),
        "bank": None if state.bank is None else _bank_payload(state.bank),
        "head": None
        if state.head is None
        else {
            "weights": _enc(state.head.weights),
            "class_order": list(state.head.class_order),
            "trainable_rows": list(state.head.trainable_rows),
        },
        "accumulators": None
        if state.accumulators is None
        else {
            "moments": [
                {
                    "layer": m.layer,
                    "count": m.count,
                    "second_moment": _enc(m.second_moment),
                    "mean_sum": _enc(m.mean_sum),
                }
                for m in state.accumulators.moments
            ],
            "inits": [
                {
                    "layer": a.layer,
                    "gamma": a.gamma,
                    "gram": _enc(a.gram),
                    "cross": _enc(a.cross),
                }
                for a in state.accumulators.inits
            ],
        },
        "probe_store": [
            {"task": tid, "features": _enc(state.probe_store[tid])}
            for tid in sorted(state.probe_store)
        ],
        "report": {
            "matrix": state.report.matrix,
            "union": state.report.union,
            "param_counts": state.report.param_counts,
            "p_history": state.report.p_history,
            "task_classes": state.report.task_classes,
            "bound_rows": state.report.bound_rows,
            "final_bound": {str(k): v for k, v in state.report.final_bound.items()},
        },
        "config_snapshot": state.config_snapshot,
    }


def _state_restore(payload):
    rep = payload["report"]
    report = ReportData(
        matrix=rep["matrix"],
        union=rep["union"],
        param_counts=rep["param_counts"],
        p_history=rep["p_history"],
        task_classes=rep["task_classes"],
        bound_rows=rep["bound_rows"],
        final_bound={int(k): v for k, v in rep["final_bound"].items()},
    )
    head = None
    if payload["head"] is not None:
        hp = payload["head"]
        head = LinearHead(
            weights=_dec(hp["weights"]),
            class_order=list(hp["class_order"]),
            trainable_rows=list(hp["trainable_rows"]),
        )
    accumulators = None
    if payload["accumulators"] is not None:
        ap = payload["accumulators"]
        moments = [
            MomentAccumulator(
                layer=m["layer"],
                second_moment=_dec(m["second_moment"]),
                mean_sum=_dec(m["mean_sum"]).reshape(-1),
                count=m["count"],
            )
            for m in ap["moments"]
        ]
        inits = [
            InitAccumulators(
                layer=a["layer"], gram=_dec(a["gram"]), cross=_dec(a["cross"]), gamma=a["gamma"]
            )
            for a in ap["inits"]
        ]
        accumulators = Accumulators(moments=moments, inits=inits)
    return RunState(
        method=payload["method"],
        seed=payload["seed"],
        net=_net_restore(payload["net"]),
        bank=None if payload["bank"] is None else _bank_restore(payload["bank"]),
        head=head,
        accumulators=accumulators,
        probe_store={p["task"]: _dec(p["features"]) for p in payload["probe_store"]},
        next_task=payload["next_task"],
        report=report,
        config_snapshot=payload["config_snapshot"],
    )


def _canonical(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def save_checkpoint(state, path):
    """Write the run state to `path` with format tag and content hash."""
    payload = _state_payload(state)
    body = _canonical(payload)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"format_version": FORMAT_VERSION, "sha256": digest, "payload": payload},
            fh,
            sort_keys=True,
        )
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint; refuse unknown versions and corrupted content."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint (invalid JSON: {exc})") from exc
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    payload = obj.get("payload")
    digest = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if digest != obj.get("sha256"):
        raise CheckpointError(f"{path}: content hash mismatch, checkpoint corrupted")
    try:
        return _state_restore(payload)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint payload: {exc!r}") from exc
