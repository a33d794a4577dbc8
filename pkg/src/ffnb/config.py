"""Run-configuration schema: strict validation, defaults, dotted overrides.

A run config is a JSON object.  Unknown keys are rejected at every level (no
silent defaulting of misspelled keys); all errors are aggregated into one
message so a bad file is fixed in one pass.

Schema (defaults in parentheses):

    {
      "stream":  {"path": str, "format": "csv"|"json", "normalize": false}
                 or {"synth": {"n_tasks","classes_per_task","d0",
                               "n_per_class","separation","seed"?},
                     "normalize": false},
      "method":  "ffnb" | "naive" | "multitask"        ("ffnb"),
      "train":   {"epochs" (250), "batch_size" (50), "momentum" (0.9),
                  "lr0" (0.05), "lr_factor" (0.99), "weight_decay" (1e-8),
                  "band_size" (3), "n_feature_layers" (3),
                  "activation" (relu|tanh|sigmoid|linear, "relu"),
                  "gamma" (0.01), "epsilon" (null = relative shrinkage),
                  "init_mode" (null -> from flags.multi_task_init),
                  "head_mode" ("fda"), "null_space" (true)},
      "p_policy": {"kind": "variance_ratio", "theta": 0.95}
                  | {"kind": "fixed", "p": int}
                  | {"kind": "exact_rank", "rel_tol": 1e-9},
      "flags":   {"heteroscedastic" (true), "multi_task_init" (true),
                  "no_bias" (false), "refresh_every_batch" (false),
                  "center_pca" (false), "prev_only_aggregation" (false)},
      "bound":   {"record_per_iteration" (false), "probe_size" (64)},
      "output_dir": str | null,
      "save_checkpoint": true,
      "seed": 0
    }
"""

import copy
import json
from dataclasses import dataclass

from .errors import ConfigError
from .network import PPolicy
from .training import TrainConfig

__all__ = ["RunConfig", "validate", "apply_overrides", "load_config"]

_TOP_KEYS = {
    "stream",
    "method",
    "train",
    "p_policy",
    "flags",
    "bound",
    "output_dir",
    "save_checkpoint",
    "seed",
}
_STREAM_KEYS = {"path", "format", "synth", "normalize"}
_SYNTH_KEYS = {"n_tasks", "classes_per_task", "d0", "n_per_class", "separation", "seed"}
_TRAIN_KEYS = {
    "epochs",
    "batch_size",
    "momentum",
    "lr0",
    "lr_factor",
    "weight_decay",
    "band_size",
    "n_feature_layers",
    "activation",
    "gamma",
    "epsilon",
    "init_mode",
    "head_mode",
    "null_space",
}
_FLAG_KEYS = {
    "heteroscedastic",
    "multi_task_init",
    "no_bias",
    "refresh_every_batch",
    "center_pca",
    "prev_only_aggregation",
}
_BOUND_KEYS = {"record_per_iteration", "probe_size"}
_POLICY_KEYS = {
    "fixed": {"kind", "p"},
    "variance_ratio": {"kind", "theta"},
    "exact_rank": {"kind", "rel_tol"},
}

_TRAIN_DEFAULTS = {
    "epochs": 250,
    "batch_size": 50,
    "momentum": 0.9,
    "lr0": 0.05,
    "lr_factor": 0.99,
    "weight_decay": 1e-8,
    "band_size": 3,
    "n_feature_layers": 3,
    "activation": "relu",
    "gamma": 1e-2,
    "epsilon": None,
    "init_mode": None,
    "head_mode": "fda",
    "null_space": True,
}
_FLAG_DEFAULTS = {
    "heteroscedastic": True,
    "multi_task_init": True,
    "no_bias": False,
    "refresh_every_batch": False,
    "center_pca": False,
    "prev_only_aggregation": False,
}
_BOUND_DEFAULTS = {"record_per_iteration": False, "probe_size": 64}


@dataclass
class RunConfig:
    """Validated run configuration with every default materialized."""

    stream: dict
    method: str
    train: dict
    p_policy_spec: dict
    flags: dict
    bound: dict
    output_dir: str
    save_checkpoint: bool
    seed: int

    def snapshot(self):
        """JSON-serializable dict of the fully materialized config."""
        return {
            "stream": copy.deepcopy(self.stream),
            "method": self.method,
            "train": copy.deepcopy(self.train),
            "p_policy": copy.deepcopy(self.p_policy_spec),
            "flags": copy.deepcopy(self.flags),
            "bound": copy.deepcopy(self.bound),
            "output_dir": self.output_dir,
            "save_checkpoint": self.save_checkpoint,
            "seed": self.seed,
        }

    def p_policy(self):
        spec = self.p_policy_spec
        if spec["kind"] == "fixed":
            return PPolicy("fixed", spec["p"])
        if spec["kind"] == "variance_ratio":
            return PPolicy("variance_ratio", spec["theta"])
        return PPolicy("exact_rank", spec["rel_tol"])

    def train_config(self):
        """Assemble the TrainConfig handed to the training loops."""
        t = self.train
        init_mode = t["init_mode"]
        if init_mode is None:
            init_mode = "multi" if self.flags["multi_task_init"] else "mono"
        return TrainConfig(
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            momentum=t["momentum"],
            lr0=t["lr0"],
            lr_factor=t["lr_factor"],
            weight_decay=t["weight_decay"],
            band_size=t["band_size"],
            n_feature_layers=t["n_feature_layers"],
            activation=t["activation"],
            p_policy=self.p_policy(),
            gamma=t["gamma"],
            epsilon=t["epsilon"],
            seed=self.seed,
            init_mode=init_mode,
            head_mode=t["head_mode"],
            null_space=t["null_space"],
            heteroscedastic=self.flags["heteroscedastic"],
            no_bias=self.flags["no_bias"],
            refresh_every_batch=self.flags["refresh_every_batch"],
            center_pca=self.flags["center_pca"],
            prev_only_aggregation=self.flags["prev_only_aggregation"],
            probe_size=self.bound["probe_size"],
            record_per_iteration=self.bound["record_per_iteration"],
        )


def _check_keys(obj, allowed, where, errors):
    if not isinstance(obj, dict):
        errors.append(f"{where}: expected an object, got {type(obj).__name__}")
        return False
    unknown = sorted(set(obj) - allowed)
    if unknown:
        errors.append(f"{where}: unknown key(s) {', '.join(repr(k) for k in unknown)}")
    return True


def _num(obj, key, where, errors, kind=float, positive=False, nonneg=False, minimum=None):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{where}.{key}: expected a number, got {v!r}")
        return None
    if kind is int and int(v) != v:
        errors.append(f"{where}.{key}: expected an integer, got {v!r}")
        return None
    v = kind(v)
    if positive and v <= 0:
        errors.append(f"{where}.{key}: must be > 0, got {v}")
    if nonneg and v < 0:
        errors.append(f"{where}.{key}: must be >= 0, got {v}")
    if minimum is not None and v < minimum:
        errors.append(f"{where}.{key}: must be >= {minimum}, got {v}")
    return v


def _bool(obj, key, where, errors):
    v = obj.get(key)
    if not isinstance(v, bool):
        errors.append(f"{where}.{key}: expected true/false, got {v!r}")
        return None
    return v


def validate(raw):
    """Validate a parsed config dict into a RunConfig.

    Raises
    ------
    ConfigError
        With every problem found, one per line.
    """
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config", errors)

    # stream
    stream = copy.deepcopy(raw.get("stream"))
    if stream is None:
        errors.append("config.stream: required")
        stream = {}
    if _check_keys(stream, _STREAM_KEYS, "stream", errors):
        has_path = "path" in stream
        has_synth = "synth" in stream
        if has_path == has_synth:
            errors.append("stream: exactly one of 'path' or 'synth' is required")
        if has_path:
            stream.setdefault("format", "csv")
            if stream["format"] not in ("csv", "json"):
                errors.append(f"stream.format: must be csv or json, got {stream['format']!r}")
        if has_synth and _check_keys(stream["synth"], _SYNTH_KEYS, "stream.synth", errors):
            sy = stream["synth"]
            for k in ("n_tasks", "classes_per_task", "d0", "n_per_class"):
                if k not in sy:
                    errors.append(f"stream.synth.{k}: required")
                else:
                    _num(sy, k, "stream.synth", errors, kind=int, minimum=1)
            if "separation" not in sy:
                errors.append("stream.synth.separation: required")
            else:
                _num(sy, "separation", "stream.synth", errors, positive=True)
            if "seed" in sy:
                _num(sy, "seed", "stream.synth", errors, kind=int)
        if "normalize" in stream:
            _bool(stream, "normalize", "stream", errors)
        else:
            stream["normalize"] = False

    method = raw.get("method", "ffnb")
    if method not in ("ffnb", "naive", "multitask"):
        errors.append(f"config.method: must be ffnb, naive or multitask, got {method!r}")

    # train block
    train = dict(_TRAIN_DEFAULTS)
    raw_train = raw.get("train", {})
    if _check_keys(raw_train, _TRAIN_KEYS, "train", errors):
        train.update({k: raw_train[k] for k in raw_train.keys() & _TRAIN_KEYS})
    _num(train, "epochs", "train", errors, kind=int, minimum=1)
    _num(train, "batch_size", "train", errors, kind=int, minimum=1)
    mom = _num(train, "momentum", "train", errors, nonneg=True)
    if mom is not None and mom >= 1.0:
        errors.append(f"train.momentum: must be < 1, got {mom}")
    _num(train, "lr0", "train", errors, positive=True)
    lf = _num(train, "lr_factor", "train", errors, positive=True)
    if lf is not None and lf >= 1.0:
        errors.append(f"train.lr_factor: must be < 1, got {lf}")
    _num(train, "weight_decay", "train", errors, nonneg=True)
    _num(train, "band_size", "train", errors, kind=int, minimum=1)
    _num(train, "n_feature_layers", "train", errors, kind=int, minimum=1)
    if train["activation"] not in ("relu", "tanh", "sigmoid", "linear"):
        errors.append(f"train.activation: unknown activation {train['activation']!r}")
    _num(train, "gamma", "train", errors, positive=True)
    if train["epsilon"] is not None:
        _num(train, "epsilon", "train", errors, positive=True)
    if train["init_mode"] not in (None, "multi", "mono", "rand"):
        errors.append(f"train.init_mode: must be multi, mono or rand, got {train['init_mode']!r}")
    if train["head_mode"] not in ("fda", "one_vs_all"):
        errors.append(f"train.head_mode: must be fda or one_vs_all, got {train['head_mode']!r}")
    if not isinstance(train["null_space"], bool):
        errors.append(f"train.null_space: expected true/false, got {train['null_space']!r}")

    # p policy
    policy = copy.deepcopy(raw.get("p_policy", {"kind": "variance_ratio", "theta": 0.95}))
    if isinstance(policy, dict) and policy.get("kind") in _POLICY_KEYS:
        kind = policy["kind"]
        _check_keys(policy, _POLICY_KEYS[kind], "p_policy", errors)
        if kind == "fixed":
            if _num(policy, "p", "p_policy", errors, kind=int, nonneg=True) is None:
                policy["p"] = 0
        elif kind == "variance_ratio":
            policy.setdefault("theta", 0.95)
            th = _num(policy, "theta", "p_policy", errors, positive=True)
            if th is not None and th > 1.0:
                errors.append(f"p_policy.theta: must be <= 1, got {th}")
        else:
            policy.setdefault("rel_tol", 1e-9)
            _num(policy, "rel_tol", "p_policy", errors, positive=True)
    else:
        errors.append(
            "p_policy: must be an object with kind fixed | variance_ratio | exact_rank"
        )
        policy = {"kind": "variance_ratio", "theta": 0.95}

    # flags
    flags = dict(_FLAG_DEFAULTS)
    raw_flags = raw.get("flags", {})
    if _check_keys(raw_flags, _FLAG_KEYS, "flags", errors):
        for k in raw_flags.keys() & _FLAG_KEYS:
            v = _bool(raw_flags, k, "flags", errors)
            if v is not None:
                flags[k] = v
    if train["init_mode"] is not None and "multi_task_init" in raw_flags:
        implied = "multi" if flags["multi_task_init"] else "mono"
        if train["init_mode"] != implied and train["init_mode"] != "rand":
            errors.append(
                f"train.init_mode={train['init_mode']!r} contradicts "
                f"flags.multi_task_init={flags['multi_task_init']}"
            )

    # bound block
    bound = dict(_BOUND_DEFAULTS)
    raw_bound = raw.get("bound", {})
    if _check_keys(raw_bound, _BOUND_KEYS, "bound", errors):
        for k in raw_bound.keys() & _BOUND_KEYS:
            if k == "record_per_iteration":
                v = _bool(raw_bound, k, "bound", errors)
                if v is not None:
                    bound[k] = v
            else:
                v = _num(raw_bound, k, "bound", errors, kind=int, minimum=1)
                if v is not None:
                    bound[k] = v

    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        errors.append(f"config.output_dir: expected a string, got {output_dir!r}")
    save_checkpoint = raw.get("save_checkpoint", True)
    if not isinstance(save_checkpoint, bool):
        errors.append("config.save_checkpoint: expected true/false")
        save_checkpoint = True
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append(f"config.seed: expected an integer, got {seed!r}")
        seed = 0

    # cross-field: a fixed p must leave layer-1 residual directions
    if policy.get("kind") == "fixed" and "synth" in stream and isinstance(policy.get("p"), int):
        d0 = stream["synth"].get("d0")
        if isinstance(d0, int) and policy["p"] >= d0:
            errors.append(
                f"p_policy.p={policy['p']} with d0={d0}: empty null-space at layer 1"
            )

    if errors:
        raise ConfigError("\n".join(errors))
    return RunConfig(
        stream=stream,
        method=method,
        train=train,
        p_policy_spec=policy,
        flags=flags,
        bound=bound,
        output_dir=output_dir,
        save_checkpoint=save_checkpoint,
        seed=seed,
    )


def apply_overrides(raw, overrides):
    """Apply `key=value` strings at dotted paths; values parse as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, value = item.partition("=")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = path.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = parsed
    return out


def load_config(path, overrides=()):
    """Read a JSON config file, apply overrides, validate."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    return validate(raw)
