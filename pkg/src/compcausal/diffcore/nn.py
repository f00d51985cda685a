"""MLPs with optional batch-norm, a named parameter store, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, LoadError, NumericError
from . import tensor as T
from .tensor import Tape, Tensor

ACTIVATIONS = ("relu", "leaky_relu", "none")
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a fully connected network.

    ``num_hidden_layers == 0`` is a single linear map. ``batch_norm`` may be a
    bool (applied to every hidden layer) or one flag per hidden layer. The
    output layer is always linear.
    """

    input_dim: int
    output_dim: int
    hidden_dim: int = 150
    num_hidden_layers: int = 1
    activation: str = "relu"
    batch_norm: tuple = ()

    def __post_init__(self):
        if self.num_hidden_layers < 0:
            raise ConfigError("num_hidden_layers must be >= 0")
        if min(self.input_dim, self.output_dim) < 1 or (self.num_hidden_layers and self.hidden_dim < 1):
            raise ConfigError(f"non-positive layer width in {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        bn = self.batch_norm
        if isinstance(bn, bool):
            bn = (bn,) * self.num_hidden_layers
        elif not bn:
            bn = (False,) * self.num_hidden_layers
        bn = tuple(bool(b) for b in bn)
        if len(bn) != self.num_hidden_layers:
            raise ConfigError("batch_norm needs one flag per hidden layer")
        object.__setattr__(self, "batch_norm", bn)

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.num_hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["batch_norm"] = list(self.batch_norm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        d = dict(d)
        d["batch_norm"] = tuple(d.get("batch_norm", ()))
        return cls(**d)


@dataclass
class ParamStore:
    """Named parameters, non-trainable buffers and optimizer state."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def names(self, prefix: str | None = None) -> list[str]:
        if prefix is None:
            return list(self.params)
        return [n for n in self.params if n.startswith(prefix + ".")]

    def copy(self) -> "ParamStore":
        return ParamStore(
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            state={k: {s: a.copy() for s, a in v.items()} for k, v in self.state.items()},
            step=self.step,
        )

    def tape(self) -> Tape:
        return Tape(self.params)


def init_mlp(spec: MlpSpec, store: ParamStore, prefix: str, rng: np.random.Generator) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.

    A layer followed by batch-norm gets no bias: the batch mean cancels it and
    the batch-norm shift plays its role.
    """
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        bound = 1.0 / np.sqrt(fan_in)
        has_bn = i < spec.num_hidden_layers and spec.batch_norm[i]
        store.params[f"{prefix}.{i}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if not has_bn:
            store.params[f"{prefix}.{i}.bias"] = rng.uniform(-bound, bound, size=(1, fan_out))
        if has_bn:
            store.params[f"{prefix}.{i}.bn.gamma"] = np.ones((1, fan_out))
            store.params[f"{prefix}.{i}.bn.beta"] = np.zeros((1, fan_out))
            store.buffers[f"{prefix}.{i}.bn.running_mean"] = np.zeros((1, fan_out))
            store.buffers[f"{prefix}.{i}.bn.running_var"] = np.ones((1, fan_out))


def _p(store: ParamStore, tape: Tape | None, name: str):
    if name not in store.params:
        raise ConfigError(f"missing parameter {name!r}")
    return tape.param(name) if tape is not None else store.params[name]


def mlp_forward(
    spec: MlpSpec,
    store: ParamStore,
    x,
    mode: str = "eval",
    prefix: str = "mlp",
    tape: Tape | None = None,
    return_hidden: bool = False,
):
    """Apply the network. Hidden layers are linear -> [batch-norm] -> activation.

    In ``train`` mode batch-norm uses batch statistics and updates the running
    averages in ``store.buffers``; in ``eval`` mode it uses the running ones.
    With ``return_hidden`` the last hidden activation (or the input when there
    are no hidden layers) is returned alongside the output.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = T.as_tensor(x)
    if h.cols != spec.input_dim:
        raise ConfigError(f"{prefix}: input has {h.cols} columns, expected {spec.input_dim}")
    last_hidden = h
    n_layers = spec.num_hidden_layers + 1
    for i in range(n_layers):
        h = h @ _p(store, tape, f"{prefix}.{i}.weight")
        if i < spec.num_hidden_layers and spec.batch_norm[i]:
            h = _batch_norm(store, tape, h, f"{prefix}.{i}.bn", mode)
        else:
            h = h + _p(store, tape, f"{prefix}.{i}.bias")
        if i < spec.num_hidden_layers:
            if spec.activation == "relu":
                h = T.relu(h)
            elif spec.activation == "leaky_relu":
                h = T.leaky_relu(h)
            last_hidden = h
        if not np.isfinite(h.data).all():
            raise NumericError(f"{prefix}: non-finite activation in layer {i}", layer=i)
    return (h, last_hidden) if return_hidden else h


def _batch_norm(store, tape, h, name, mode):
    gamma = _p(store, tape, f"{name}.gamma")
    beta = _p(store, tape, f"{name}.beta")
    rm, rv = f"{name}.running_mean", f"{name}.running_var"
    if mode == "eval":
        return T.batch_norm_eval(h, gamma, beta, store.buffers[rm], store.buffers[rv])
    if h.rows < 2:
        raise ConfigError(f"{name}: batch-norm in train mode needs at least 2 rows")
    out, mu, var = T.batch_norm(h, gamma, beta)
    n = h.rows
    store.buffers[rm] = (1 - BN_MOMENTUM) * store.buffers[rm] + BN_MOMENTUM * mu
    store.buffers[rv] = (1 - BN_MOMENTUM) * store.buffers[rv] + BN_MOMENTUM * var * n / (n - 1)
    return out


# -- checkpoints ------------------------------------------------------------
#
# One .npz file. Keys are "param/<name>" and "buffer/<name>"; arrays are
# float64 so a save/load round trip is bit-exact. "meta/step" holds the
# optimizer step counter. Optimizer moments are not saved.

def save_params(store: ParamStore, path) -> None:
    arrays = {f"param/{k}": v for k, v in store.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in store.buffers.items()})
    arrays["meta/step"] = np.array([store.step], dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> ParamStore:
    store = ParamStore()
    with np.load(path, allow_pickle=False) as data:
        for key in data.files:
            kind, _, name = key.partition("/")
            if kind == "param":
                store.params[name] = data[key].astype(np.float64)
            elif kind == "buffer":
                store.buffers[name] = data[key].astype(np.float64)
            elif key == "meta/step":
                store.step = int(data[key][0])
            else:
                raise LoadError(f"unexpected checkpoint entry {key!r}")
    return store


def save_specs(specs: dict[str, MlpSpec], extra: dict, path) -> None:
    payload = {"mlps": {k: s.to_dict() for k, s in specs.items()}, **extra}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_specs(path) -> tuple[dict[str, MlpSpec], dict]:
    payload = json.loads(Path(path).read_text())
    specs = {k: MlpSpec.from_dict(v) for k, v in payload.pop("mlps").items()}
    return specs, payload


def forward_value(spec: MlpSpec, store: ParamStore, x, prefix: str) -> np.ndarray:
    """Eval-mode forward on plain arrays; never records or mutates."""
    out = mlp_forward(spec, store, x, mode="eval", prefix=prefix)
    return out.data if isinstance(out, Tensor) else np.asarray(out)
