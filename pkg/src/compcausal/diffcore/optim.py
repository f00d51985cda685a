"""SGD with Nesterov momentum and Adam, both with coupled L2 weight decay.

Weight decay is added to the gradient before the update (``g + wd * p``), so
with Adam it is rescaled by the adaptive denominator; it is not the
decoupled AdamW rule.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, NumericError
from .nn import ParamStore

KINDS = ("sgd_nesterov", "adam")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd_nesterov"
    learning_rate: float = 3e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def optimizer_step(spec: OptimizerSpec, store: ParamStore, grads: dict, names=None) -> ParamStore:
    """Update ``store`` in place (and return it).

    ``names`` restricts the update to a parameter subset; the others and their
    optimizer state are left untouched. On a non-finite gradient nothing is
    changed and :class:`NumericError` is raised.
    """
    names = list(store.params) if names is None else list(names)
    for name in names:
        if name not in grads:
            raise ConfigError(f"no gradient for parameter {name!r}")
        if grads[name].shape != store.params[name].shape:
            raise ConfigError(f"gradient shape {grads[name].shape} != parameter shape for {name!r}")
        if not np.isfinite(grads[name]).all():
            raise NumericError(f"non-finite gradient for {name!r}")

    lr, wd = spec.learning_rate, spec.weight_decay
    for name in names:
        p = store.params[name]
        g = grads[name] + wd * p if wd else grads[name]
        st = store.state.setdefault(name, {})
        if spec.kind == "sgd_nesterov":
            if spec.momentum:
                buf = st.get("momentum")
                buf = g.copy() if buf is None else spec.momentum * buf + g
                st["momentum"] = buf
                g = g + spec.momentum * buf
            store.params[name] = p - lr * g
        else:
            t = int(st.get("t", np.zeros(1))[0]) + 1
            m = spec.beta1 * st.get("m", np.zeros_like(p)) + (1 - spec.beta1) * g
            v = spec.beta2 * st.get("v", np.zeros_like(p)) + (1 - spec.beta2) * g * g
            st["m"], st["v"], st["t"] = m, v, np.array([t])
            m_hat = m / (1 - spec.beta1**t)
            v_hat = v / (1 - spec.beta2**t)
            store.params[name] = p - lr * m_hat / (np.sqrt(v_hat) + spec.epsilon)
    store.step += 1
    return store
