"""Reverse-mode differentiation over dense 2-D float64 matrices.

Every value is a ``Tensor`` holding a 2-D ``float64`` array. Tensors created
from a :class:`Tape` (parameters and inputs) are recorded; any op with a
recorded operand is appended to the same tape. Ops whose operands are all
constants produce constants and cost nothing beyond the numpy call, which is
how evaluation code runs.

Broadcasting in the elementwise ops follows numpy for the 2-D shapes used
here: an operand of shape ``(1, d)``, ``(n, 1)`` or ``(1, 1)`` is expanded.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DomainError, UsageError

LEAKY_SLOPE = 0.01
BN_EPS = 1e-8


def _as_2d(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ConfigError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 matrix, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "name")
    __array_priority__ = 100

    def __init__(self, data, tape: "Tape | None" = None, name: str | None = None):
        self.data = _as_2d(data)
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = "recorded" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Records ops for one backward pass.

    A tape is bound to a parameter mapping (name -> ndarray). ``param(name)``
    returns the leaf tensor for that parameter; ``backward`` returns a
    gradient for every name in the mapping, zero for unreachable ones. A tape
    can be consumed only once.
    """

    def __init__(self, params=None):
        self.params = params if params is not None else {}
        self._nodes: list[tuple[Tensor, tuple, object]] = []
        self._leaves: dict[str, Tensor] = {}
        self.consumed = False

    def param(self, name: str) -> Tensor:
        self._check_open()
        leaf = self._leaves.get(name)
        if leaf is None:
            if name not in self.params:
                raise ConfigError(f"unknown parameter {name!r}")
            leaf = Tensor(self.params[name], tape=self, name=name)
            self._leaves[name] = leaf
        return leaf

    def watch(self, value, name: str) -> Tensor:
        """Record an arbitrary input as a differentiable leaf under ``name``."""
        self._check_open()
        leaf = Tensor(value, tape=self, name=name)
        self._leaves[name] = leaf
        return leaf

    def _check_open(self):
        if self.consumed:
            raise UsageError("tape already consumed by backward()")

    def _record(self, out: Tensor, parents: tuple, backward) -> Tensor:
        self._check_open()
        self._nodes.append((out, parents, backward))
        return out

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        self._check_open()
        if loss.tape is not self:
            raise UsageError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise UsageError("backward on a non-finite loss")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or parent.tape is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        result = {}
        names = list(self.params) + [n for n in self._leaves if n not in self.params]
        for name in names:
            leaf = self._leaves.get(name)
            g = grads.get(id(leaf)) if leaf is not None else None
            if g is None:
                ref = self.params[name] if name in self.params else leaf.data
                g = np.zeros_like(np.asarray(ref, dtype=np.float64))
            result[name] = g.reshape(np.shape(self.params.get(name, g)))
        self._nodes.clear()
        return result


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise UsageError("operands recorded on different tapes")
            tape = p.tape
    out = Tensor(data, tape=tape)
    if tape is not None:
        tape._record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ConfigError(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.tape is not None else None
        gb = a.data.T @ g if b.tape is not None else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def trace(a) -> Tensor:
    a = as_tensor(a)
    if a.rows != a.cols:
        raise ConfigError(f"trace of non-square {a.shape}")
    n = a.rows

    def backward(g):
        return (g[0, 0] * np.eye(n),)

    return _make(np.array([[np.trace(a.data)]]), (a,), backward)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def hinge(a) -> Tensor:
    """Elementwise max(0, a)."""
    return relu(a)


# -- reductions -------------------------------------------------------------

def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    return _make(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size
    return _make(np.array([[a.data.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


def row_sum(a) -> Tensor:
    """Sum across columns: (n, d) -> (n, 1)."""
    a = as_tensor(a)
    d = a.cols
    return _make(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, d, axis=1),))


def col_mean(a) -> Tensor:
    """Mean over rows: (n, d) -> (1, d)."""
    a = as_tensor(a)
    n = a.rows
    return _make(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / n, n, axis=0),))


def sq_dist(a, b) -> Tensor:
    """Row-wise squared Euclidean distance: (n, d), (n, d) -> (n, 1)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sq_dist")
    diff = a.data - b.data

    def backward(g):
        gd = 2.0 * g * diff
        return _unbroadcast(gd, a.shape), _unbroadcast(-gd, b.shape)

    return _make((diff * diff).sum(axis=1, keepdims=True), (a, b), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Per-row cross-entropy with integer labels: (n, k) -> (n, 1)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ConfigError(f"cross-entropy: {n} rows but {labels.shape[0]} labels")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"cross-entropy labels outside [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    rows = np.arange(n)
    out = -logp[rows, labels].reshape(n, 1)

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p,)

    return _make(out, (logits,), backward)


# -- indexing / layout ------------------------------------------------------

def gather_rows(a, index) -> Tensor:
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    shape = a.shape

    def backward(g):
        rows = shape[0]
        if rows <= 64:
            # small tables (label embeddings): scatter-add as a dense matmul
            sel = np.zeros((rows, index.size))
            sel[index, np.arange(index.size)] = 1.0
            return (sel @ g,)
        out = np.zeros(shape)
        if np.bincount(index, minlength=rows).max() <= 1:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward)


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.rows != b.rows:
        raise ConfigError(f"concat_cols: {a.shape} and {b.shape}")
    split = a.cols

    def backward(g):
        return g[:, :split], g[:, split:]

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


# -- normalization ----------------------------------------------------------

def batch_norm(x, gamma, beta, eps: float = BN_EPS):
    """Training-mode batch norm with batch statistics.

    Returns ``(out, batch_mean, batch_var)``; the statistics are plain arrays
    (biased variance) for the caller's running-average update.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.rows
    mu = x.data.mean(axis=0, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std / n * (
            n * dxhat - dxhat.sum(axis=0, keepdims=True) - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
        )
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        return dx, dgamma, dbeta

    out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)
    return out, mu, var


def batch_norm_eval(x, gamma, beta, running_mean, running_var, eps: float = BN_EPS) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    inv_std = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    xhat = (x.data - running_mean) * inv_std

    def backward(g):
        return g * gamma.data * inv_std, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)
