"""Linear-kernel HSIC and the label-conditioned dependence penalty.

With linear kernels ``K = U U^T`` and ``L = V V^T`` the biased estimator
``tr(K H L H) / (n-1)^2`` equals ``||V^T H U||_F^2 / (n-1)^2``. The
differentiable path uses the second form, which costs O(n d_u d_v) instead
of O(n^2); :func:`hsic_linear_kernel_form` evaluates the first literally and
serves as a reference.
"""

from __future__ import annotations

import numpy as np

from .diffcore import ops
from .diffcore.tensor import Tensor, as_tensor
from .errors import ConfigError, DomainError

__all__ = [
    "conditional_hsic",
    "hsic_linear",
    "hsic_linear_kernel_form",
    "loss_indep",
    "one_hot",
]


def one_hot(ids, k: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    out = np.zeros((ids.size, k))
    out[np.arange(ids.size), ids] = 1.0
    return out


def hsic_linear(U, V) -> Tensor:
    """Biased linear-kernel HSIC of paired rows of ``U`` and ``V``."""
    U, V = as_tensor(U), as_tensor(V)
    n = U.rows
    if V.rows != n:
        raise ConfigError(f"HSIC needs paired rows, got {U.rows} and {V.rows}")
    if n < 2:
        raise DomainError("HSIC needs at least 2 samples")
    Uc = U - ops.col_mean(U)
    Vc = V - ops.col_mean(V)
    cross = ops.matmul(ops.transpose(Vc), Uc)
    return ops.scale(ops.sum(cross * cross), 1.0 / (n - 1) ** 2)


def hsic_linear_kernel_form(U, V) -> float:
    """``tr(K H L H) / (n-1)^2`` with explicit n x n kernel and centering matrices."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    U = U.reshape(len(U), -1)
    V = V.reshape(len(V), -1)
    n = U.shape[0]
    if n < 2:
        raise DomainError("HSIC needs at least 2 samples")
    K = U @ U.T
    L = V @ V.T
    H = np.eye(n) - np.full((n, n), 1.0 / n)
    return float(np.trace(K @ H @ L @ H)) / (n - 1) ** 2


def conditional_hsic(U, V, labels) -> Tensor:
    """Mean HSIC within groups of equal label.

    Groups with fewer than two samples are skipped and do not count towards
    the divisor.
    """
    U, V = as_tensor(U), as_tensor(V)
    labels = np.asarray(labels).reshape(-1)
    if not (U.rows == V.rows == labels.size):
        raise ConfigError("conditional HSIC inputs must share the batch size")
    values, counts = np.unique(labels, return_counts=True)
    groups = [np.flatnonzero(labels == y) for y, c in zip(values, counts) if c >= 2]
    if not groups:
        raise DomainError("no label group has at least 2 samples")
    total = None
    for idx in groups:
        term = hsic_linear(ops.gather_rows(U, idx), ops.gather_rows(V, idx))
        total = term if total is None else total + term
    return ops.scale(total, 1.0 / len(groups))


def loss_indep(phi_a, phi_o, one_hot_a, one_hot_o, a_labels, o_labels, lambda_oh: float, lambda_rep: float) -> Tensor:
    """``lambda_oh * L_oh + lambda_rep * L_rep``.

    L_oh = I(phi_a, O | A) + I(phi_o, A | O) keeps each recovered core blind
    to the other label; L_rep = I(phi_a, phi_o | A) + I(phi_a, phi_o | O)
    keeps the two cores mutually independent within each label group.
    Terms with a zero weight are not computed.
    """
    total = Tensor(np.zeros((1, 1)))
    if lambda_oh:
        l_oh = conditional_hsic(phi_a, one_hot_o, a_labels) + conditional_hsic(phi_o, one_hot_a, o_labels)
        total = total + ops.scale(l_oh, lambda_oh)
    if lambda_rep:
        l_rep = conditional_hsic(phi_a, phi_o, a_labels) + conditional_hsic(phi_a, phi_o, o_labels)
        total = total + ops.scale(l_rep, lambda_rep)
    return total
