import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compcausal.diffcore import Tape, grad_check
from compcausal.errors import ConfigError, DomainError
from compcausal.hsic import conditional_hsic, hsic_linear, hsic_linear_kernel_form, loss_indep, one_hot


def frobenius_oracle(U, V):
    n = U.shape[0]
    H = np.eye(n) - 1.0 / n
    return float(np.linalg.norm(V.T @ H @ U, "fro") ** 2) / (n - 1) ** 2


def test_hand_two_sample_case():
    U = np.array([[0.0], [1.0]])
    assert abs(hsic_linear(U, U).item() - 0.25) < 1e-12
    assert abs(hsic_linear_kernel_form(U, U) - 0.25) < 1e-12


def test_constant_rows_give_zero():
    U = np.tile([[1.5, -2.0, 3.0]], (6, 1))
    V = np.random.default_rng(0).normal(size=(6, 4))
    assert abs(hsic_linear(U, V).item()) < 1e-15


def test_single_sample_is_domain_error():
    with pytest.raises(DomainError):
        hsic_linear(np.ones((1, 2)), np.ones((1, 2)))


def test_unpaired_rows_is_config_error():
    with pytest.raises(ConfigError):
        hsic_linear(np.ones((3, 2)), np.ones((4, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_independent_gaussians_near_zero(seed):
    rng = np.random.default_rng(seed)
    U, V = rng.standard_normal((2000, 3)), rng.standard_normal((2000, 3))
    scale = np.sqrt(hsic_linear(U, U).item() * hsic_linear(V, V).item())
    assert hsic_linear(U, V).item() < 0.01 * scale


@settings(max_examples=50, deadline=None)
@given(
    st.integers(2, 12),
    st.integers(1, 4),
    st.integers(1, 4),
    st.integers(0, 2**31 - 1),
)
def test_forms_agree(n, du, dv, seed):
    rng = np.random.default_rng(seed)
    U, V = rng.normal(size=(n, du)), rng.normal(size=(n, dv))
    value = hsic_linear(U, V).item()
    assert value >= 0
    assert abs(value - frobenius_oracle(U, V)) < 1e-10
    assert abs(value - hsic_linear_kernel_form(U, V)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (7, 3), elements=st.floats(-5, 5)),
    arrays(np.float64, (7, 2), elements=st.floats(-5, 5)),
    arrays(np.float64, (1, 3), elements=st.floats(-100, 100)),
    st.floats(-4, 4),
)
def test_symmetry_translation_and_scale(U, V, shift, c):
    base = hsic_linear(U, V).item()
    assert abs(base - hsic_linear(V, U).item()) < 1e-12
    assert abs(base - hsic_linear(U + shift, V).item()) < 1e-10 * max(1.0, abs(shift).max() ** 2)
    assert abs(hsic_linear(c * U, V).item() - c * c * base) < 1e-10 * max(1.0, base * c * c)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    params = {"U": rng.normal(size=(9, 3)), "V": rng.normal(size=(9, 2))}

    def f(p):
        tape = Tape(p)
        loss = hsic_linear(tape.param("U"), tape.param("V"))
        return loss.item(), tape.backward(loss)

    assert grad_check(f, params) < 1e-6


# -- conditional -------------------------------------------------------------

def test_single_group_equals_unconditioned():
    rng = np.random.default_rng(1)
    U, V = rng.normal(size=(8, 2)), rng.normal(size=(8, 3))
    assert abs(conditional_hsic(U, V, np.zeros(8)).item() - hsic_linear(U, V).item()) < 1e-14


def test_two_hand_groups():
    U = np.array([[0.0], [1.0], [0.0], [1.0]])
    assert abs(conditional_hsic(U, U, [0, 0, 1, 1]).item() - 0.25) < 1e-12


def test_one_hot_of_label_is_independent_within_groups():
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1])
    V = np.random.default_rng(3).normal(size=(8, 4))
    assert abs(conditional_hsic(one_hot(y, 3), V, y).item()) < 1e-15


def test_singleton_groups_are_skipped():
    U = np.array([[0.0], [1.0], [5.0]])
    # group 1 has one sample and is left out of the divisor
    assert abs(conditional_hsic(U, U, [0, 0, 1]).item() - 0.25) < 1e-12


def test_no_usable_group_is_domain_error():
    with pytest.raises(DomainError):
        conditional_hsic(np.ones((3, 1)), np.ones((3, 1)), [0, 1, 2])


# -- loss_indep ---------------------------------------------------------------

def _group_oracle(U, V, labels):
    # per-group tr(KHLH)/(n-1)^2, averaged over groups with >= 2 members
    vals = []
    for y in np.unique(labels):
        idx = labels == y
        if idx.sum() >= 2:
            vals.append(hsic_linear_kernel_form(U[idx], V[idx]))
    return np.mean(vals)


def test_loss_indep_four_samples_hand_groups():
    rng = np.random.default_rng(7)
    a = np.array([0, 0, 1, 1])
    o = np.array([0, 1, 0, 1])
    pa, po = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    oh_a, oh_o = one_hot(a, 2), one_hot(o, 2)
    lam_oh, lam_rep = 0.3, 0.7
    expected = lam_oh * (_group_oracle(pa, oh_o, a) + _group_oracle(po, oh_a, o))
    expected += lam_rep * (_group_oracle(pa, po, a) + _group_oracle(pa, po, o))
    value = loss_indep(pa, po, oh_a, oh_o, a, o, lam_oh, lam_rep).item()
    assert abs(value - expected) < 1e-12


def test_loss_indep_zero_weights():
    rng = np.random.default_rng(0)
    a, o = np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])
    value = loss_indep(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), one_hot(a, 2), one_hot(o, 2), a, o, 0, 0)
    assert value.item() == 0.0


def test_constant_attribute_core_zeroes_its_terms():
    rng = np.random.default_rng(2)
    a, o = np.array([0, 0, 1, 1, 0, 1]), np.array([0, 1, 0, 1, 1, 0])
    pa = np.ones((6, 3))
    po = rng.normal(size=(6, 3))
    oh_a, oh_o = one_hot(a, 2), one_hot(o, 2)
    full = loss_indep(pa, po, oh_a, oh_o, a, o, 1.0, 1.0).item()
    remaining = conditional_hsic(po, oh_a, o).item()
    assert abs(full - remaining) < 1e-12


def test_loss_indep_gradient():
    rng = np.random.default_rng(5)
    a = np.array([0, 0, 1, 1, 2, 2, 0, 1])
    o = np.array([0, 1, 0, 1, 0, 1, 1, 0])
    params = {"pa": rng.normal(size=(8, 3)), "po": rng.normal(size=(8, 3))}

    def f(p):
        tape = Tape(p)
        loss = loss_indep(tape.param("pa"), tape.param("po"), one_hot(a, 3), one_hot(o, 2), a, o, 0.4, 0.6)
        return loss.item(), tape.backward(loss)

    assert grad_check(f, params) < 1e-6
