import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from supermarket_mf.core import truncated_stationary_vector, validate_decomposition
from supermarket_mf.errors import ConvergenceError, StabilityError
from supermarket_mf.gim1 import (
    BatchPhService,
    Gim1Model,
    gim1_aggregate_residual,
    gim1_decomposition,
    gim1_fixed_point,
    ph_stationary,
    renewal_inverse,
    toeplitz_forward,
)

T1 = [[-4.0, 3.0], [2.0, -7.0]]
T3x3 = [[-10.0, 2.0, 4.0], [3.0, -7.0, 4.0], [0.0, 2.0, -5.0]]


def unit_batch_closed_form(rho, theta, d, K):
    r = [rho]
    for _ in range(K - 1):
        r.append(rho * theta * r[-1] ** d)
    return np.array(r)


def eta_oracle(alpha, T):
    T = np.array(T)
    T0 = -T.sum(axis=1)
    A = (T + np.outer(T0, alpha)).T
    A[-1, :] = 1.0
    rhs = np.zeros(len(A))
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


# --- service / stationary -------------------------------------------------

def test_ph_stationary_two_phase():
    eta, mu = ph_stationary(BatchPhService([0.5, 0.5], T1))
    np.testing.assert_allclose(eta, [0.5625, 0.4375], atol=1e-15)
    assert mu == pytest.approx(2.75, abs=1e-14)


def test_ph_stationary_three_phase():
    eta, mu = ph_stationary(BatchPhService([1 / 3, 1 / 3, 1 / 3], T3x3))
    np.testing.assert_allclose(eta, [1 / 6, 11 / 36, 19 / 36], atol=1e-15)
    assert mu == pytest.approx(2.25, abs=1e-14)


def test_ph_stationary_exponential():
    eta, mu = ph_stationary(BatchPhService([1.0], [[-3.5]]))
    assert eta.tolist() == [1.0] and mu == 3.5


@given(st.integers(0, 10_000))
def test_service_rate_is_inverse_mean(seed):
    rng = np.random.default_rng(seed)
    m = 3
    T = rng.uniform(0.1, 2.0, (m, m))
    np.fill_diagonal(T, 0.0)
    np.fill_diagonal(T, -(T.sum(axis=1) + rng.uniform(0.5, 3.0, m)))
    alpha = rng.dirichlet(np.ones(m))
    svc = BatchPhService(alpha, T)
    np.testing.assert_allclose(svc.eta, eta_oracle(alpha, T), atol=1e-12)
    mean = -alpha @ np.linalg.solve(T, np.ones(m))
    assert svc.mu == pytest.approx(1.0 / mean, rel=1e-12)


@pytest.mark.parametrize("alpha, T, b", [
    ([0.5, 0.6], T1, [1.0]),
    ([0.5, 0.5], [[-4.0, 5.0], [2.0, -7.0]], [1.0]),
    ([0.5, 0.5], T1, [0.5, 0.6]),
    ([0.5, 0.5], [[-4.0, -1.0], [2.0, -7.0]], [1.0]),
])
def test_service_validation(alpha, T, b):
    with pytest.raises(ValueError):
        BatchPhService(alpha, T, b)


# --- renewal inverse ------------------------------------------------------

def test_renewal_point_mass():
    assert renewal_inverse([1.0], 6).u.tolist() == [1.0] * 7


def test_renewal_two_point():
    np.testing.assert_allclose(renewal_inverse([0.5, 0.5], 3).u, [1.0, 0.5, 0.75, 0.625], atol=1e-16)


@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_renewal_symbolic_entries(w):
    b1, b2, b3, b4 = np.array(w) / sum(w)
    u = renewal_inverse([b1, b2, b3, b4], 4).u
    expected = [1.0, b1, b1 ** 2 + b2, b1 ** 3 + 2 * b1 * b2 + b3,
                b1 ** 4 + 3 * b1 ** 2 * b2 + b2 ** 2 + 2 * b1 * b3 + b4]
    np.testing.assert_allclose(u, expected, atol=1e-14)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5), st.integers(1, 40), st.integers(0, 10_000))
def test_renewal_identity(w, K, seed):
    b = np.array(w) / sum(w)
    x = np.random.default_rng(seed).uniform(-1, 1, K)
    inv = renewal_inverse(b, K)
    np.testing.assert_allclose(toeplitz_forward(b, inv.apply(x)), x, atol=1e-13)
    np.testing.assert_allclose(inv.apply(inv.forward(x)), x, atol=1e-13)


# --- fixed point ----------------------------------------------------------

def test_table1_first_column():
    model = Gim1Model(1.0, BatchPhService([0.5, 0.5], T1), 2)
    seq = gim1_fixed_point(model, K=5)
    printed = [(0.2045, 0.1591), (0.0137, 0.0107), (6.193e-05, 4.817e-05),
               (1.259e-09, 9.793e-10), (5.204e-19, 4.048e-19)]
    for k, row in enumerate(printed, start=1):
        for got, want in zip(seq.level(k), row):
            if want >= 1e-3:
                assert abs(got - want) <= 5e-4
            else:
                assert abs(got - want) <= 1e-3 * want


def test_table2_selected_levels():
    model = Gim1Model(1.0, BatchPhService([1 / 3, 1 / 3, 1 / 3], T3x3), 5)
    seq = gim1_fixed_point(model, K=4)
    np.testing.assert_allclose(seq.level(1), [0.0741, 0.1358, 0.2346], atol=5e-4)
    np.testing.assert_allclose(seq.level(3), [1.411e-20, 2.587e-20, 4.469e-20], rtol=1e-3)


def _random_two_phase(seed):
    rng = np.random.default_rng(seed)
    alpha = rng.dirichlet(np.ones(2))
    T = np.array([[-rng.uniform(2, 5), 0.0], [0.0, -rng.uniform(2, 5)]])
    T[0, 1] = rng.uniform(0, -T[0, 0])
    return BatchPhService(alpha, T)


@given(st.floats(0.05, 0.95), st.integers(2, 6), st.integers(0, 10_000))
def test_unit_batch_closed_form(rho, d, seed):
    svc = _random_two_phase(seed)
    model = Gim1Model(rho * svc.mu, svc, d)
    seq = gim1_fixed_point(model, K=12)
    expected = unit_batch_closed_form(model.rho, model.theta, d, 12)
    assert np.abs(seq.r - expected).max() < 1e-12
    # r(1) = rho, up to the solver's stopping tolerance
    assert abs(seq.r[0] - model.rho) < seq.info["eps"]
    assert seq.level(1).sum() == pytest.approx(seq.r[0], abs=1e-15)
    assert seq.info["contraction_bound"] == pytest.approx(model.rho * model.theta, abs=1e-14)


@given(st.floats(0.05, 0.9), st.integers(0, 10_000))
def test_unit_batch_single_choice_geometric(rho, seed):
    svc = _random_two_phase(seed)
    seq = gim1_fixed_point(Gim1Model(rho * svc.mu, svc, 1), K=400)
    np.testing.assert_allclose(seq.r[:20], rho ** np.arange(1, 21), rtol=1e-10, atol=0)


@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4), st.floats(0.1, 0.9), st.integers(2, 5))
def test_batch_solver_converges_monotonically(w, rho, d):
    b = np.array(w) / sum(w)
    svc = BatchPhService([0.5, 0.5], T1, b)
    model = Gim1Model(rho * svc.mu * svc.b_bar, svc, d)
    seq = gim1_fixed_point(model, K=30)
    res = gim1_aggregate_residual(seq, model)
    assert res.aggregate_sup < 1e-10
    assert seq.info["monotone"]
    assert np.all(np.diff(seq.r) <= 1e-15)


def test_batch_scalar_case_matches_stationary_chain():
    svc = BatchPhService([1.0], [[-2.0]], [0.3, 0.5, 0.2])
    model = Gim1Model(1.5, svc, 1)
    K = 120
    seq = gim1_fixed_point(model, K=K)
    pi = truncated_stationary_vector(gim1_decomposition(model, K).generator)
    np.testing.assert_allclose(seq.r[:40], pi.aggregate()[1:41], atol=1e-12)


def test_scalar_vector_residual_exact():
    svc = BatchPhService([1.0], [[-2.0]], [0.6, 0.4])
    model = Gim1Model(1.2, svc, 3)
    res = gim1_aggregate_residual(gim1_fixed_point(model, K=20), model)
    assert max(np.abs(v).max() for v in res.vector) < 1e-12


def test_multiphase_vector_residual_is_diagnostic():
    model = Gim1Model(1.0, BatchPhService([1 / 3, 1 / 3, 1 / 3], T3x3), 5)
    res = gim1_aggregate_residual(gim1_fixed_point(model, K=4), model)
    assert res.aggregate_sup < 1e-10
    assert np.isfinite(res.vector_sup)


def test_automatic_levels():
    model = Gim1Model(1.0, BatchPhService([0.5, 0.5], T1, [0.5, 0.5]), 2)
    seq = gim1_fixed_point(model, eps=1e-12)
    assert seq.r[-1] < 1e-12


def test_unstable():
    with pytest.raises(StabilityError):
        gim1_fixed_point(Gim1Model(3.0, BatchPhService([0.5, 0.5], T1), 2), K=5)


def test_iteration_cap():
    model = Gim1Model(1.0, BatchPhService([0.5, 0.5], T1, [0.5, 0.5]), 2)
    with pytest.raises(ConvergenceError) as info:
        gim1_fixed_point(model, K=10, max_iter=2)
    assert len(info.value.iterate) == 10
    assert info.value.residuals is not None


# --- decomposition --------------------------------------------------------

def test_exponential_unit_batch_is_birth_death():
    dec = gim1_decomposition(Gim1Model(0.5, BatchPhService([1.0], [[-1.0]]), 2), 3)
    expected = np.array([[-0.5, 0.5, 0, 0], [1.0, -1.5, 0.5, 0], [0, 1.0, -1.5, 0.5], [0, 0, 1.0, -1.5]])
    np.testing.assert_allclose(dec.generator.dense, expected, atol=1e-15)


def test_level0_row_of_left_part_is_zero():
    dec = gim1_decomposition(Gim1Model(1.0, BatchPhService([0.5, 0.5], T1), 2), 4)
    (_, left), = dec.left_parts
    assert np.all(left.dense[0] == 0)


def test_two_point_batches_give_two_subdiagonals():
    svc = BatchPhService([0.5, 0.5], T1, [0.5, 0.5])
    dec = gim1_decomposition(Gim1Model(1.0, svc, 2), 5)
    (_, left), = dec.left_parts
    T0a = np.outer(svc.T0, svc.alpha)
    for k in range(3, 6):
        np.testing.assert_allclose(left.block(k, k - 1), 0.5 * T0a, atol=1e-15)
        np.testing.assert_allclose(left.block(k, k - 2), 0.5 * T0a, atol=1e-15)
    # from level 1 a batch of two empties the queue
    np.testing.assert_allclose(left.block(1, 0)[:, 0], svc.T0, atol=1e-15)
    assert validate_decomposition(dec) == []
