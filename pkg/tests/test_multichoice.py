import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from supermarket_mf.core import (
    FractionMeasure,
    fixed_point_residual,
    truncated_stationary_vector,
    validate_decomposition,
)
from supermarket_mf.errors import StabilityError
from supermarket_mf.multichoice import (
    MobileServerModel,
    MultiClassModel,
    mobile_exponent,
    mobile_fixed_point,
    mobile_residual,
    multichoice_decompositions,
    multiclass_fixed_point,
    multiclass_residual,
)


def as_measure(values):
    return FractionMeasure(tuple(np.array([v]) for v in values))


def test_regimes():
    assert MobileServerModel(0.5, 1.0, 3, 2).regime == "doubly-exponential"
    assert MobileServerModel(0.5, 1.0, 2, 2).regime == "geometric"
    assert MobileServerModel(0.5, 1.0, 1, 2).regime == "transient"


@pytest.mark.parametrize("kwargs", [dict(lam=0.0, mu=1.0), dict(lam=1.0, mu=-1.0), dict(lam=1.0, mu=1.0, d=0),
                                    dict(lam=1.0, mu=1.0, f=1.5)])
def test_mobile_validation(kwargs):
    with pytest.raises(ValueError):
        MobileServerModel(**kwargs)


def test_geometric_regime():
    fp = mobile_fixed_point(MobileServerModel(0.25, 1.0, 2, 2), K=10)
    np.testing.assert_allclose(fp.pi, 0.5 ** np.arange(11), rtol=1e-14)
    assert fp.regime == "geometric" and fp.limit == 0.0


def test_doubly_exponential_regime():
    fp = mobile_fixed_point(MobileServerModel(0.5, 1.0, 2, 1), K=6)
    np.testing.assert_allclose(fp.pi, 0.5 ** (2.0 ** np.arange(7) - 1), rtol=1e-14)
    assert fp.pi[1:4].tolist() == [0.5, 0.125, 0.0078125]


def test_transient_regime():
    fp = mobile_fixed_point(MobileServerModel(0.5, 1.0, 1, 2), K=200)
    assert fp.limit == pytest.approx(0.5, abs=1e-12)
    assert abs(fp.pi[200] - fp.limit) < 1e-12
    assert np.all(np.diff(fp.pi) <= 0) and np.all(fp.pi >= 0.5)
    assert fp.pi[1] == pytest.approx(0.5 ** 0.5, abs=1e-15)


def test_transient_regime_needs_level_count():
    with pytest.raises(ValueError):
        mobile_fixed_point(MobileServerModel(0.5, 1.0, 1, 2))


def test_unstable_tail():
    with pytest.raises(StabilityError):
        mobile_fixed_point(MobileServerModel(1.5, 1.0, 2, 2))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 60))
def test_exponent_identity(d, f, k):
    closed = mobile_exponent(d, f, k)
    summed = mobile_exponent(d, f, k, method="sum")
    assert abs(closed - summed) <= 1e-13 * max(1.0, abs(summed))


@pytest.mark.parametrize("rho", [0.2, 0.5, 0.9])
@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("f", [1, 2, 3])
def test_scalar_balance_grid(rho, d, f):
    model = MobileServerModel(rho, 1.0, d, f)
    fp = mobile_fixed_point(model, K=40)
    assert mobile_residual(fp, model).max() < 1e-12


def test_perturbed_sequence_has_residual():
    model = MobileServerModel(0.5, 1.0, 2, 1)
    pi = mobile_fixed_point(model, K=6).pi.copy()
    pi[3] *= 1.01
    assert mobile_residual(pi, model).max() > 1e-6


def test_single_choice_matches_stationary_chain():
    model = MobileServerModel(0.3, 1.0, 1, 1)
    pi = truncated_stationary_vector(multichoice_decompositions(model, 60).generator)
    np.testing.assert_allclose(pi.flat, 0.3 ** np.arange(61), atol=1e-12)


@given(st.floats(0.05, 0.95), st.integers(1, 4), st.integers(1, 4))
@example(0.5, 3, 2)
def test_regime_trichotomy(rho, d, f):
    model = MobileServerModel(rho, 1.0, d, f)
    if d < f:
        fp = mobile_fixed_point(model, K=300)
        assert abs(fp.pi[-1] - model.limit) < 1e-12
        return
    if d == f:
        pi = mobile_fixed_point(model, K=6).pi
        np.testing.assert_allclose(np.diff(np.log(pi)), np.log(rho) / f, rtol=1e-10)
    else:
        # pi_k = rho^e_k with f e_k = d e_{k-1} + 1; deep levels underflow, so use the exponents
        e = mobile_exponent(d, f, np.arange(0, 206))
        np.testing.assert_allclose(f * e[1:], d * e[:-1] + 1, rtol=1e-12)
        # log e_k has slope log(d/f) up to O((f/d)^k)
        slope = np.diff(np.log(-np.log(rho) * e[200:]))
        np.testing.assert_allclose(slope, np.log(d / f), rtol=1e-10)


@given(st.floats(0.05, 0.95), st.integers(1, 4), st.integers(1, 4))
def test_mobile_tail_nonincreasing(rho, d, f):
    fp = mobile_fixed_point(MobileServerModel(rho, 1.0, d, f), K=50)
    assert np.all(np.diff(fp.pi) <= 0)


def test_mobile_decomposition_residual():
    model = MobileServerModel(0.5, 1.0, 2, 1)
    dec = multichoice_decompositions(model, 10)
    assert validate_decomposition(dec) == []
    assert dec.choice_numbers == (1, 2)
    _, sup = fixed_point_residual(as_measure(mobile_fixed_point(model, K=10).pi), dec)
    assert sup < 1e-12


# --- multi-class ----------------------------------------------------------

def test_single_class_classical():
    delta = multiclass_fixed_point(MultiClassModel(((0.5, 2),), 1.0), K=6)
    np.testing.assert_allclose(delta, 0.5 ** (2.0 ** np.arange(7) - 1), rtol=1e-15)


def test_two_class_example():
    model = MultiClassModel(((0.2, 1), (0.2, 2)), 1.0)
    delta = multiclass_fixed_point(model, K=8)
    assert delta[1] == pytest.approx(0.4, abs=1e-16)
    assert delta[2] == pytest.approx(0.4 * 0.2 + 0.4 ** 2 * 0.2, abs=1e-16)
    assert np.abs(multiclass_residual(delta, model)[:-1]).max() < 1e-12


@given(st.lists(st.floats(0.01, 0.3), min_size=1, max_size=3))
def test_all_single_choice_geometric(rates):
    model = MultiClassModel(tuple((lam, 1) for lam in rates), 1.0)
    delta = multiclass_fixed_point(model, K=15)
    np.testing.assert_allclose(delta, model.rho ** np.arange(16), rtol=1e-12)


@given(st.lists(st.tuples(st.floats(0.01, 0.3), st.integers(1, 3)), min_size=1, max_size=3))
def test_merge_invariance(classes):
    model = MultiClassModel(tuple(classes), 1.0)
    a = multiclass_fixed_point(model, K=12)
    b = multiclass_fixed_point(model.merged(), K=12)
    np.testing.assert_allclose(a, b, atol=1e-14, rtol=0)
    assert np.all(np.diff(a) <= 0)


def test_multiclass_unstable():
    with pytest.raises(StabilityError):
        multiclass_fixed_point(MultiClassModel(((0.6, 1), (0.5, 2)), 1.0))


def test_multiclass_decomposition():
    model = MultiClassModel(((0.2, 1), (0.2, 2)), 1.0)
    dec = multichoice_decompositions(model, 30)
    assert validate_decomposition(dec) == []
    assert dec.choice_numbers == (1, 1, 2)
    _, sup = fixed_point_residual(as_measure(multiclass_fixed_point(model, K=30)), dec)
    assert sup < 1e-12


def test_single_choice_decomposition_is_birth_death():
    dec = multichoice_decompositions(MobileServerModel(0.4, 1.0, 1, 1), 3)
    expected = np.array([[-0.4, 0.4, 0, 0], [1.0, -1.4, 0.4, 0], [0, 1.0, -1.4, 0.4], [0, 0, 1.0, -1.4]])
    np.testing.assert_allclose(dec.generator.dense, expected, atol=1e-15)
