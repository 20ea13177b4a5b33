import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from qwx.qcore import (
    DEFAULT_TOL,
    DimensionError,
    Tolerances,
    ValidationError,
    as_density,
    as_unitary,
    binary_entropy,
    fidelity,
    haar_unitary,
    hermitian_log_phase,
    matrix_from_json,
    matrix_to_json,
    partial_trace,
    random_density,
    random_pure_vector,
    renyi2_entropy,
    shannon_entropy,
    tensor,
    unitary_exp,
    von_neumann_entropy,
)

seeds = st.integers(0, 2**32 - 1)


def test_tensor_identity_and_diagonal():
    assert np.allclose(tensor(np.eye(2), np.eye(2)), np.eye(4))
    assert np.allclose(tensor(np.diag([0, 1]), np.eye(2)), np.diag([0, 0, 1, 1]))


@given(seeds)
def test_tensor_spectrum_is_products(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    b = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    ev = np.linalg.eigvals(tensor(a, b))
    prod = np.outer(np.linalg.eigvals(a), np.linalg.eigvals(b)).ravel()
    for z in prod:
        assert np.min(np.abs(ev - z)) < 1e-9


def test_partial_trace_product_and_bell():
    rng = np.random.default_rng(0)
    ra, rb = random_density(2, rng), random_density(3, rng)
    assert np.allclose(partial_trace(np.kron(ra, rb), [2, 3], [0]), ra, atol=1e-12)
    phi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    assert np.allclose(partial_trace(np.outer(phi, phi), [2, 2], [0]), np.eye(2) / 2)


@given(seeds)
def test_partial_trace_composition(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(12, rng)
    direct = partial_trace(rho, [2, 3, 2], [0])
    step = partial_trace(partial_trace(rho, [2, 3, 2], [0, 1]), [2, 3], [0])
    assert np.allclose(direct, step, atol=1e-8)


def test_partial_trace_rejects_bad_dims():
    with pytest.raises(DimensionError):
        partial_trace(np.eye(4), [2, 3], [0])


def test_von_neumann_entropy_examples():
    v = random_pure_vector(3, np.random.default_rng(1))
    assert abs(von_neumann_entropy(np.outer(v, v.conj()))) < 1e-12
    assert von_neumann_entropy(np.eye(4) / 4) == pytest.approx(math.log(4), abs=1e-12)
    oracle = -(0.25 * math.log(0.25) + 0.75 * math.log(0.75))
    assert von_neumann_entropy(np.diag([0.25, 0.75])) == pytest.approx(oracle, abs=1e-14)


def test_fidelity_examples():
    rho = random_density(3, np.random.default_rng(2))
    assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-10)
    assert fidelity(np.diag([1.0, 0]), np.diag([0, 1.0])) == 0.0


@given(seeds)
def test_fidelity_pure_states_is_overlap(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pure_vector(2, rng), random_pure_vector(2, rng)
    f = fidelity(np.outer(a, a.conj()), np.outer(b, b.conj()))
    assert f == pytest.approx(abs(np.vdot(a, b)), abs=1e-9)


@given(seeds)
def test_fidelity_matches_sqrtm_definition(seed):
    rng = np.random.default_rng(seed)
    r, s = random_density(3, rng), random_density(3, rng)
    sr = scipy.linalg.sqrtm(r)
    oracle = np.trace(scipy.linalg.sqrtm(sr @ s @ sr)).real
    assert fidelity(r, s) == pytest.approx(oracle, abs=1e-8)
    assert 0.0 <= fidelity(r, s) <= 1.0 + 1e-12


def test_hermitian_log_phase_examples():
    lp = hermitian_log_phase(np.eye(2))
    assert np.allclose(lp.C, 0)
    lp = hermitian_log_phase(np.diag([1.0, -1.0]))
    assert np.allclose(lp.C, np.diag([0, math.pi]))


@given(seeds)
def test_hermitian_log_phase_roundtrip(seed):
    u = haar_unitary(3, np.random.default_rng(seed))
    lp = hermitian_log_phase(u)
    assert np.allclose(lp.C, lp.C.conj().T)
    assert np.linalg.norm(unitary_exp(lp.C) - u, 2) < 1e-10
    assert np.all(lp.phases > -math.pi) and np.all(lp.phases <= math.pi)


def test_binary_entropy_examples():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(math.log(2))
    assert binary_entropy(0.1) == pytest.approx(-(0.1 * math.log(0.1) + 0.9 * math.log(0.9)), abs=1e-15)


def test_scalar_entropies():
    p = np.array([0.5, 0.25, 0.25])
    assert shannon_entropy(p) == pytest.approx(1.5 * math.log(2))
    assert renyi2_entropy(p) == pytest.approx(-math.log(0.375))
    assert shannon_entropy([1.0, 0.0]) == 0.0


def test_validation_errors():
    with pytest.raises(ValidationError):
        as_density(np.diag([1.5, -0.5]))
    with pytest.raises(ValidationError):
        as_density(np.diag([0.5, 0.6]))
    with pytest.raises(ValidationError):
        as_unitary(np.array([[1, 1], [0, 1]]))
    with pytest.raises(ValidationError):
        as_density(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(ValidationError):
        Tolerances(eq=-1.0)
    with pytest.raises(ValidationError):
        DEFAULT_TOL.replace(bogus=1.0)


@given(seeds)
def test_matrix_json_roundtrip(seed):
    m = haar_unitary(3, np.random.default_rng(seed))
    assert np.array_equal(matrix_from_json(matrix_to_json(m)), m)


def test_matrix_json_forms_and_errors():
    assert np.array_equal(matrix_from_json([[1, [0, 1]], [0, 2]]), np.array([[1, 1j], [0, 2]]))
    assert np.array_equal(matrix_from_json([1, 0, 0, 1]), np.eye(2))
    with pytest.raises((ValidationError, DimensionError)) as e:
        matrix_from_json([[1, 0, 0], [0, 1]], path="x.U")
    assert "x.U" in str(e.value)
    with pytest.raises((ValidationError, DimensionError)):
        matrix_from_json([1, 2, 3])
