import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qwx.classical import (
    ClassicalWorkExtraction,
    birkhoff_decompose,
    classical_description,
    classical_work_entropy_bound,
    permutation_matrix,
    quantum_classical_equivalence,
    standard_fq_from_bistochastic,
    unistochastic_check,
    work_distribution,
)
from qwx.hamiltonics import from_energies
from qwx.instrument import classify, identity_instrument
from qwx.qcore import PreconditionError, ValidationError, random_probability
from qwx.shiftinv import build_F, check_stationary, engine_instrument
from qwx.suite import random_bistochastic, random_commuting_state, random_lattice_hamiltonian, random_level4

seeds = st.integers(0, 2**32 - 1)
X = np.array([[0, 1], [1, 0]], dtype=complex)
HAD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
QUBIT = from_energies([0, 1])


def support(wd):
    return {round(float(w), 9): p for w, p in zip(wd.values, wd.probs) if p > 1e-15}


def test_create_validates():
    with pytest.raises(ValidationError):
        ClassicalWorkExtraction.create([0, 1], [[0.5, 0.5], [0.6, 0.5]])
    with pytest.raises(ValidationError):
        ClassicalWorkExtraction.create([0, 1], [[1.1, 0.0], [-0.1, 1.0]])
    c = ClassicalWorkExtraction.create([0, 1], [[0.2, 0.3], [0.8, 0.7]])
    assert not c.is_bistochastic()
    back = ClassicalWorkExtraction.from_json(c.to_json())
    assert np.array_equal(back.T, c.T) and np.array_equal(back.h, c.h)


def test_work_distribution_examples():
    c = ClassicalWorkExtraction.create([0, 1, 3], np.eye(3))
    assert support(work_distribution(c, [0.2, 0.3, 0.5])) == pytest.approx({0.0: 1.0})
    c = ClassicalWorkExtraction.create([0, 1], [[0, 1], [1, 0]])
    assert support(work_distribution(c, [1.0, 0.0])) == pytest.approx({-1.0: 1.0})


def test_work_distribution_monte_carlo():
    rng = np.random.default_rng(2024)
    h = np.array([0.0, 0.5, 1.5, 2.0])
    T = rng.dirichlet(np.ones(4), size=4).T
    p = random_probability(4, rng)
    c = ClassicalWorkExtraction.create(h, T)
    wd = support(work_distribution(c, p))
    n = 10**6
    x = rng.choice(4, size=n, p=p)
    u = rng.random(n)
    cum = np.cumsum(T, axis=0)[:, x]
    xp = np.minimum((u[None, :] > cum).sum(axis=0), 3)
    w = np.round(h[x] - h[xp], 9)
    vals, counts = np.unique(w, return_counts=True)
    emp = dict(zip(vals.tolist(), (counts / n).tolist()))
    for k, q in wd.items():
        sigma = math.sqrt(q * (1 - q) / n)
        assert abs(emp.get(k, 0.0) - q) <= 3 * sigma + 1e-12


def test_classical_description_examples():
    H = from_energies([0, 1, 2])
    assert np.allclose(classical_description(identity_instrument(3), H).T, np.eye(3))
    T = classical_description(engine_instrument(build_F(X, QUBIT)), QUBIT).T
    assert np.allclose(T, [[0, 1], [1, 0]])
    eng = build_F(X, QUBIT, 3)
    with pytest.raises(PreconditionError):
        classical_description(engine_instrument(eng, eng.ladder.uniform_superposition(1)), QUBIT)


@given(seeds, st.integers(2, 4))
def test_classical_description_is_stochastic(seed, d):
    ext, H = random_level4(d, np.random.default_rng(seed))
    c = classical_description(ext, H)
    assert np.allclose(c.T.sum(axis=0), 1.0, atol=1e-10)
    if classify(ext, H).unital:
        assert c.is_bistochastic(1e-8)


def test_equivalence_examples():
    ext = engine_instrument(build_F(HAD, QUBIT))
    eq = quantum_classical_equivalence(ext, QUBIT, np.diag([0.0, 1.0]))
    assert eq.tv < 1e-12
    eq = quantum_classical_equivalence(ext, QUBIT, np.full((2, 2), 0.5))
    assert eq.tv < 1e-10
    assert support(eq.quantum) == pytest.approx({-1.0: 0.25, 0.0: 0.5, 1.0: 0.25})


@given(seeds, st.integers(2, 4))
def test_equivalence_random(seed, d):
    rng = np.random.default_rng(seed)
    ext, H = random_level4(d, rng)
    eq = quantum_classical_equivalence(ext, H, random_commuting_state(H, rng))
    assert eq.tv <= 1e-10


def test_birkhoff_examples():
    P = permutation_matrix((2, 0, 1))
    bd = birkhoff_decompose(P)
    assert bd.weights == (1.0,) and bd.perms == ((2, 0, 1),)
    bd = birkhoff_decompose(np.full((2, 2), 0.5))
    assert sorted(bd.perms) == [(0, 1), (1, 0)]
    assert bd.weights == pytest.approx((0.5, 0.5))
    with pytest.raises(ValidationError):
        birkhoff_decompose([[0.2, 0.8], [0.3, 0.7]])


@given(seeds, st.integers(2, 6))
def test_birkhoff_reconstruction(seed, n):
    T = random_bistochastic(n, np.random.default_rng(seed))
    bd = birkhoff_decompose(T)
    assert np.max(np.abs(bd.matrix(n) - T)) <= 1e-10
    assert len(bd.weights) <= (n - 1) ** 2 + 1
    assert min(bd.weights) > 0
    assert birkhoff_decompose(T) == bd


def test_unistochastic_examples():
    c = ClassicalWorkExtraction.create([0, 1], [[0, 1], [1, 0]])
    r = unistochastic_check(X, c, QUBIT)
    assert r.matches_T and r.engine_matches
    c = ClassicalWorkExtraction.create([0, 1], np.full((2, 2), 0.5))
    r = unistochastic_check(HAD, c, QUBIT)
    assert r.matches_T and r.engine_matches
    c = ClassicalWorkExtraction.create([0, 1], [[0.9, 0.1], [0.1, 0.9]])
    assert not unistochastic_check(HAD, c, QUBIT).matches_T


def test_standard_fq_examples():
    c = ClassicalWorkExtraction.create([0, 1, 2], permutation_matrix((1, 2, 0)))
    eng = standard_fq_from_bistochastic(c, from_energies([0, 1, 2]))
    assert eng.d_E2 == 1
    c = ClassicalWorkExtraction.create([0, 1], np.full((2, 2), 0.5))
    eng = standard_fq_from_bistochastic(c, QUBIT)
    assert eng.d_E2 == 2 and check_stationary(eng)[0]
    ext = engine_instrument(eng)
    assert classify(ext, QUBIT).unital
    assert np.allclose(classical_description(ext, QUBIT).T, c.T)
    with pytest.raises(PreconditionError):
        standard_fq_from_bistochastic(ClassicalWorkExtraction.create([0, 1], [[1, 1], [0, 0]]), QUBIT)


@given(seeds, st.integers(2, 4))
def test_standard_fq_roundtrip(seed, d):
    rng = np.random.default_rng(seed)
    H = random_lattice_hamiltonian(d, rng)
    T = random_bistochastic(d, rng)
    eng = standard_fq_from_bistochastic(ClassicalWorkExtraction.create(H.eigenvalues, T), H)
    assert np.max(np.abs(classical_description(engine_instrument(eng), H).T - T)) <= 1e-9


def test_entropy_bound_examples():
    c = ClassicalWorkExtraction.create([0, 1], np.eye(2))
    b = classical_work_entropy_bound(c, [0.5, 0.5])
    assert b.entropy == 0.0 and b.holds
    c = ClassicalWorkExtraction.create([0, 1], [[0, 1], [1, 0]])
    b = classical_work_entropy_bound(c, [0.5, 0.5])
    assert b.entropy == pytest.approx(math.log(2)) and b.bound == pytest.approx(2 * math.log(2)) and b.holds


@given(seeds, st.integers(2, 5))
def test_entropy_bound_random(seed, n):
    rng = np.random.default_rng(seed)
    h = rng.integers(0, 4, size=n).astype(float)
    T = rng.dirichlet(np.ones(n), size=n).T
    assert classical_work_entropy_bound(ClassicalWorkExtraction.create(h, T), random_probability(n, rng)).holds
