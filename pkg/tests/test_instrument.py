import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qwx.hamiltonics import decompose, from_energies
from qwx.instrument import (
    CPWorkExtraction,
    apply,
    check_level1,
    classify,
    identity_instrument,
    k_distributions,
    pinching_commutation_check,
    projective_instrument,
    work_distribution,
    work_entropy_bound,
)
from qwx.qcore import ConsistencyError, PreconditionError, ValidationError, haar_unitary, random_density
from qwx.shiftinv import build_F, engine_instrument
from qwx.suite import (
    random_ec_fq,
    random_engine,
    random_hamiltonian,
    random_instrument,
    random_ladder_state,
    random_level4,
)
from qwx.fqext import FQWorkExtraction, random_energy_conserving_unitary, to_cp

seeds = st.integers(0, 2**32 - 1)
X = np.array([[0, 1], [1, 0]], dtype=complex)
PLUS = np.full((2, 2), 0.5, dtype=complex)


def flip_instrument(rho_E1=None):
    eng = build_F(X, from_energies([0, 1]))
    return engine_instrument(eng, rho_E1)


def test_apply_identity_and_born_rule():
    rho = random_density(3, np.random.default_rng(0))
    out, p = apply(identity_instrument(3), 0, rho)
    assert np.allclose(out, rho) and p == pytest.approx(1.0)
    ext = projective_instrument(from_energies([0, 1]), works=[0, 0])
    probs = [apply(ext, j, PLUS)[1] for j in range(ext.n_outcomes)]
    assert probs == pytest.approx([0.5, 0.5])


@given(seeds, st.integers(2, 4))
def test_random_instrument_trace_preserving(seed, d):
    rng = np.random.default_rng(seed)
    ext = random_instrument(d, rng)
    rho = random_density(d, rng)
    assert sum(apply(ext, j, rho)[1] for j in range(ext.n_outcomes)) == pytest.approx(1.0, abs=1e-8)


def test_create_rejects_non_tp():
    with pytest.raises(ValidationError):
        CPWorkExtraction.create([(0.0, [0.5 * np.eye(2)])])


def test_check_level1_examples():
    H = from_energies([0, 1])
    ok, dev = check_level1(identity_instrument(2, 0.0), H)
    assert ok and dev == 0.0
    assert not check_level1(identity_instrument(2, 1.0), H)[0]
    assert check_level1(flip_instrument(), H)[0]


def test_k_distributions_identity_and_level4():
    H = from_energies([0, 1, 3])
    kd = k_distributions(identity_instrument(3), H)
    z = kd.zero_bin()
    assert np.allclose(kd.p_k_x[:, z], 1.0)
    rng = np.random.default_rng(3)
    for _ in range(10):
        ext, H = random_level4(int(rng.integers(2, 5)), rng)
        kd = k_distributions(ext, H)
        assert np.allclose(kd.p_k_x[:, kd.zero_bin()], 1.0, atol=1e-8)


def test_k_distribution_two_eigenstate_mixture():
    # energy conserving U with rho_E = t|a><a| + (1-t)|b><b|: K = <H_E> - e_initial, independent of x
    rng = np.random.default_rng(11)
    H_I = from_energies([0, 1, 2])
    e = np.array([0.0, 1.0, 2.0])
    H_E = from_energies(e)
    H_tot = decompose(np.kron(H_I.matrix, np.eye(3)) + np.kron(np.eye(3), H_E.matrix))
    U = random_energy_conserving_unitary(H_tot, rng)
    t = 0.3
    rho = np.diag([t, 0.0, 1 - t]).astype(complex)
    F = FQWorkExtraction.create(H_E, U, rho, 3)
    kd = k_distributions(to_cp(F, H_I), H_I)
    mean = 2 * (1 - t)
    for x in range(3):
        got = {round(float(k), 9): float(p) for k, p in zip(kd.k_values, kd.p_k_x[x]) if p > 1e-12}
        assert got == pytest.approx({round(mean - 0.0, 9): t, round(mean - 2.0, 9): 1 - t})


def test_classify_examples():
    H = from_energies([0, 1])
    v = classify(identity_instrument(2), H)
    assert v.level1 and v.level2 and v.level3 and v.level4 and v.unital
    assert classify(flip_instrument(), H).level4
    eng = build_F(X, H, 3)
    sup = eng.ladder.uniform_superposition(1)
    v = classify(engine_instrument(eng, sup), H)
    assert v.level2 and v.level3 and not v.level4


def test_flip_instrument_works():
    ext = flip_instrument()
    active = sorted(o.w for o in ext.outcomes if o.kraus)
    assert active == [-1.0, 1.0]


@given(seeds, st.integers(2, 4), st.integers(0, 3))
def test_hierarchy_never_violated(seed, d, kind):
    rng = np.random.default_rng(seed)
    if kind == 0:
        ext, H = random_instrument(d, rng), random_hamiltonian(d, rng)
    elif kind == 1:
        F, H = random_ec_fq(d, rng, ("eigen", "superposed", "mixed", "sector_mixed")[seed % 4])
        ext = to_cp(F, H)
    elif kind == 2:
        eng = random_engine(d, rng)
        ext, H = engine_instrument(eng, random_ladder_state(eng, rng, "superposed")), eng.H_I
    else:
        ext, H = random_level4(d, rng)
    v = classify(ext, H, strict=True)
    assert v.hierarchy_ok and v.level4_forms_agree


def test_strict_raises_on_mutated_check():
    # the mutated sandwich check disagrees with the delta form on a flip instrument
    with pytest.raises(ConsistencyError):
        classify(flip_instrument(), from_energies([0, 1]), strict=True, _sign=1.0)


def test_pinching_commutation_examples():
    H = from_energies([0, 1])
    assert pinching_commutation_check(identity_instrument(2), H)[0]
    assert pinching_commutation_check(flip_instrument(), H)[0]
    ext = CPWorkExtraction.create([(0.0, [haar_unitary(2, np.random.default_rng(5))])])
    assert not pinching_commutation_check(ext, H, require_level4=False)[0]
    with pytest.raises(PreconditionError):
        pinching_commutation_check(ext, H)


def test_work_entropy_bound_examples():
    H = from_energies([0, 1])
    b = work_entropy_bound(identity_instrument(2), H, PLUS)
    assert b.entropy == 0.0 and b.holds
    b = work_entropy_bound(flip_instrument(), H, PLUS)
    assert b.entropy == pytest.approx(math.log(2)) and b.bound == pytest.approx(2 * math.log(2)) and b.holds


@given(seeds, st.integers(2, 4))
def test_work_entropy_bound_sweep(seed, d):
    rng = np.random.default_rng(seed)
    ext, H = random_level4(d, rng)
    assert work_entropy_bound(ext, H, random_density(d, rng)).holds


def test_work_distribution_flip():
    wd = work_distribution(flip_instrument(), np.diag([0.25, 0.75]))
    got = {w: p for w, p in zip(wd.values, wd.probs) if p > 1e-15}
    assert got == pytest.approx({-1.0: 0.25, 1.0: 0.75})
