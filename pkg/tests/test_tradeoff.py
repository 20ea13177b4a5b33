import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qwx.fqext import FQWorkExtraction
from qwx.hamiltonics import decompose, from_energies
from qwx.instrument import identity_instrument, work_distribution
from qwx.qcore import (
    PreconditionError,
    ValidationError,
    fidelity,
    haar_unitary,
    partial_trace,
    random_probability,
    renyi2_entropy,
    shannon_entropy,
    von_neumann_entropy,
)
from qwx.shiftinv import build_F, engine_instrument
from qwx.suite import random_commuting_state, random_engine, random_ladder_state, random_level4
from qwx.tradeoff import (
    Channel,
    analyze,
    basis_action_check,
    channel_of,
    closed_form_double_sum,
    cp_tradeoff,
    cq_closed_form,
    cq_oracle,
    depolarizing_dilation,
    entanglement_fidelity,
    entropy_exchange,
    equality_condition,
    fano_bound,
    fidelity_mutual_information,
    overlap_identity,
    max_product_fidelity,
    mutual_information,
    purify,
    purify_external,
    random_tripartite,
    tripartite_fidelity_identities,
    unitary_channel,
    verify_tradeoff_entropy,
    verify_tradeoff_fidelity,
    window_bound,
    z_joint,
)

seeds = st.integers(0, 2**32 - 1)
X = np.array([[0, 1], [1, 0]], dtype=complex)
QUBIT = from_energies([0, 1])


# --- brute-force oracles on explicit density matrices -------------------------

def joint_after(sc, F):
    """Density matrix on I (x) R (x) E after U acts on I (x) E."""
    d, de = sc.dim, F.dim_E
    w, v = np.linalg.eigh(F.rho_E)
    phi_e = v[:, -1]
    state = np.kron(sc.vector(), phi_e)  # I, R, E
    # move R to the end so U (x) 1_R acts on I, E
    perm = state.reshape(d, d, de).transpose(0, 2, 1).reshape(-1)
    out = np.kron(F.U, np.eye(d)) @ perm
    out = out.reshape(d, de, d).transpose(0, 2, 1).reshape(-1)
    return np.outer(out, out.conj())


def z_projectors(sc, tol=1e-7):
    """Spectral projectors of 1 (x) H_R - H_I (x) 1 on I (x) R."""
    d = sc.dim
    D = np.kron(np.eye(d), sc.H_R) - np.kron(sc.H.matrix, np.eye(d))
    Dz = decompose(D)
    return {float(z): Dz.projector(i) for i, z in enumerate(Dz.levels)}


def oracle_z_law(sc, F):
    rho = joint_after(sc, F)
    d, de = sc.dim, F.dim_E
    out = {}
    for z, P in z_projectors(sc).items():
        m = np.kron(P, np.eye(de)) @ rho @ np.kron(P, np.eye(de))
        p = float(np.trace(m).real)
        if p > 1e-12:
            out[round(z, 9)] = (p, partial_trace(m, [d * d, de], [1]) / p)
    return out


def zj_law(zj):
    return {round(float(z), 9): (float(zj.probs[k]), zj.conditional(k)) for k, z in enumerate(zj.z_values)
            if zj.factors[k] is not None}


def explicit_channel_on_purification(ch, sc):
    v = sc.vector()
    d = sc.dim
    big = sum(np.kron(k, np.eye(d)) @ np.outer(v, v.conj()) @ np.kron(k, np.eye(d)).conj().T for k in ch.kraus)
    return big


# --- purification ------------------------------------------------------------

def test_purify_eigenstate_and_mixed():
    sc = purify(np.diag([0.0, 1.0]), QUBIT)
    v = sc.vector()
    assert np.allclose(np.abs(v), [0, 0, 0, 1])
    assert np.allclose(partial_trace(np.outer(v, v.conj()), [2, 2], [0]), np.diag([0.0, 1.0]))
    sc = purify(np.eye(2) / 2, QUBIT)
    v = sc.vector()
    assert np.allclose(partial_trace(np.outer(v, v.conj()), [2, 2], [0]), np.eye(2) / 2)
    assert np.allclose(np.abs(v), np.array([1, 0, 0, 1]) / math.sqrt(2))


@given(seeds, st.integers(2, 4))
def test_purify_reduction(seed, d):
    rng = np.random.default_rng(seed)
    H = from_energies(np.sort(rng.integers(0, 3, size=d)).astype(float))
    rho = random_commuting_state(H, rng)
    sc = purify(rho, H)
    v = sc.vector()
    assert np.linalg.norm(partial_trace(np.outer(v, v.conj()), [d, d], [0]) - rho) < 1e-12


def test_purify_rejects_coherent_state():
    with pytest.raises(PreconditionError):
        purify(np.full((2, 2), 0.5), QUBIT)


# --- channels ----------------------------------------------------------------

def test_channel_examples():
    rng = np.random.default_rng(1)
    rho = np.diag([0.2, 0.8]).astype(complex)
    F = FQWorkExtraction.create(np.diag([0.0, 1.0]), np.eye(4), np.diag([1.0, 0.0]), 2)
    assert np.allclose(channel_of(F)(rho), rho)
    dep = channel_of(depolarizing_dilation(3))
    r3 = np.diag(random_probability(3, rng)).astype(complex)
    assert np.allclose(dep(r3), np.eye(3) / 3)


def test_channel_of_flip_engine_elementwise():
    rng = np.random.default_rng(2)
    H = from_energies([0, 1, 3])
    U = haar_unitary(3, rng)
    eng = build_F(U, H)
    ch = channel_of(eng.fq())
    n = np.array([0, 1, 3])
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    expect = np.zeros((3, 3), dtype=complex)
    for y in range(3):
        for yp in range(3):
            for x in range(3):
                for xp in range(3):
                    if n[y] - n[x] == n[yp] - n[xp]:
                        expect[y, yp] += U[y, x] * rho[x, xp] * U[yp, xp].conj()
    assert np.allclose(ch(rho), expect, atol=1e-12)


def test_basis_action_examples():
    rng = np.random.default_rng(3)
    U = haar_unitary(3, rng)
    assert basis_action_check(unitary_channel(U), U)[0]
    eng = build_F(U, from_energies([0, 1, 2]), 4)
    psi = random_ladder_state(eng, rng, "superposed")
    assert basis_action_check(channel_of(eng.fq(psi)), U)[0]
    assert not basis_action_check(channel_of(depolarizing_dilation(2)), np.eye(2))[0]


def test_entropy_exchange_examples():
    sc = purify(np.eye(2) / 2, QUBIT)
    assert entropy_exchange(unitary_channel(X), sc) == pytest.approx(0.0, abs=1e-12)
    assert entropy_exchange(channel_of(depolarizing_dilation(2)), sc) == pytest.approx(math.log(4))


@given(seeds, st.integers(2, 3))
def test_entropy_exchange_matches_explicit_state(seed, d):
    rng = np.random.default_rng(seed)
    eng = random_engine(d, rng)
    F = eng.fq(random_ladder_state(eng, rng, "mixed"))
    sc = purify(random_commuting_state(eng.H_I, rng), eng.H_I)
    ch = channel_of(F)
    assert entropy_exchange(ch, sc) == pytest.approx(von_neumann_entropy(explicit_channel_on_purification(ch, sc)),
                                                     abs=1e-9)


def test_entropy_exchange_equals_S_PZ_for_eigenstate_engine():
    rho = np.diag([0.3, 0.7]).astype(complex)
    eng = build_F(X, QUBIT)
    sc = purify(rho, QUBIT)
    zj = z_joint(sc, eng.fq())
    assert entropy_exchange(channel_of(eng.fq()), sc) == pytest.approx(shannon_entropy(zj.probs), abs=1e-12)


def test_entanglement_fidelity_examples():
    rng = np.random.default_rng(4)
    U = haar_unitary(3, rng)
    sc = purify(np.eye(3) / 3, from_energies([0, 1, 2]))
    assert entanglement_fidelity(unitary_channel(U), U, sc) == pytest.approx(1.0)
    dep = channel_of(depolarizing_dilation(3))
    assert entanglement_fidelity(dep, np.eye(3), sc) == pytest.approx(1 / 3)


@given(seeds, st.integers(2, 3))
def test_entanglement_fidelity_matches_explicit(seed, d):
    rng = np.random.default_rng(seed)
    eng = random_engine(d, rng)
    F = eng.fq(random_ladder_state(eng, rng, "superposed"))
    sc = purify(random_commuting_state(eng.H_I, rng), eng.H_I)
    ch = channel_of(F)
    v = np.kron(eng.U_int, np.eye(d)) @ sc.vector()
    f2 = np.vdot(v, explicit_channel_on_purification(ch, sc) @ v).real
    assert entanglement_fidelity(ch, eng.U_int, sc) ** 2 == pytest.approx(f2, abs=1e-10)


# --- Z measurement -----------------------------------------------------------

def test_z_joint_identity_and_flip():
    sc = purify(np.diag([0.3, 0.7]), QUBIT)
    F = FQWorkExtraction.create(np.diag([0.0, 1.0]), np.eye(4), np.diag([1.0, 0.0]), 2)
    zj = z_joint(sc, F)
    law = {round(float(z), 9): p for z, p in zip(zj.z_values, zj.probs) if p > 1e-12}
    assert law == pytest.approx({0.0: 1.0})
    zj = z_joint(sc, build_F(X, QUBIT).fq())
    law = {round(float(z), 9): p for z, p in zip(zj.z_values, zj.probs) if p > 1e-12}
    assert law == pytest.approx({-1.0: 0.3, 1.0: 0.7})


@given(seeds, st.integers(2, 3), st.sampled_from(["eigen", "superposed"]))
def test_z_joint_matches_brute_force(seed, d, kind):
    rng = np.random.default_rng(seed)
    eng = random_engine(d, rng)
    F = eng.fq(random_ladder_state(eng, rng, kind))
    sc = purify(random_commuting_state(eng.H_I, rng), eng.H_I)
    got, want = zj_law(z_joint(sc, F)), oracle_z_law(sc, F)
    assert set(got) == set(want)
    for z in want:
        assert got[z][0] == pytest.approx(want[z][0], abs=1e-10)
        assert np.allclose(got[z][1], want[z][1], atol=1e-8)


@given(seeds, st.integers(2, 4))
def test_z_law_equals_work_distribution(seed, d):
    rng = np.random.default_rng(seed)
    eng = random_engine(d, rng)
    rho = random_commuting_state(eng.H_I, rng)
    zj = z_joint(purify(rho, eng.H_I), eng.fq())
    wd = work_distribution(engine_instrument(eng), rho)
    a = {round(float(z), 8): p for z, p in zip(zj.z_values, zj.probs) if p > 1e-12}
    b = {round(float(w), 8): p for w, p in zip(wd.values, wd.probs) if p > 1e-12}
    assert set(a) == set(b)
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-10)


def test_z_joint_needs_pure_external_state():
    eng = build_F(X, QUBIT, 2)
    F = eng.fq(eng.ladder.mixture({0: 0.5, 1: 0.5}))
    sc = purify(np.eye(2) / 2, QUBIT)
    with pytest.raises(PreconditionError):
        z_joint(sc, F)
    # the purified quartet has the same channel and Z law
    Fp = purify_external(F)
    assert np.allclose(channel_of(Fp)(np.diag([0.2, 0.8])), channel_of(F)(np.diag([0.2, 0.8])))
    assert z_joint(sc, Fp).probs.sum() == pytest.approx(1.0)


# --- information measures ----------------------------------------------------

@given(seeds, st.integers(2, 3))
def test_mutual_information_matches_brute_force(seed, d):
    rng = np.random.default_rng(seed)
    eng = random_engine(d, rng)
    F = eng.fq(random_ladder_state(eng, rng, "superposed"))
    sc = purify(random_commuting_state(eng.H_I, rng), eng.H_I)
    zj = z_joint(sc, F)
    law = oracle_z_law(sc, F)
    rho_e = sum(p * r for p, r in law.values())
    i = von_neumann_entropy(rho_e) - sum(p * von_neumann_entropy(r) for p, r in law.values())
    got_i, di = mutual_information(zj)
    assert got_i == pytest.approx(i, abs=1e-8)
    assert di >= -1e-8
    # fidelity version from pairwise root fidelities of the oracle conditionals
    ps = [p for p, _ in law.values()]
    rs = [r for _, r in law.values()]
    tot = sum(pa * pb * fidelity(ra, rb) for pa, ra in zip(ps, rs) for pb, rb in zip(ps, rs))
    i_f, s2, dif = fidelity_mutual_information(zj)
    assert i_f == pytest.approx(-math.log(tot), abs=1e-7)
    assert s2 == pytest.approx(renyi2_entropy(ps), abs=1e-12)
    assert dif >= -1e-8


def test_information_examples():
    sc = purify(np.diag([0.3, 0.7]), QUBIT)
    F = FQWorkExtraction.create(np.diag([0.0, 1.0]), np.eye(4), np.diag([1.0, 0.0]), 2)
    zj = z_joint(sc, F)
    assert mutual_information(zj) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert fidelity_mutual_information(zj) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
    zj = z_joint(sc, build_F(X, QUBIT).fq())
    i, di = mutual_information(zj)
    assert di == pytest.approx(0.0, abs=1e-12) and i == pytest.approx(shannon_entropy([0.3, 0.7]))
    i_f, s2, dif = fidelity_mutual_information(zj)
    assert i_f == pytest.approx(s2) and dif == pytest.approx(0.0, abs=1e-12)


def test_superposed_engine_partial_information():
    eng = build_F(X, QUBIT, 3)
    F = eng.fq(eng.ladder.superposition({0: 1.0, 1: 1.0}))
    zj = z_joint(purify(np.diag([0.3, 0.7]), QUBIT), F)
    i, di = mutual_information(zj)
    s = shannon_entropy(zj.probs)
    assert 0 < di < s


def test_fidelity_information_matches_product_maximization():
    # two Z values: sum P P F equals the squared maximum over product states
    rng = np.random.default_rng(9)
    eng = build_F(X, QUBIT, 3)
    F = eng.fq(eng.ladder.superposition({-1: 0.6, 0: 1.0, 1: 0.3j}))
    zj = z_joint(purify(np.diag([0.45, 0.55]), QUBIT), F)
    sup = zj.support()
    assert len(sup) == 2
    p = zj.probs[sup]
    best = max_product_fidelity(p, [zj.conditional(k) for k in sup], rng) ** 2
    i_f, _, _ = fidelity_mutual_information(zj)
    assert -math.log(best) == pytest.approx(i_f, abs=1e-6)


# --- trade-off relations -----------------------------------------------------

def test_tradeoff_identity_is_degenerate_equality():
    F = FQWorkExtraction.create(np.diag([0.0, 1.0]), np.eye(4), np.diag([1.0, 0.0]), 2)
    r = analyze(purify(np.diag([0.3, 0.7]), QUBIT), F, np.eye(2))
    assert r.margin_T2 == pytest.approx(0.0, abs=1e-12)
    assert r.margin_T3 == pytest.approx(0.0, abs=1e-12)
    assert verify_tradeoff_entropy(r).holds and verify_tradeoff_fidelity(r).applicable


def test_tradeoff_eigenstate_engine_equality():
    r = analyze(purify(np.diag([0.3, 0.7]), QUBIT), build_F(X, QUBIT).fq(), X)
    m = verify_tradeoff_entropy(r)
    assert m.equality_expected and abs(r.margin_T2) < 1e-8
    assert r.neg_log_Fe2 >= r.S2 - 1e-8


@given(seeds, st.integers(2, 4), st.sampled_from(["eigen", "superposed", "mixed"]))
def test_tradeoff_margins_on_engines(seed, d, kind):
    rng = np.random.default_rng(seed)
    eng = random_engine(d, rng)
    F = eng.fq(random_ladder_state(eng, rng, kind))
    if kind == "mixed":
        F = purify_external(F)
    r = analyze(purify(random_commuting_state(eng.H_I, rng), eng.H_I), F, eng.U_int)
    m2, m3 = verify_tradeoff_entropy(r), verify_tradeoff_fidelity(r)
    assert m2.holds and r.fano_holds
    assert (abs(r.margin_T2) <= 1e-6) == m2.equality_expected
    assert m3.applicable and m3.holds


def test_fano_examples():
    rhs, ok = fano_bound(1.0, 0.0, 3)
    assert rhs == 0.0 and ok
    sc = purify(np.eye(2) / 2, QUBIT)
    ch = channel_of(depolarizing_dilation(2))
    fe = entanglement_fidelity(ch, np.eye(2), sc)
    se = entropy_exchange(ch, sc)
    rhs, ok = fano_bound(fe, se, 2)
    # the completely depolarizing channel saturates the bound
    assert ok and rhs == pytest.approx(se, abs=1e-12)
    fe, se = 0.9, 0.2
    rhs, ok = fano_bound(fe, se, 2)
    assert ok and rhs - se > 0.1


# --- uniform-window engines ---------------------------------------------------

def test_closed_form_double_sum():
    assert closed_form_double_sum({0: 1.0}, {0: 1.0}) == pytest.approx(1.0)
    pj = {j: 1 / 3 for j in (-1, 0, 1)}
    # z - z' = +-2: overlap of the shifted window is 1/3
    assert closed_form_double_sum({-1: 0.5, 1: 0.5}, pj) == pytest.approx(0.5 + 0.5 / 3)


@pytest.mark.parametrize("m", [10, 50])
def test_window_identity_and_bound(m):
    w = window_bound(X, QUBIT, np.diag([0.3, 0.7]), m, 2)
    vals = [w.neg_log_Fe2, w.I_F, w.neg_log_closed]
    assert max(vals) - min(vals) < 1e-8
    assert abs(w.report.margin_T3) < 1e-6
    assert w.holds and w.S_e <= w.bound
    a = 2 / (2 * m + 1)
    assert w.q == pytest.approx(2 * a - a * a)


def test_window_monotone_and_trivial():
    s = [window_bound(X, QUBIT, np.diag([0.3, 0.7]), m, 2).S_e for m in (5, 20, 40)]
    assert s[0] > s[1] > s[2]
    w = window_bound(np.eye(2), QUBIT, np.diag([0.3, 0.7]), 5, 1)
    assert w.S_e == pytest.approx(0.0, abs=1e-12) and w.holds


def test_window_rejects_narrow_support():
    with pytest.raises(PreconditionError):
        window_bound(X, QUBIT, np.diag([0.3, 0.7]), 10, 1)


# --- CP extractions -----------------------------------------------------------

def test_cp_tradeoff_examples():
    sc = purify(np.diag([0.3, 0.7]), QUBIT)
    r = cp_tradeoff(engine_instrument(build_F(X, QUBIT)), X, sc)
    assert r.level4 and abs(r.dI) < 1e-12 and abs(r.dIF) < 1e-12
    assert r.S_e >= r.S_PZ - 1e-10
    r = cp_tradeoff(identity_instrument(2), np.eye(2), sc)
    assert max(abs(r.S_e), abs(r.S_PZ), abs(r.I_ZW), abs(r.dI)) < 1e-12
    eng = build_F(X, QUBIT, 3)
    # a two-site spread keeps the work supports of z = -1 and z = +1 apart, three sites do not
    r = cp_tradeoff(engine_instrument(eng, eng.ladder.superposition({0: 1.0, 1: 1.0})), X, sc)
    assert not r.level4 and abs(r.dI) < 1e-12
    r = cp_tradeoff(engine_instrument(eng, eng.ladder.uniform_superposition(1)), X, sc)
    assert not r.level4 and r.dI > 1e-3 and r.margin_entropy >= -1e-8


@given(seeds, st.integers(2, 4))
def test_cp_tradeoff_level4_perfect_correlation(seed, d):
    rng = np.random.default_rng(seed)
    ext, H = random_level4(d, rng)
    r = cp_tradeoff(ext, haar_unitary(d, rng), purify(random_commuting_state(H, rng), H))
    assert r.level4 and r.dI < 1e-8 and r.dIF < 1e-8
    assert r.margin_entropy >= -1e-8


# --- tripartite relations -----------------------------------------------------

@given(seeds, st.sampled_from([(2, 2, 2), (2, 3, 3), (3, 2, 3), (3, 3, 2)]),
       st.sampled_from(["generic", "same", "aligned"]))
def test_overlap_identity(seed, dims, mode):
    closed, direct = overlap_identity(random_tripartite(dims, np.random.default_rng(seed), mode))
    assert closed == pytest.approx(direct, abs=1e-8)


@given(seeds, st.sampled_from([(2, 2, 2), (2, 3, 3), (2, 2, 3)]))
def test_cq_formula_two_outcomes(seed, dims):
    rng = np.random.default_rng(seed)
    inst = random_tripartite(dims, rng, "generic")
    assert cq_oracle(inst, rng) == pytest.approx(cq_closed_form(inst), abs=1e-6)


def test_cq_formula_orthogonal_conditionals():
    rng = np.random.default_rng(5)
    p = random_probability(3, rng)
    states = [np.diag(np.eye(3)[a]).astype(complex) for a in range(3)]
    best = max_product_fidelity(p, states, rng) ** 2
    assert best == pytest.approx(float(p @ p), abs=1e-9)


@pytest.mark.xfail(strict=True, reason="the double-sum formula overestimates the maximum for three outcomes")
def test_cq_formula_three_outcomes_trine():
    rng = np.random.default_rng(6)
    angles = [2 * math.pi * k / 3 for k in range(3)]
    states = [np.outer(v, v).astype(complex) for v in (np.array([math.cos(a), math.sin(a)]) for a in angles)]
    p = np.full(3, 1 / 3)
    closed = sum(p[a] * p[b] * fidelity(states[a], states[b]) for a in range(3) for b in range(3))
    best = max_product_fidelity(p, states, rng) ** 2
    assert best == pytest.approx(closed, abs=1e-6)


def test_trine_values():
    # documents the size of the gap: closed form 2/3, maximum 1/2
    rng = np.random.default_rng(6)
    angles = [2 * math.pi * k / 3 for k in range(3)]
    states = [np.outer(v, v).astype(complex) for v in (np.array([math.cos(a), math.sin(a)]) for a in angles)]
    p = np.full(3, 1 / 3)
    closed = sum(p[a] * p[b] * fidelity(states[a], states[b]) for a in range(3) for b in range(3))
    assert closed == pytest.approx(2 / 3)
    assert max_product_fidelity(p, states, rng) ** 2 == pytest.approx(0.5, abs=1e-8)


def test_product_state_is_equality_case():
    rng = np.random.default_rng(7)
    inst = random_tripartite((3, 2, 2), rng, "aligned")
    c = inst.phi_BC[0] / np.linalg.norm(inst.phi_BC[0])
    # same C factor for every branch gives a product |psi_AB> (x) |phi_C>
    cvec = np.abs(c[np.argmax(np.abs(c).sum(axis=1))])
    cvec /= np.linalg.norm(cvec)
    phi = tuple(np.outer(inst.psi_B[a], cvec).astype(complex) for a in range(3))
    prod = type(inst)(inst.p, inst.p, inst.psi_B, phi)
    assert equality_condition(prod)
    closed, direct = overlap_identity(prod)
    assert closed == pytest.approx(1.0) and direct == pytest.approx(1.0)
    assert cq_closed_form(prod) == pytest.approx(1.0)


def test_tripartite_report_inequality():
    rep = tripartite_fidelity_identities([(2, 2, 2), (2, 3, 2)], 6, np.random.default_rng(8))
    assert len(rep.records) == 12
    for r in rep.records:
        assert abs(r.overlap_closed - r.overlap_direct) < 1e-8
        if r.inequality_margin is not None:
            assert r.inequality_margin >= -1e-6
            if r.equality_condition:
                assert r.equality_observed


def test_channel_from_kraus_validation():
    with pytest.raises(ValidationError):
        Channel.from_kraus([0.5 * np.eye(2)])
