"""Randomized property suite and the scenario generators it uses.

Every family draws its cases from its own generator seeded by
``(seed, family index)``, so the table is reproducible and independent of
which other families run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classical import (
    ClassicalWorkExtraction,
    birkhoff_decompose,
    classical_description,
    classical_work_entropy_bound,
    permutation_matrix,
    quantum_classical_equivalence,
    standard_fq_from_bistochastic,
)
from .fqext import (
    FQWorkExtraction,
    check_energy_conserving,
    clockwork_decompose,
    eigenspace_supported,
    final_external_entropy_bound,
    random_energy_conserving_unitary,
    realize,
    to_cp,
)
from .hamiltonics import SpectralHamiltonian, decompose, from_energies, lattice_analyze
from .instrument import (
    CPWorkExtraction,
    Outcome,
    action_distance,
    classify,
    pinching_commutation_check,
    work_entropy_bound,
)
from .qcore import (
    DEFAULT_TOL,
    Tolerances,
    dag,
    haar_unitary,
    opnorm,
    random_density,
    random_probability,
    random_pure_vector,
)
from .shiftinv import (
    ShiftInvariantEngine,
    W_isometry,
    build_F,
    check_shift_invariant,
    check_stationary,
    controlled_engine,
    engine_instrument,
)
from .tradeoff import (
    analyze,
    cp_tradeoff,
    purify,
    purify_external,
    tripartite_fidelity_identities,
    verify_tradeoff_entropy,
    verify_tradeoff_fidelity,
    window_bound,
)

#: Agreement required between quantum and classical work distributions.
EQUIVALENCE_TOL = 1e-10
#: Equality window for the entropy trade-off margin.
EQUALITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def random_lattice_hamiltonian(d: int, rng: np.random.Generator, max_offset: int = 3) -> SpectralHamiltonian:
    """Diagonal lattice Hamiltonian with random span and integer offsets (degeneracies allowed)."""
    span = float(rng.choice([0.5, 1.0, 1.5, 2.0]))
    n = np.sort(rng.integers(0, max_offset + 1, size=d))
    n -= n[0]
    return from_energies(span * n + float(rng.normal()))


def random_hamiltonian(d: int, rng: np.random.Generator) -> SpectralHamiltonian:
    """Lattice Hamiltonian in a Haar-random eigenbasis."""
    h = random_lattice_hamiltonian(d, rng)
    u = haar_unitary(d, rng)
    return decompose(u @ h.matrix @ dag(u))


def random_instrument(d: int, rng: np.random.Generator, max_outcomes: int = 3,
                      max_kraus: int = 2) -> CPWorkExtraction:
    """Kraus operators from a Haar isometry, random work values."""
    n_out = int(rng.integers(1, max_outcomes + 1))
    counts = rng.integers(1, max_kraus + 1, size=n_out)
    K = int(counts.sum())
    v = haar_unitary(d * K, rng)[:, :d]
    blocks = [v[k * d:(k + 1) * d] for k in range(K)]
    outs, pos = [], 0
    for j in range(n_out):
        outs.append(Outcome(float(np.round(rng.normal(), 3)), tuple(blocks[pos:pos + counts[j]])))
        pos += counts[j]
    return CPWorkExtraction.create(outs)


def classical_level4_instrument(H: SpectralHamiltonian, rng: np.random.Generator) -> CPWorkExtraction:
    """Jump instrument ``sqrt(T(y|x)) |y><x|`` with work ``h_x - h_y`` for a random stochastic ``T``."""
    d = H.dim
    T = rng.dirichlet(np.ones(d), size=d).T
    T[T < 0.05] = 0.0
    T /= T.sum(axis=0, keepdims=True)
    outs = []
    for x in range(d):
        for y in range(d):
            if T[y, x] > 0:
                a = math.sqrt(T[y, x]) * np.outer(H.basis[:, y], H.basis[:, x].conj())
                outs.append(Outcome(float(H.eigenvalues[x] - H.eigenvalues[y]), (a,)))
    return CPWorkExtraction.create(outs)


def random_ladder_state(engine: ShiftInvariantEngine, rng: np.random.Generator, kind: str) -> np.ndarray:
    """Safe ladder state: ``eigen``, ``superposed`` or ``mixed``."""
    lad = engine.ladder
    r = lad.safe_radius
    sites = np.arange(-r, r + 1)
    if kind == "eigen":
        return lad.eigenstate(int(rng.choice(sites)))
    k = int(min(len(sites), rng.integers(2, 4)))
    pick = rng.choice(sites, size=k, replace=False)
    if kind == "superposed":
        amp = random_pure_vector(k, rng)
        return lad.superposition({int(j): complex(a) for j, a in zip(pick, amp)})
    p = random_probability(k, rng)
    return lad.mixture({int(j): float(q) for j, q in zip(pick, p)})


def random_engine(d: int, rng: np.random.Generator, extra: int | None = None) -> ShiftInvariantEngine:
    """``F[U]`` for a Haar ``U`` on a random lattice Hamiltonian (``M`` = margin + extra)."""
    H = random_lattice_hamiltonian(d, rng)
    U = haar_unitary(d, rng)
    delta = int(max(lattice_analyze(H).offsets))
    extra = int(rng.integers(1, 4)) if extra is None else extra
    return build_F(U, H, delta + extra)


def random_controlled(d: int, rng: np.random.Generator, diagonal: bool = True) -> ShiftInvariantEngine:
    """Engine controlled by a degenerate system; ``diagonal`` picks a classical control state."""
    H = random_lattice_hamiltonian(d, rng)
    k = int(rng.integers(2, 4))
    us = [haar_unitary(d, rng) for _ in range(k)]
    if diagonal:
        rho = np.diag(random_probability(k, rng)).astype(complex)
    else:
        v = random_pure_vector(k, rng)
        rho = np.outer(v, v.conj())
    return controlled_engine(us, H, rho)


EC_MODES = ("eigen", "sector_mixed", "superposed", "mixed")


def random_ec_fq(d: int, rng: np.random.Generator, mode: str) -> tuple[FQWorkExtraction, SpectralHamiltonian]:
    """Energy-conserving quartet with a Haar block unitary and an external state of the given ``mode``.

    Integer energies make total-energy sectors overlap so the unitary mixes
    internal and external states.
    """
    H_I = from_energies(np.sort(rng.integers(0, 3, size=d)).astype(float))
    dE = int(rng.integers(2, 4))
    e = np.sort(rng.integers(0, 3, size=dE)).astype(float)
    if mode in ("superposed", "mixed") and e[0] == e[-1]:
        e[-1] += 1.0
    if mode == "sector_mixed" and len(set(e)) == dE:
        e[1] = e[0]
    H_E = from_energies(e)
    H_tot = decompose(np.kron(H_I.matrix, np.eye(dE)) + np.kron(np.eye(d), H_E.matrix))
    U = random_energy_conserving_unitary(H_tot, rng)
    if mode == "eigen":
        i = int(rng.integers(H_E.n_levels))
        cols = H_E.sector_columns(i)
        v = cols @ random_pure_vector(cols.shape[1], rng)
        rho = np.outer(v, v.conj())
    elif mode == "sector_mixed":
        counts = np.bincount(H_E.labels)
        cols = H_E.sector_columns(int(np.argmax(counts)))
        p = random_probability(cols.shape[1], rng)
        rho = (cols * p) @ dag(cols)
    else:
        i, j = 0, H_E.n_levels - 1
        a = H_E.sector_columns(i)[:, 0]
        b = H_E.sector_columns(j)[:, 0]
        if mode == "superposed":
            t = rng.uniform(0.2, 0.8)
            v = math.sqrt(t) * a + math.sqrt(1 - t) * np.exp(1j * rng.uniform(0, 2 * np.pi)) * b
            rho = np.outer(v, v.conj())
        else:
            t = rng.uniform(0.2, 0.8)
            rho = t * np.outer(a, a) + (1 - t) * np.outer(b, b)
    return FQWorkExtraction.create(H_E, U, rho.astype(complex), d), H_I


def random_commuting_state(H: SpectralHamiltonian, rng: np.random.Generator) -> np.ndarray:
    """State diagonal in the eigenbasis of ``H``."""
    p = random_probability(H.dim, rng)
    return ((H.basis * p) @ dag(H.basis)).astype(complex)


def random_bistochastic(n: int, rng: np.random.Generator, terms: int | None = None) -> np.ndarray:
    terms = int(rng.integers(1, n * n)) if terms is None else terms
    w = random_probability(terms, rng)
    return sum(wi * permutation_matrix(rng.permutation(n)) for wi in w)


def random_level4(d: int, rng: np.random.Generator) -> tuple[CPWorkExtraction, SpectralHamiltonian]:
    """Level-4 instrument from an engine, a controlled engine or a jump construction."""
    kind = int(rng.integers(3))
    if kind == 0:
        eng = random_engine(d, rng)
        return engine_instrument(eng, random_ladder_state(eng, rng, "eigen")), eng.H_I
    if kind == 1:
        eng = random_controlled(d, rng, diagonal=True)
        return engine_instrument(eng), eng.H_I
    H = random_hamiltonian(d, rng)
    return classical_level4_instrument(H, rng), H


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

@dataclass
class Context:
    """Suite settings shared by the families."""

    dims: tuple = (2, 3, 4)
    count: int = 100
    tol: Tolerances = DEFAULT_TOL
    sign: float = -1.0

    def classify(self, ext, H):
        return classify(ext, H, self.tol, _sign=self.sign)

    def dim(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.dims))


@dataclass
class FamilyResult:
    name: str
    cases: int
    failures: int
    worst: float
    witness: dict | None = None
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0


@dataclass
class _Tally:
    name: str
    worst: float = math.inf
    failures: int = 0
    cases: int = 0
    witness: dict | None = None
    note: str = ""

    def add(self, ok: bool, margin: float, info: Callable[[], dict] | None = None) -> None:
        self.cases += 1
        if not ok:
            self.failures += 1
            if self.witness is None or float(margin) < self.witness["margin"]:
                self.witness = {"case": self.cases - 1, **(info() if info else {}), "margin": float(margin)}
        self.worst = min(self.worst, float(margin))

    def result(self) -> FamilyResult:
        return FamilyResult(self.name, self.cases, self.failures, self.worst, self.witness, self.note)


def fam_hierarchy(ctx: Context, rng) -> _Tally:
    t = _Tally("hierarchy", note="level4 => level3 => level2 => level1; both level-4 forms agree")
    for k in range(ctx.count):
        d = ctx.dim(rng)
        c = k % 4
        if c == 0:
            ext, H = random_instrument(d, rng), random_hamiltonian(d, rng)
        elif c == 1:
            F, H = random_ec_fq(d, rng, EC_MODES[int(rng.integers(4))])
            ext = to_cp(F, H)
        elif c == 2:
            eng = random_engine(d, rng)
            ext, H = engine_instrument(eng, random_ladder_state(eng, rng, ("eigen", "superposed", "mixed")[k % 3])), eng.H_I
        else:
            ext, H = random_level4(d, rng)
        v = ctx.classify(ext, H)
        ok = v.hierarchy_ok and v.level4_forms_agree
        t.add(ok, 0.0 if ok else -1.0, lambda: {"verdict": {k2: v.as_dict()[k2] for k2 in
                                                           ("level1", "level2", "level3", "level4",
                                                            "level4_sandwich", "level4_delta")}})
    return t


def fam_eigenstate_level4(ctx: Context, rng) -> _Tally:
    t = _Tally("eigenstate_iff_level4", note="energy-conserving quartets, both directions")
    for k in range(ctx.count):
        F, H = random_ec_fq(ctx.dim(rng), rng, EC_MODES[k % 4])
        lhs = eigenspace_supported(F.H_E, F.rho_E, ctx.tol)
        rhs = ctx.classify(to_cp(F, H), H).level4
        t.add(lhs == rhs, 0.0 if lhs == rhs else -1.0, lambda: {"mode": EC_MODES[k % 4], "lhs": lhs, "rhs": rhs})
    return t


def fam_ec_level2(ctx: Context, rng) -> _Tally:
    t = _Tally("energy_conserving_level2", note="margin = tol - max TV of P_K|X")
    for k in range(ctx.count):
        F, H = random_ec_fq(ctx.dim(rng), rng, EC_MODES[k % 4])
        v = ctx.classify(to_cp(F, H), H)
        t.add(v.level2, ctx.tol.eq - v.deviations["level2_tv"])
    return t


def fam_shift_level3(ctx: Context, rng) -> _Tally:
    t = _Tally("shift_invariant_level3", note="margin = tol - max TV of P_K|YX")
    for k in range(ctx.count):
        eng = random_engine(ctx.dim(rng), rng)
        ext = engine_instrument(eng, random_ladder_state(eng, rng, ("eigen", "superposed", "mixed")[k % 3]))
        v = ctx.classify(ext, eng.H_I)
        t.add(v.level3, ctx.tol.eq - v.deviations["level3_tv"])
    return t


def fam_shift_structure(ctx: Context, rng) -> _Tally:
    t = _Tally("shift_invariance", note="window shift commutator, W^dag F W = U_I and energy conservation")
    for _ in range(ctx.count):
        eng = random_engine(ctx.dim(rng), rng)
        ok1, dev1 = check_shift_invariant(eng.F, eng, tol=ctx.tol)
        W = W_isometry(eng.H_I, eng.ladder, ctx.tol)
        dev2 = opnorm(dag(W) @ eng.F @ W - eng.U_int)
        ok3, dev3 = check_energy_conserving(eng.fq(), eng.H_I, ctx.tol)
        dev = max(dev1, dev2, dev3)
        t.add(ok1 and ok3 and dev2 <= 1e-10, ctx.tol.eq - dev)
    return t


def fam_stationary_unital(ctx: Context, rng) -> _Tally:
    t = _Tally("stationary_implies_unital", note="margin = tol - ||sum E_j(1) - 1|| on stationary engines")
    stationary_seen = 0
    for k in range(ctx.count):
        d = ctx.dim(rng)
        eng = random_engine(d, rng) if k % 3 == 0 else random_controlled(d, rng, diagonal=(k % 3 == 1))
        st, _ = check_stationary(eng, tol=ctx.tol)
        if not st:
            t.cases += 1
            continue
        stationary_seen += 1
        v = ctx.classify(engine_instrument(eng), eng.H_I)
        t.add(v.unital, ctx.tol.eq - v.deviations["unital"])
    t.note += f"; stationary engines: {stationary_seen}"
    return t


def fam_th4(ctx: Context, rng) -> _Tally:
    t = _Tally("quantum_classical_equivalence", note=f"margin = {EQUIVALENCE_TOL:g} - TV")
    for _ in range(ctx.count):
        ext, H = random_level4(ctx.dim(rng), rng)
        eq = quantum_classical_equivalence(ext, H, random_commuting_state(H, rng), ctx.tol)
        t.add(eq.tv <= EQUIVALENCE_TOL, EQUIVALENCE_TOL - eq.tv)
    return t


def _tradeoff_scenario(ctx: Context, rng, k: int):
    """Quartet, internal Hamiltonian, commuting state and target unitary."""
    d = ctx.dim(rng)
    c = k % 3
    if c == 0:
        eng = random_engine(d, rng)
        psi = random_ladder_state(eng, rng, ("eigen", "superposed")[k % 2])
        return eng.fq(psi), eng.H_I, eng.U_int, True
    if c == 1:
        F, H = random_ec_fq(d, rng, EC_MODES[int(rng.integers(4))])
        return F, H, haar_unitary(d, rng), False
    ext = random_instrument(d, rng)
    H = random_hamiltonian(d, rng)
    return realize(ext, H, energy_conserving=False, tol=ctx.tol), H, haar_unitary(d, rng), False


def fam_tradeoff(ctx: Context, rng) -> list:
    t2 = _Tally("entropy_tradeoff", note="S_e + dI - S(P_Z); equality iff pure conditionals")
    t3 = _Tally("fidelity_tradeoff", note="-log F_e^2 + dI_F - S_2(P_Z) on scenarios with matching target Z law")
    tf = _Tally("fano", note="h(F_e^2) + (1 - F_e^2) log(d^2 - 1) - S_e")
    for k in range(ctx.count):
        F, H, U, shift = _tradeoff_scenario(ctx, rng, k)
        if np.linalg.eigvalsh(F.rho_E)[-1] < 1 - ctx.tol.eq:
            F = purify_external(F)
        sc = purify(random_commuting_state(H, rng), H, ctx.tol)
        r = analyze(sc, F, U, ctx.tol)
        m2 = verify_tradeoff_entropy(r, ctx.tol)
        at_eq = abs(r.margin_T2) <= EQUALITY_TOL
        t2.add(m2.holds and at_eq == m2.equality_expected, r.margin_T2 + ctx.tol.eq,
               lambda: {"margin_T2": r.margin_T2, "purity_deficit": r.purity_deficit})
        m3 = verify_tradeoff_fidelity(r, ctx.tol)
        if m3.applicable:
            t3.add(m3.holds, r.margin_T3 + ctx.tol.eq)
        tf.add(r.fano_holds, r.fano_rhs - r.S_e + ctx.tol.eq)
    # top up the fidelity family with engine scenarios, whose Z law always matches the target
    for k in range(10 * ctx.count):
        if t3.cases >= ctx.count:
            break
        F, H, U, _ = _tradeoff_scenario(ctx, rng, 3 * k)
        r = analyze(purify(random_commuting_state(H, rng), H, ctx.tol), F, U, ctx.tol)
        m3 = verify_tradeoff_fidelity(r, ctx.tol)
        if m3.applicable:
            t3.add(m3.holds, r.margin_T3 + ctx.tol.eq)
    return [t2, t3, tf]


def fam_cp_tradeoff(ctx: Context, rng) -> _Tally:
    t = _Tally("level4_perfect_correlation", note="1e-8 - max(dI, dI_F) for level-4 instruments; margins >= 0")
    for _ in range(ctx.count):
        ext, H = random_level4(ctx.dim(rng), rng)
        sc = purify(random_commuting_state(H, rng), H, ctx.tol)
        r = cp_tradeoff(ext, haar_unitary(H.dim, rng), sc, ctx.tol)
        worst = max(r.dI, r.dIF)
        ok = r.level4 and worst < ctx.tol.eq and r.margin_entropy >= -ctx.tol.eq
        if r.fidelity_applicable:
            ok = ok and r.margin_fidelity >= -ctx.tol.eq
        t.add(ok, ctx.tol.eq - worst)
    return t


def fam_clockwork(ctx: Context, rng) -> _Tally:
    t = _Tally("clockwork", note="min(eps - ||B||, 1e-8 - reconstruction error), eps = 0.01")
    eps = 0.01
    for _ in range(ctx.count):
        F, H = random_ec_fq(ctx.dim(rng), rng, "eigen")
        H_tot = decompose(F.total_hamiltonian(H))
        c = clockwork_decompose(F.U, H_tot, eps, ctx.tol)
        m = min(eps - c.B_norm, 1e-8 - c.recon_error)
        t.add(m >= 0, m)
    return t


def fam_birkhoff(ctx: Context, rng) -> list:
    tb = _Tally("birkhoff", note="1e-10 - reconstruction error; term count <= (n-1)^2 + 1")
    tr = _Tally("bistochastic_engine_roundtrip", note="1e-9 - max |T_engine - T|")
    for _ in range(ctx.count):
        n = int(rng.integers(2, 7))
        T = random_bistochastic(n, rng)
        bd = birkhoff_decompose(T, ctx.tol)
        err = float(np.max(np.abs(bd.matrix(n) - T)))
        ok = err <= 1e-10 and len(bd.weights) <= (n - 1) ** 2 + 1 and min(bd.weights) > 0
        tb.add(ok, 1e-10 - err)
        d = ctx.dim(rng)
        T = random_bistochastic(d, rng)
        H = random_lattice_hamiltonian(d, rng)
        eng = standard_fq_from_bistochastic(ClassicalWorkExtraction.create(H.eigenvalues, T), H, ctx.tol)
        ext = engine_instrument(eng)
        back = classical_description(ext, H, ctx.tol).T
        dev = float(np.max(np.abs(back - T)))
        st, _ = check_stationary(eng, tol=ctx.tol)
        tr.add(dev <= 1e-9 and st and ctx.classify(ext, H).unital, 1e-9 - dev)
    return [tb, tr]


def fam_realize(ctx: Context, rng) -> _Tally:
    t = _Tally("realize_roundtrip", note="1e-8 - action distance; level-4 inputs use the conserving route")
    for k in range(ctx.count):
        d = ctx.dim(rng)
        if k % 2:
            ext, H = random_level4(d, rng)
        else:
            ext, H = random_instrument(d, rng), random_hamiltonian(d, rng)
        F = realize(ext, H, tol=ctx.tol)
        back = to_cp(F, H)
        dist = action_distance(ext, back)
        ok = dist <= 1e-8
        if k % 2:
            ok = ok and check_energy_conserving(F, H, ctx.tol)[0]
        t.add(ok, 1e-8 - dist)
    return t


def fam_entropy_bounds(ctx: Context, rng) -> list:
    tw = _Tally("work_entropy_bound", note="2 log N - S[W] for level-4 instruments and classical extractions")
    te = _Tally("external_entropy_bound", note="2 log N - S(final external) for eigenstate ladder engines")
    te2 = _Tally("external_entropy_log2N", note="log 2N - S(final external); reported alongside 2 log N")
    tp = _Tally("pinching_commutation", note="tol - worst deviation on level-4 instruments")
    for _ in range(ctx.count):
        ext, H = random_level4(ctx.dim(rng), rng)
        rho = random_commuting_state(H, rng) if rng.random() < 0.5 else random_density(H.dim, rng)
        b = work_entropy_bound(ext, H, rho, ctx.tol)
        cwe = classical_description(ext, H, ctx.tol)
        cb = classical_work_entropy_bound(cwe, np.real(np.diag(H.in_basis(rho))), ctx.tol)
        tw.add(b.holds and cb.holds, min(b.bound - b.entropy, cb.bound - cb.entropy))
        ok, dev = pinching_commutation_check(ext, H, ctx.tol)
        tp.add(ok, ctx.tol.eq - dev)
        eng = random_engine(ctx.dim(rng), rng)
        r = final_external_entropy_bound(eng.fq(), eng.H_I, random_density(eng.d_I, rng), ctx.tol)
        te.add(r.holds_2logN, r.bound_2logN - r.entropy)
        te2.add(r.holds_log2N, r.bound_log2N - r.entropy)
    return [tw, te, te2, tp]


def fam_window(ctx: Context, rng) -> list:
    tb = _Tally("window_bound", note="bound - S_e for uniform ladder superpositions")
    tt = _Tally("window_fidelity_identity", note="1e-8 - spread of (-log F_e^2, I_F, closed double sum)")
    for _ in range(ctx.count):
        d = ctx.dim(rng)
        H = random_lattice_hamiltonian(d, rng, max_offset=2)
        U = haar_unitary(d, rng)
        delta = int(max(lattice_analyze(H).offsets))
        m = int(rng.integers(1, 64 - delta + 1))
        l = delta + 1
        if l > 2 * m + 1:
            m = l
        w = window_bound(U, H, random_commuting_state(H, rng), m, l, ctx.tol)
        tb.add(w.holds, w.bound - w.S_e)
        vals = [w.neg_log_Fe2, w.I_F, w.neg_log_closed]
        spread = max(vals) - min(vals)
        tt.add(spread <= 1e-8 and abs(w.report.margin_T3) <= 1e-6, 1e-8 - spread)
    return [tb, tt]


def fam_tripartite(ctx: Context, rng) -> list:
    t1 = _Tally("overlap_identity", note="1e-8 - |closed form - definitional|")
    t7a = _Tally("cq_max_formula_two_outcomes", note="1e-6 - |closed form - maximized fidelity|, |A| = 2")
    t7b = _Tally("cq_max_formula_three_outcomes", note="1e-6 - |closed form - maximized fidelity|, |A| = 3")
    t8 = _Tally("overlap_inequality", note="maximized fidelity - overlap; equality detected iff condition")
    dims_list = [(a, b, c) for a in (2, 3) for b in (2, 3) for c in (2, 3)]
    per = max(1, math.ceil(ctx.count / len(dims_list)))
    rep = tripartite_fidelity_identities(dims_list, per, rng)
    for r in rep.records:
        d1 = abs(r.overlap_closed - r.overlap_direct)
        t1.add(d1 <= 1e-8, 1e-8 - d1)
        d7 = abs(r.cq_closed - r.cq_oracle)
        (t7a if r.dims[0] == 2 else t7b).add(d7 <= 1e-6, 1e-6 - d7,
                                              lambda: {"dims": list(r.dims), "closed": r.cq_closed,
                                                       "maximized": r.cq_oracle})
        if r.inequality_margin is not None:
            t8.add(r.inequality_margin >= -1e-6 and r.equality_condition == r.equality_observed,
                   r.inequality_margin + 1e-6)
    return [t1, t7a, t7b, t8]


def fam_negative_control(ctx: Context, rng) -> _Tally:
    """Passes when a mutated sector check is caught on some level-4 instrument."""
    t = _Tally("negative_control", note="mutated level-4 sector check must be detected")
    caught = 0
    for _ in range(ctx.count):
        ext, H = random_level4(ctx.dim(rng), rng)
        v = classify(ext, H, ctx.tol, _sign=1.0)
        if not (v.level4_forms_agree and v.hierarchy_ok and v.level4):
            caught += 1
    t.cases = ctx.count
    t.worst = float(caught)
    if caught == 0:
        t.failures = 1
        t.witness = {"detail": "mutation not detected"}
    t.note += f"; detected on {caught} instruments"
    return t


FAMILIES: tuple = (
    fam_hierarchy,
    fam_eigenstate_level4,
    fam_ec_level2,
    fam_shift_level3,
    fam_shift_structure,
    fam_stationary_unital,
    fam_th4,
    fam_tradeoff,
    fam_cp_tradeoff,
    fam_clockwork,
    fam_birkhoff,
    fam_realize,
    fam_entropy_bounds,
    fam_window,
    fam_tripartite,
    fam_negative_control,
)


@dataclass
class SuiteReport:
    seed: int
    dims: tuple
    count: int
    families: list = field(default_factory=list)
    injected_bug: bool = False

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.families)

    def table(self) -> str:
        lines = [f"qwx suite  seed={self.seed}  dims={','.join(map(str, self.dims))}  count={self.count}"
                 + ("  INJECTED BUG" if self.injected_bug else ""),
                 f"{'family':<34} {'cases':>6} {'fail':>5} {'verdict':<5} worst_margin"]
        for f in self.families:
            lines.append(f"{f.name:<34} {f.cases:>6} {f.failures:>5} {'PASS' if f.passed else 'FAIL':<5} "
                         f"{_fmt(f.worst)}")
        for f in self.families:
            if f.witness is not None:
                lines.append(f"witness {f.name}: {_witness_str(f.witness)}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"({sum(f.passed for f in self.families)}/{len(self.families)} families)")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {
            "seed": self.seed, "dims": list(self.dims), "count": self.count, "injected_bug": self.injected_bug,
            "passed": self.passed,
            "families": [{"name": f.name, "cases": f.cases, "failures": f.failures, "worst_margin": f.worst,
                          "passed": f.passed, "witness": f.witness, "note": f.note} for f in self.families],
        }


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else format(x, ".17g")


def _witness_str(w: dict) -> str:
    parts = []
    for k in sorted(w):
        v = w[k]
        parts.append(f"{k}={_fmt(v) if isinstance(v, float) else v}")
    return " ".join(parts)


def run_suite(seed: int = 0, dims: Sequence[int] = (2, 3, 4), count: int = 100,
              inject_bug: bool = False, families: Sequence | None = None) -> SuiteReport:
    """Run every property family and collect worst margins."""
    ctx = Context(tuple(int(d) for d in dims), int(count), DEFAULT_TOL, 1.0 if inject_bug else -1.0)
    rep = SuiteReport(int(seed), ctx.dims, ctx.count, injected_bug=inject_bug)
    for fam in FAMILIES if families is None else families:
        rng = np.random.default_rng([int(seed), FAMILIES.index(fam)])
        out = fam(ctx, rng)
        for tally in (out if isinstance(out, list) else [out]):
            rep.families.append(tally.result())
    return rep
