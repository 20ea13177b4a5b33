"""Classical work extraction and its relation to level-4 instruments.

Transition matrices are column-stochastic: ``T[x, x'] = T(x | x')`` is the
probability of moving from ``x'`` to ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .hamiltonics import SpectralHamiltonian, lattice_analyze, pinch
from .instrument import (
    CPWorkExtraction,
    EntropyBound,
    WorkDistribution,
    classify,
    energy_tolerance,
    k_distributions,
    total_variation,
    work_distribution as quantum_work_distribution,
)
from .qcore import DEFAULT_TOL, DimensionError, PreconditionError, Tolerances, ValidationError, dag, opnorm
from .shiftinv import ShiftInvariantEngine, build_F, controlled_engine, engine_instrument


@dataclass(frozen=True, eq=False)
class ClassicalWorkExtraction:
    """Energy levels ``h`` and a column-stochastic transition matrix ``T``."""

    h: np.ndarray
    T: np.ndarray

    @classmethod
    def create(cls, h, T, tol: Tolerances = DEFAULT_TOL) -> "ClassicalWorkExtraction":
        h = np.asarray(h, dtype=float).reshape(-1)
        T = np.asarray(T, dtype=float)
        if T.shape != (len(h), len(h)):
            raise DimensionError(f"T has shape {T.shape}, expected {(len(h), len(h))}")
        if T.min() < -tol.eq:
            raise ValidationError(f"T has negative entry {T.min():.3e}")
        dev = float(np.max(np.abs(T.sum(axis=0) - 1.0)))
        if dev > tol.eq:
            raise ValidationError(f"columns of T do not sum to 1 (deviation {dev:.3e})")
        return cls(h, np.clip(T, 0.0, None))

    @property
    def n(self) -> int:
        return len(self.h)

    def is_bistochastic(self, tol: float = DEFAULT_TOL.eq) -> bool:
        return float(np.max(np.abs(self.T.sum(axis=1) - 1.0))) <= tol

    def energy_tolerance(self, tol: Tolerances) -> float:
        return tol.k * max(1.0, float(np.max(np.abs(self.h))), float(np.ptp(self.h)))

    def to_json(self) -> dict:
        return {"h": [float(x) for x in self.h], "T": [float(x) for x in self.T.reshape(-1)]}

    @classmethod
    def from_json(cls, obj, tol: Tolerances = DEFAULT_TOL, path: str = "classical") -> "ClassicalWorkExtraction":
        if not isinstance(obj, dict) or "h" not in obj or "T" not in obj:
            raise ValidationError(f"{path}: expected object with 'h' and 'T'")
        h = np.asarray(obj["h"], dtype=float)
        t = np.asarray(obj["T"], dtype=float)
        if t.ndim == 1:
            if t.size != h.size ** 2:
                raise ValidationError(f"{path}.T: expected {h.size ** 2} entries")
            t = t.reshape(h.size, h.size)
        return cls.create(h, t, tol)


def work_distribution(cwe: ClassicalWorkExtraction, P_X, tol: Tolerances = DEFAULT_TOL) -> WorkDistribution:
    """``Pr[w] = sum_{x, x': h(x) - h(x') = w} P(x) T(x' | x)``."""
    p = np.asarray(P_X, dtype=float).reshape(-1)
    if p.size != cwe.n or p.min() < -tol.eq or abs(p.sum() - 1.0) > tol.eq:
        raise ValidationError("P_X must be a probability vector of matching length")
    w = cwe.h[None, :] - cwe.h[:, None]  # [x', x] -> h(x) - h(x')
    joint = cwe.T * p[None, :]
    return WorkDistribution.from_samples(w.reshape(-1), joint.reshape(-1), cwe.energy_tolerance(tol))


def classical_description(ext: CPWorkExtraction, H: SpectralHamiltonian,
                          tol: Tolerances = DEFAULT_TOL, check: bool = True) -> ClassicalWorkExtraction:
    """``T(y | x) = sum_j <y|E_j(Pi_x)|y>`` in the eigenbasis of ``H``."""
    if check and not classify(ext, H, tol).level4:
        raise PreconditionError("classical description needs a level-4 CP-work extraction")
    kd = k_distributions(ext, H, tol)
    T = kd.p_jy_x.sum(axis=0)
    return ClassicalWorkExtraction.create(H.eigenvalues, T, tol)


@dataclass(frozen=True)
class Equivalence:
    quantum: WorkDistribution
    classical: WorkDistribution
    max_deviation: float
    tv: float


def quantum_classical_equivalence(ext: CPWorkExtraction, H: SpectralHamiltonian, rho_I: np.ndarray,
                                  tol: Tolerances = DEFAULT_TOL) -> Equivalence:
    """Quantum work distribution of ``ext`` on ``rho_I`` against its classical description.

    The classical input is the diagonal of ``rho_I`` in the eigenbasis of
    ``H``; the pinched state must be diagonal in that basis.
    """
    rho_I = np.asarray(rho_I, dtype=complex)
    pr = H.in_basis(pinch(H, rho_I))
    off = opnorm(pr - np.diag(np.diag(pr)))
    if off > tol.eq:
        raise PreconditionError(f"pinched state is not diagonal in the chosen eigenbasis ({off:.3e})")
    cwe = classical_description(ext, H, tol)
    ktol = energy_tolerance(ext, H, tol)
    q = quantum_work_distribution(ext, rho_I, ktol)
    c = work_distribution(cwe, np.clip(np.diag(pr).real, 0.0, None), tol)
    from .instrument import align

    _, pa, pb = align(q, c, ktol)
    return Equivalence(q, c, float(np.max(np.abs(pa - pb))), total_variation(q, c, ktol))


# ---------------------------------------------------------------------------
# Birkhoff decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BirkhoffDecomposition:
    """``T = sum_l weights[l] Perm(perms[l])`` with ``Perm(f)[f(x'), x'] = 1``."""

    weights: tuple
    perms: tuple

    def matrix(self, n: int | None = None) -> np.ndarray:
        n = len(self.perms[0]) if n is None else n
        T = np.zeros((n, n))
        for w, f in zip(self.weights, self.perms):
            T[list(f), list(range(n))] += w
        return T


def permutation_matrix(f) -> np.ndarray:
    n = len(f)
    P = np.zeros((n, n))
    P[list(f), list(range(n))] = 1.0
    return P


def _has_perfect_matching(support: np.ndarray) -> bool:
    m = maximum_bipartite_matching(csr_matrix(support.astype(np.int8)), perm_type="column")
    return bool(np.all(m >= 0))


def _lex_first_matching(support: np.ndarray) -> tuple:
    """Lexicographically smallest permutation (as ``f(x')`` per column) inside ``support``."""
    n = support.shape[0]
    f = []
    sup = support.copy()
    for col in range(n):
        for row in range(n):
            if not sup[row, col]:
                continue
            trial = sup.copy()
            trial[row, :] = False
            trial[:, col] = False
            trial[row, col] = True
            if _has_perfect_matching(trial):
                sup = trial
                f.append(row)
                break
        else:
            raise ValidationError("no perfect matching on the support")
    return tuple(f)


def birkhoff_decompose(T, tol: Tolerances = DEFAULT_TOL, zero_tol: float = 1e-14) -> BirkhoffDecomposition:
    """Greedy decomposition of a bi-stochastic matrix into permutations.

    Each step takes the permutation that maximizes its smallest entry
    (bottleneck matching, ties broken by lexicographic order) and removes it
    with that weight, which zeroes at least one entry.
    """
    T = np.asarray(T, dtype=float)
    n = T.shape[0]
    if T.shape != (n, n):
        raise DimensionError("T must be square")
    if T.min() < -tol.eq or np.max(np.abs(T.sum(axis=0) - 1)) > tol.eq or np.max(np.abs(T.sum(axis=1) - 1)) > tol.eq:
        raise ValidationError("T is not bi-stochastic")
    R = np.clip(T, 0.0, None)
    weights, perms = [], []
    limit = (n - 1) ** 2 + 1
    while R.max() > zero_tol and len(weights) < limit + n:
        vals = np.unique(R[R > zero_tol])
        lo, hi = 0, len(vals) - 1
        # largest threshold keeping a perfect matching
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if _has_perfect_matching(R >= vals[mid]):
                lo = mid
            else:
                hi = mid - 1
        support = R >= vals[lo]
        if not _has_perfect_matching(support):
            break
        f = _lex_first_matching(support)
        w = float(min(R[f[c], c] for c in range(n)))
        for c in range(n):
            R[f[c], c] -= w
        R[R <= zero_tol] = 0.0
        weights.append(w)
        perms.append(f)
    return BirkhoffDecomposition(tuple(weights), tuple(perms))


# ---------------------------------------------------------------------------
# quantum constructions
# ---------------------------------------------------------------------------

def permutation_unitary(f, H: SpectralHamiltonian) -> np.ndarray:
    """Unitary ``|x> -> |f(x)>`` in the eigenbasis of ``H``."""
    return H.basis @ permutation_matrix(f).astype(complex) @ dag(H.basis)


def _matching_levels(cwe: ClassicalWorkExtraction, H: SpectralHamiltonian, tol: Tolerances) -> None:
    if cwe.n != H.dim:
        raise DimensionError(f"classical size {cwe.n} does not match Hamiltonian dim {H.dim}")
    if np.max(np.abs(cwe.h - H.eigenvalues)) > cwe.energy_tolerance(tol):
        raise ValidationError("classical levels must equal the eigenvalues of H in eigenbasis order")


@dataclass(frozen=True)
class UnistochasticCheck:
    matches_T: bool
    engine_matches: bool
    deviation_T: float
    deviation_engine: float


def unistochastic_check(U_I: np.ndarray, cwe: ClassicalWorkExtraction, H: SpectralHamiltonian,
                        tol: Tolerances = DEFAULT_TOL, M: int | None = None) -> UnistochasticCheck:
    """Compare ``T`` with ``|<x|U_I|x'>|^2`` and with the lifted engine's description."""
    _matching_levels(cwe, H, tol)
    tu = np.abs(H.in_basis(np.asarray(U_I, dtype=complex))) ** 2
    dev_t = float(np.max(np.abs(tu - cwe.T)))
    eng = build_F(U_I, H, M, tol=tol)
    te = classical_description(engine_instrument(eng, tol=tol), H, tol).T
    dev_e = float(np.max(np.abs(te - tu)))
    return UnistochasticCheck(dev_t <= tol.eq, dev_e <= tol.eq, dev_t, dev_e)


def standard_fq_from_bistochastic(cwe: ClassicalWorkExtraction, H: SpectralHamiltonian,
                                  tol: Tolerances = DEFAULT_TOL, M: int | None = None) -> ShiftInvariantEngine:
    """Engine controlled by a degenerate system whose state holds the Birkhoff weights.

    Branch ``a`` applies ``F[U_a]`` with ``U_a`` the permutation unitary of
    the ``a``-th Birkhoff term.
    """
    _matching_levels(cwe, H, tol)
    if not cwe.is_bistochastic(tol.eq):
        raise PreconditionError("transition matrix is not bi-stochastic")
    if not lattice_analyze(H, tol.lat).is_lattice:
        raise PreconditionError("internal Hamiltonian must be a lattice")
    bd = birkhoff_decompose(cwe.T, tol)
    us = [permutation_unitary(f, H) for f in bd.perms]
    w = np.asarray(bd.weights)
    rho_e2 = np.diag(w / w.sum()).astype(complex)
    return controlled_engine(us, H, rho_e2, M, tol)


def classical_work_entropy_bound(cwe: ClassicalWorkExtraction, P_X, tol: Tolerances = DEFAULT_TOL) -> EntropyBound:
    """Entropy of the classical work distribution against ``2 log N``."""
    wd = work_distribution(cwe, P_X, tol)
    n_levels = len(np.unique(np.round(cwe.h / cwe.energy_tolerance(tol))))
    s = wd.entropy()
    bound = 2.0 * float(np.log(n_levels))
    return EntropyBound(s, bound, s <= bound + tol.eq)
