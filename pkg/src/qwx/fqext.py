"""Fully-quantum work extractions: unitary dilations with an external system.

The joint space is ordered ``I (x) E``.  Outcome ``j`` is the ``j``-th
distinct energy of the external Hamiltonian, with work
``w_j = h_{E,j} - Tr H_E rho_E``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hamiltonics import SpectralHamiltonian, decompose, lattice_analyze
from .instrument import CPWorkExtraction, Outcome, classify
from .qcore import (
    DEFAULT_TOL,
    DimensionError,
    PreconditionError,
    Tolerances,
    ValidationError,
    as_density,
    as_unitary,
    dag,
    haar_unitary,
    hermitian_log_phase,
    opnorm,
    partial_trace,
    unitary_exp,
    von_neumann_entropy,
)

_KRAUS_CUTOFF = 1e-28
_EIG_CUTOFF = 1e-14


@dataclass(frozen=True, eq=False)
class FQWorkExtraction:
    """External Hamiltonian, joint unitary and external initial state."""

    H_E: SpectralHamiltonian
    U: np.ndarray
    rho_E: np.ndarray
    dim_I: int

    @classmethod
    def create(cls, H_E, U, rho_E, dim_I: int | None = None, tol: Tolerances = DEFAULT_TOL) -> "FQWorkExtraction":
        he = H_E if isinstance(H_E, SpectralHamiltonian) else decompose(H_E, tol)
        rho = as_density(rho_E, tol, "rho_E")
        if rho.shape[0] != he.dim:
            raise DimensionError(f"rho_E dim {rho.shape[0]} does not match H_E dim {he.dim}")
        u = as_unitary(U, tol, "U")
        if dim_I is None:
            if u.shape[0] % he.dim:
                raise DimensionError(f"U dim {u.shape[0]} is not a multiple of the external dim {he.dim}")
            dim_I = u.shape[0] // he.dim
        if u.shape[0] != dim_I * he.dim:
            raise DimensionError(f"U dim {u.shape[0]} != {dim_I} * {he.dim}")
        return cls(he, u, rho, int(dim_I))

    @property
    def dim_E(self) -> int:
        return self.H_E.dim

    def mean_external_energy(self) -> float:
        return float(np.trace(self.H_E.matrix @ self.rho_E).real)

    def works(self) -> np.ndarray:
        return self.H_E.levels - self.mean_external_energy()

    def total_hamiltonian(self, H_I: SpectralHamiltonian) -> np.ndarray:
        return np.kron(H_I.matrix, np.eye(self.dim_E)) + np.kron(np.eye(self.dim_I), self.H_E.matrix)


def _check_internal(F: FQWorkExtraction, H_I: SpectralHamiltonian | None) -> None:
    if H_I is not None and H_I.dim != F.dim_I:
        raise DimensionError(f"H_I dim {H_I.dim} does not match the internal dim {F.dim_I}")


def to_cp(F: FQWorkExtraction, H_I: SpectralHamiltonian | None = None) -> CPWorkExtraction:
    """The CP-work extraction realized by measuring ``H_E`` after ``U``.

    One Kraus operator per pair (eigenvector of ``rho_E``, basis vector of
    the outcome sector); negligible operators are dropped.
    """
    _check_internal(F, H_I)
    dI, dE = F.dim_I, F.dim_E
    q, vecs = np.linalg.eigh(F.rho_E)
    ut = F.U.reshape(dI, dE, dI, dE)
    branches = []
    for k in range(len(q)):
        if q[k] > _EIG_CUTOFF:
            # K[e_out] = sqrt(q) (1 (x) <e_out|) U (1 (x) |v_k>)
            branches.append(np.sqrt(q[k]) * np.einsum("aebf,f->eab", ut, vecs[:, k]))
    works = F.works()
    outs = []
    for i in range(F.H_E.n_levels):
        cols = F.H_E.sector_columns(i)
        kraus = []
        for br in branches:
            proj = np.einsum("eb,eij->bij", cols.conj(), br)
            for a in proj:
                if np.vdot(a, a).real > _KRAUS_CUTOFF:
                    kraus.append(a)
        outs.append(Outcome(float(works[i]), tuple(kraus)))
    return CPWorkExtraction(dI, tuple(outs))


def check_energy_conserving(F: FQWorkExtraction, H_I: SpectralHamiltonian,
                            tol: Tolerances = DEFAULT_TOL) -> tuple[bool, float]:
    """``||[U, H_I (x) 1 + 1 (x) H_E]||`` against ``tol.eq`` times the energy scale."""
    _check_internal(F, H_I)
    ht = F.total_hamiltonian(H_I)
    c = opnorm(F.U @ ht - ht @ F.U)
    return c <= tol.eq * max(1.0, opnorm(ht)), c


def random_energy_conserving_unitary(H_tot: SpectralHamiltonian, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary block inside every eigenspace of ``H_tot``."""
    u = np.zeros((H_tot.dim, H_tot.dim), dtype=complex)
    for i in range(H_tot.n_levels):
        v = H_tot.sector_columns(i)
        u += v @ haar_unitary(v.shape[1], rng) @ dag(v)
    return u


def _complete_unitary(cols: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of the columns' span."""
    if cols.shape[1] == cols.shape[0]:
        return np.zeros((cols.shape[0], 0), dtype=complex)
    return scipy.linalg.null_space(dag(cols))


def _stinespring_isometry(ext: CPWorkExtraction) -> tuple[np.ndarray, list]:
    """Isometry ``|psi> -> sum_{j,l} A_{jl}|psi> (x) |j,l>`` and the labels ``(j, l)``."""
    labels = [(j, l) for j, o in enumerate(ext.outcomes) for l in range(len(o.kraus))]
    d, n = ext.dim, len(labels)
    iso = np.zeros((d * n, d), dtype=complex)
    for b, (j, l) in enumerate(labels):
        a = ext.outcomes[j].kraus[l]
        iso[b::n, :] = a  # rows (y, b) in I (x) E2 ordering
    return iso, labels


def realize(ext: CPWorkExtraction, H_I: SpectralHamiltonian, energy_conserving: bool | None = None,
            tol: Tolerances = DEFAULT_TOL) -> FQWorkExtraction:
    """Unitary dilation whose external energy measurement reproduces ``ext``.

    With ``energy_conserving`` unset the energy-conserving construction is
    used whenever ``ext`` is level-4 and ``H_I`` is a lattice; otherwise a
    plain Stinespring dilation with a ready state at energy zero is used.
    The reproduced instrument agrees with ``ext`` after merging outcomes of
    equal work; the dilation may add outcomes whose maps vanish.
    """
    if ext.dim != H_I.dim:
        raise DimensionError(f"instrument dim {ext.dim} does not match H_I dim {H_I.dim}")
    if energy_conserving is None:
        energy_conserving = classify(ext, H_I, tol).level4 and lattice_analyze(H_I, tol.lat).is_lattice
    if energy_conserving:
        return _realize_energy_conserving(ext, H_I, tol)
    return _realize_stinespring(ext, tol)


def _realize_stinespring(ext: CPWorkExtraction, tol: Tolerances) -> FQWorkExtraction:
    iso, labels = _stinespring_isometry(ext)
    d, n = ext.dim, len(labels)
    dE = n + 1  # index 0 is the ready state
    big = np.zeros((d * dE, d), dtype=complex)
    for b in range(n):
        big[b + 1::dE, :] = iso[b::n, :]
    comp = _complete_unitary(big)
    u = np.zeros((d * dE, d * dE), dtype=complex)
    ready_cols = [x * dE for x in range(d)]
    other = [c for c in range(d * dE) if c not in set(ready_cols)]
    u[:, ready_cols] = big
    u[:, other] = comp
    energies = np.array([0.0] + [ext.outcomes[j].w for j, _ in labels])
    rho = np.zeros((dE, dE), dtype=complex)
    rho[0, 0] = 1.0
    return FQWorkExtraction.create(np.diag(energies), u, rho, d, tol)


def _realize_energy_conserving(ext: CPWorkExtraction, H_I: SpectralHamiltonian,
                               tol: Tolerances) -> FQWorkExtraction:
    from .shiftinv import LadderSystem, build_F

    if not classify(ext, H_I, tol).level4:
        raise PreconditionError("energy-conserving realization needs a level-4 instrument")
    lat = lattice_analyze(H_I, tol.lat)
    if not lat.is_lattice:
        raise PreconditionError("energy-conserving realization needs a lattice internal Hamiltonian")
    iso, labels = _stinespring_isometry(ext)
    d, n = ext.dim, len(labels)
    ktol = tol.k * max(H_I.energy_scale(), float(np.max(np.abs(ext.works))))
    zero_work = all(abs(ext.outcomes[j].w) <= ktol for j, _ in labels)
    h_int = H_I.tensor_identity(n)
    if zero_work:
        # each Kraus operator preserves the sectors: complete the isometry sector by sector
        e0 = np.eye(n)[:, :1]
        u_int = np.zeros((d * n, d * n), dtype=complex)
        for i in range(H_I.n_levels):
            vsec = h_int.sector_columns(i)
            vin = H_I.sector_columns(i)
            inputs = np.kron(vin, e0)
            img = iso @ vin
            rest_in = vsec @ _complete_unitary(dag(vsec) @ inputs)
            rest_out = vsec @ _complete_unitary(dag(vsec) @ img)
            u_int += np.hstack([img, rest_out]) @ dag(np.hstack([inputs, rest_in]))
        he = decompose(np.zeros((n, n)), tol)
        rho = np.zeros((n, n), dtype=complex)
        rho[0, 0] = 1.0
        return FQWorkExtraction.create(he, u_int, rho, d, tol)

    u_int = np.zeros((d * n, d * n), dtype=complex)
    comp = _complete_unitary(iso)
    cols0 = [x * n for x in range(d)]
    other = [c for c in range(d * n) if c not in set(cols0)]
    u_int[:, cols0] = iso
    u_int[:, other] = comp
    delta = int(max(lat.offsets) - min(lat.offsets)) if lat.offsets else 0
    span = lat.span if lat.span is not None else 1.0
    ladder = LadderSystem(span, delta + 1, delta)
    engine = build_F(u_int, h_int, ladder, tol=tol, d_I=d)
    rho_e2 = np.zeros((n, n), dtype=complex)
    rho_e2[0, 0] = 1.0
    return engine.fq(ladder.eigenstate(0), rho_e2)


def eigenstate_iff_level4(F: FQWorkExtraction, H_I: SpectralHamiltonian,
                          tol: Tolerances = DEFAULT_TOL) -> tuple[bool, bool]:
    """``(rho_E lies in one H_E eigenspace, CP(F) is level-4)``.

    For energy-conserving ``F`` the two flags coincide.
    """
    ok, c = check_energy_conserving(F, H_I, tol)
    if not ok:
        raise PreconditionError(f"F is not energy conserving (commutator {c:.3e})")
    lhs = eigenspace_supported(F.H_E, F.rho_E, tol)
    rhs = classify(to_cp(F, H_I), H_I, tol).level4
    return lhs, rhs


def eigenspace_supported(H: SpectralHamiltonian, rho: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Whether ``rho`` has weight ``>= 1 - tol.eq`` in a single sector of ``H``."""
    return any(float(np.trace(H.projector(i) @ rho).real) >= 1.0 - tol.eq for i in range(H.n_levels))


@dataclass(frozen=True)
class ClockworkResult:
    B: np.ndarray
    t0: float
    B_norm: float
    recon_error: float


def clockwork_decompose(U: np.ndarray, H_tot: SpectralHamiltonian, eps: float,
                        tol: Tolerances = DEFAULT_TOL) -> ClockworkResult:
    """Hermitian ``B`` with ``||B|| <= eps`` and ``U = exp(i t0 (H_tot + B))``, ``t0 = pi/eps``.

    ``U`` is diagonalized inside each energy sector; for an eigenphase
    ``theta`` at energy ``h`` the winding number
    ``n = round((theta - t0 h) / 2 pi)`` leaves a remainder of modulus at most
    ``pi`` that ``t0 B`` absorbs.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    u = as_unitary(U, tol)
    if u.shape != (H_tot.dim, H_tot.dim):
        raise DimensionError(f"U shape {u.shape} does not match H_tot dim {H_tot.dim}")
    c = opnorm(u @ H_tot.matrix - H_tot.matrix @ u)
    if c > tol.eq * max(1.0, opnorm(H_tot.matrix)):
        raise PreconditionError(f"U does not commute with H_tot (commutator {c:.3e})")
    t0 = np.pi / eps
    b = np.zeros_like(u)
    for i in range(H_tot.n_levels):
        v = H_tot.sector_columns(i)
        block = dag(v) @ u @ v
        # restore exact unitarity lost to projection noise before taking the log
        w, _, vh = np.linalg.svd(block)
        lp = hermitian_log_phase(w @ vh, tol)
        h = H_tot.levels[i]
        n = np.round((lp.phases - t0 * h) / (2 * np.pi))
        rem = (lp.phases - t0 * h - 2 * np.pi * n) / t0
        vec = v @ lp.basis
        b += (vec * rem) @ dag(vec)
    b = 0.5 * (b + dag(b))
    recon = opnorm(unitary_exp(H_tot.matrix + b, t0) - u)
    return ClockworkResult(b, float(t0), opnorm(b), recon)


@dataclass(frozen=True)
class ExternalEntropyBound:
    entropy: float
    bound_2logN: float
    bound_log2N: float
    holds_2logN: bool
    holds_log2N: bool


def final_external_entropy_bound(F: FQWorkExtraction, H_I: SpectralHamiltonian, rho_I: np.ndarray,
                                 tol: Tolerances = DEFAULT_TOL) -> ExternalEntropyBound:
    """Entropy of the final external state against ``2 log N`` and ``log 2N``.

    ``N`` is the number of distinct internal energies.  Both candidate
    bounds are reported.
    """
    ok, c = check_energy_conserving(F, H_I, tol)
    if not ok:
        raise PreconditionError(f"F is not energy conserving (commutator {c:.3e})")
    lam = np.linalg.eigvalsh(F.rho_E)
    if lam[-1] < 1.0 - tol.eq:
        raise PreconditionError("rho_E must be pure")
    if not eigenspace_supported(F.H_E, F.rho_E, tol):
        raise PreconditionError("rho_E must be an eigenstate of H_E")
    if F.H_E.n_levels != F.H_E.dim:
        raise PreconditionError("H_E must be non-degenerate")
    rho_I = as_density(rho_I, tol, "rho_I")
    joint = F.U @ np.kron(rho_I, F.rho_E) @ dag(F.U)
    s = von_neumann_entropy(partial_trace(joint, [F.dim_I, F.dim_E], [1]), tol)
    n = H_I.n_levels
    b1, b2 = 2.0 * np.log(n), float(np.log(2 * n))
    return ExternalEntropyBound(s, b1, b2, s <= b1 + tol.eq, s <= b2 + tol.eq)
