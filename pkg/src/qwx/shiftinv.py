"""Shift-invariant ladder engines on a truncated ladder.

The ladder has sites ``-M..M`` with energies ``span * j``.  Internal basis
vector ``|x>`` is paired with ladder index ``-n_x``, where
``n_x = (h_x - h_min) / span`` is the integer offset of its energy, so the
total energy of ``|x, j>`` is ``h_min + span * (n_x + j)``.  The unitary
``F[U]`` applies ``U`` inside every total-energy sector that fits in the
truncation and acts as the identity on the few sectors cut by the edges.
All guarantees are stated for the safe window ``|j| <= M - Delta`` with
``Delta = max n_x - min n_x``.

Joint spaces are ordered ``internal (x) ladder``; with an auxiliary
degenerate system the internal part is itself ``I (x) E2``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .fqext import FQWorkExtraction, to_cp
from .hamiltonics import SpectralHamiltonian, from_energies, lattice_analyze, pinch
from .instrument import CPWorkExtraction, classify
from .qcore import (
    DEFAULT_TOL,
    DimensionError,
    PreconditionError,
    Tolerances,
    ValidationError,
    as_density,
    as_unitary,
    dag,
    opnorm,
)


class TruncationError(ValidationError):
    """The ladder truncation is too small for the requested construction."""


@dataclass(frozen=True)
class LadderSystem:
    """Truncated ladder: sites ``-M..M`` with energies ``span * j``.

    ``margin`` is the largest internal offset difference the ladder must
    absorb; the safe window is ``|j| <= M - margin``.
    """

    span: float
    M: int
    margin: int = 0

    def __post_init__(self):
        if not self.span > 0:
            raise ValidationError("ladder span must be positive")
        if self.M < 0 or self.margin < 0:
            raise ValidationError("ladder truncation and margin must be nonnegative")
        if self.margin > self.M:
            raise TruncationError(f"margin {self.margin} exceeds truncation M={self.M}")

    @property
    def dim(self) -> int:
        return 2 * self.M + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    @property
    def safe_radius(self) -> int:
        return self.M - self.margin

    def index(self, j: int) -> int:
        if abs(j) > self.M:
            raise TruncationError(f"site {j} outside the truncation M={self.M}")
        return int(j) + self.M

    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.span * self.sites).astype(complex)

    def spectral(self, tol: Tolerances = DEFAULT_TOL) -> SpectralHamiltonian:
        return from_energies(self.span * self.sites, tol)

    def displacement(self) -> np.ndarray:
        """``V|j> = |j+1>``; the top site is sent to zero by the truncation."""
        return np.eye(self.dim, k=-1, dtype=complex)

    def eigenstate(self, j: int) -> np.ndarray:
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        i = self.index(j)
        rho[i, i] = 1.0
        return rho

    def superposition(self, amplitudes: dict) -> np.ndarray:
        """Pure state ``sum_j a_j |j>`` (normalized)."""
        v = np.zeros(self.dim, dtype=complex)
        for j, a in amplitudes.items():
            v[self.index(int(j))] = a
        v /= np.linalg.norm(v)
        return np.outer(v, v.conj())

    def uniform_superposition(self, m: int) -> np.ndarray:
        """Equal-amplitude pure state on sites ``|j| <= m``."""
        return self.superposition({j: 1.0 for j in range(-m, m + 1)})

    def mixture(self, probs: dict) -> np.ndarray:
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        for j, p in probs.items():
            i = self.index(int(j))
            rho[i, i] += p
        return rho / np.trace(rho).real

    def safe_mask(self, shrink_top: int = 0) -> np.ndarray:
        r = self.safe_radius
        s = self.sites
        return (s >= -r) & (s <= r - shrink_top)


@dataclass(frozen=True, eq=False)
class ShiftInvariantEngine:
    """Joint unitary ``F`` built from an internal unitary and one or more ladders.

    Attributes
    ----------
    U_int : ndarray
        Unitary on the internal space (``I`` or ``I (x) E2``).
    H_int : SpectralHamiltonian
        Internal Hamiltonian (``H_I (x) 1`` when ``E2`` is present).
    H_I : SpectralHamiltonian
        Hamiltonian of the physical internal system ``I``.
    ladders : tuple of LadderSystem
    offsets : ndarray of int, shape (d_int, L)
        Ladder offsets of every internal eigenvector.
    F : ndarray
        Joint unitary on ``internal (x) ladder_1 (x) ... (x) ladder_L``.
    rho_E2 : ndarray or None
        Default state of the auxiliary degenerate system.
    """

    U_int: np.ndarray
    H_int: SpectralHamiltonian
    H_I: SpectralHamiltonian
    ladders: tuple
    offsets: np.ndarray
    F: np.ndarray
    rho_E2: np.ndarray | None = None
    branches: tuple = field(default=())

    @property
    def d_I(self) -> int:
        return self.H_I.dim

    @property
    def d_int(self) -> int:
        return self.H_int.dim

    @property
    def d_E2(self) -> int:
        return self.d_int // self.d_I

    @property
    def ladder(self) -> LadderSystem:
        return self.ladders[0]

    @property
    def ladder_dims(self) -> list:
        return [lad.dim for lad in self.ladders]

    @property
    def dim_E1(self) -> int:
        return int(np.prod(self.ladder_dims))

    def H_E1(self) -> np.ndarray:
        h = np.zeros((self.dim_E1, self.dim_E1), dtype=complex)
        for l, lad in enumerate(self.ladders):
            ops = [np.eye(x.dim) for x in self.ladders]
            ops[l] = lad.hamiltonian()
            term = ops[0]
            for o in ops[1:]:
                term = np.kron(term, o)
            h += term
        return h

    def displacement(self, l: int = 0) -> np.ndarray:
        """``1_int (x) V_l`` on the joint space."""
        ops = [np.eye(x.dim) for x in self.ladders]
        ops[l] = self.ladders[l].displacement()
        v = np.eye(self.d_int)
        for o in ops:
            v = np.kron(v, o)
        return v

    def ladder_state(self, rho_E1: np.ndarray | None) -> np.ndarray:
        if rho_E1 is not None:
            return np.asarray(rho_E1, dtype=complex)
        r = np.ones((1, 1), dtype=complex)
        for lad in self.ladders:
            r = np.kron(r, lad.eigenstate(0))
        return r

    def aux_state(self, rho_E2: np.ndarray | None) -> np.ndarray:
        if rho_E2 is not None:
            return np.asarray(rho_E2, dtype=complex)
        if self.rho_E2 is not None:
            return self.rho_E2
        r = np.zeros((self.d_E2, self.d_E2), dtype=complex)
        r[0, 0] = 1.0
        return r

    def fq(self, rho_E1: np.ndarray | None = None, rho_E2: np.ndarray | None = None,
           tol: Tolerances = DEFAULT_TOL) -> FQWorkExtraction:
        """The FQ-work extraction with external system ``E2 (x) ladders``."""
        r1 = self.ladder_state(rho_E1)
        r2 = self.aux_state(rho_E2)
        h_e = np.kron(np.eye(self.d_E2), self.H_E1())
        return FQWorkExtraction.create(h_e, self.F, np.kron(r2, r1), self.d_I, tol)

    def safe_weight_outside(self, rho_E1: np.ndarray) -> float:
        """Weight of a ladder state outside the safe window."""
        mask = np.ones(1, dtype=bool)
        for lad in self.ladders:
            mask = np.kron(mask, lad.safe_mask()).astype(bool)
        diag = np.real(np.diag(rho_E1))
        return float(np.sum(diag[~mask]))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _lattice_offsets(H: SpectralHamiltonian, h_E: float | None, tol: Tolerances) -> tuple[float, np.ndarray]:
    lat = lattice_analyze(H, tol.lat)
    if not lat.is_lattice:
        raise ValidationError("internal Hamiltonian is not a lattice; use build_multiladder")
    span = h_E if h_E is not None else (lat.span if lat.span is not None else 1.0)
    gaps = H.eigenvalues - H.levels[0]
    n = np.round(gaps / span)
    if np.max(np.abs(gaps - n * span), initial=0.0) > tol.lat * max(1.0, float(np.max(np.abs(gaps), initial=0.0))):
        raise ValidationError(f"ladder span {span} does not divide every internal energy gap")
    return float(span), n.astype(int).reshape(-1, 1)


def W_isometry(H: SpectralHamiltonian, ladder: LadderSystem, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """``W = sum_x Pi_x (x) |-n_x>`` from the internal space into ``internal (x) ladder``."""
    _, n = _lattice_offsets(H, ladder.span, tol)
    if n.size and (int(n.max()) > ladder.M):
        raise TruncationError(f"offset {int(n.max())} exceeds truncation M={ladder.M}")
    w = np.zeros((H.dim * ladder.dim, H.dim), dtype=complex)
    for x in range(H.dim):
        v = H.basis[:, x]
        site = np.zeros(ladder.dim)
        site[ladder.index(-int(n[x, 0]))] = 1.0
        w += np.outer(np.kron(v, site), v.conj())
    return w


build_W = W_isometry


def _ladder_unitary(u_eig: np.ndarray, offsets: np.ndarray, Ms: Sequence[int]) -> np.ndarray:
    """``F`` in eigen coordinates for integer offsets (d x L) and truncations ``Ms``."""
    d, L = offsets.shape
    dims = [2 * m + 1 for m in Ms]
    D = int(np.prod(dims))
    grid = np.array(list(itertools.product(*[range(-m, m + 1) for m in Ms])), dtype=int).reshape(D, L)
    Ms_arr = np.asarray(Ms, dtype=int)
    strides = np.array([int(np.prod(dims[l + 1:])) for l in range(L)], dtype=int)

    def flat(js: np.ndarray) -> np.ndarray:
        return ((js + Ms_arr) * strides).sum(axis=-1)

    N = d * D
    F = np.zeros((N, N), dtype=complex)
    for xp in range(d):
        s = grid + offsets[xp]  # total sector of |xp, j'>
        targets = s[None, :, :] - offsets[:, None, :]  # (d, D, L): site of |x> in the sector
        inside = np.all(np.abs(targets) <= Ms_arr, axis=2)
        full = np.all(inside, axis=0)
        cols = xp * D + np.arange(D)
        for x in range(d):
            rows = x * D + flat(targets[x][full])
            F[rows, cols[full]] = u_eig[x, xp]
        F[cols[~full], cols[~full]] = 1.0
    return F


def _to_original_basis(F_eig: np.ndarray, V: np.ndarray, D: int) -> np.ndarray:
    d = V.shape[0]
    f4 = F_eig.reshape(d, D, d, D)
    f4 = np.einsum("ax,xjyk->ajyk", V, f4)
    f4 = np.einsum("ajyk,by->ajbk", f4, V.conj())
    return f4.reshape(d * D, d * D)


def _assemble(U_int: np.ndarray, H_int: SpectralHamiltonian, H_I: SpectralHamiltonian, ladders: tuple,
              offsets: np.ndarray, rho_E2=None, branches=()) -> ShiftInvariantEngine:
    u_eig = H_int.in_basis(U_int)
    F_eig = _ladder_unitary(u_eig, offsets, [lad.M for lad in ladders])
    D = int(np.prod([lad.dim for lad in ladders]))
    F = _to_original_basis(F_eig, H_int.basis, D)
    return ShiftInvariantEngine(U_int, H_int, H_I, ladders, offsets, F, rho_E2, tuple(branches))


def build_F(U_I: np.ndarray, H: SpectralHamiltonian, ladder: LadderSystem | int | None = None,
            h_E: float | None = None, tol: Tolerances = DEFAULT_TOL, d_I: int | None = None,
            rho_E2: np.ndarray | None = None) -> ShiftInvariantEngine:
    """Shift-invariant, energy-conserving lift ``F[U_I]`` of an internal unitary.

    Parameters
    ----------
    U_I : ndarray
        Unitary on the internal space of ``H``.
    H : SpectralHamiltonian
        Lattice Hamiltonian of the internal space.
    ladder : LadderSystem or int, optional
        Ladder, or just its truncation ``M`` (default: margin + 1).  The span
        defaults to the lattice span and the margin is always recomputed.
    d_I : int, optional
        Dimension of the physical internal system when ``H`` also covers a
        degenerate auxiliary factor (``H = H_I (x) 1``).
    """
    u = as_unitary(U_I, tol, "U_I")
    if u.shape[0] != H.dim:
        raise DimensionError(f"U_I dim {u.shape[0]} does not match Hamiltonian dim {H.dim}")
    if isinstance(ladder, LadderSystem) and h_E is None:
        h_E = ladder.span
    span, n = _lattice_offsets(H, h_E, tol)
    delta = int(n.max() - n.min()) if n.size else 0
    if ladder is None:
        M = delta + 1
    elif isinstance(ladder, LadderSystem):
        M = ladder.M
    else:
        M = int(ladder)
    if M < delta:
        raise TruncationError(f"truncation M={M} is smaller than the offset range {delta}")
    lad = LadderSystem(span, M, delta)
    H_I = H
    if d_I is not None and d_I != H.dim:
        if H.dim % d_I:
            raise DimensionError(f"internal dim {H.dim} is not a multiple of d_I={d_I}")
        H_I = _physical_factor(H, d_I, tol)
    return _assemble(u, H, H_I, (lad,), n, rho_E2)


def _physical_factor(H: SpectralHamiltonian, d_I: int, tol: Tolerances) -> SpectralHamiltonian:
    from .hamiltonics import decompose

    n = H.dim // d_I
    # H = H_I (x) 1_n, so the first block row reproduces H_I
    h_i = H.matrix.reshape(d_I, n, d_I, n)[:, 0, :, 0]
    return decompose(h_i, tol)


def controlled_engine(unitaries: Sequence[np.ndarray], H_I: SpectralHamiltonian, rho_E2: np.ndarray,
                      M: int | None = None, tol: Tolerances = DEFAULT_TOL) -> ShiftInvariantEngine:
    """Engine ``sum_a F[U_a] (x) |a><a|`` controlled by a degenerate system ``E2``."""
    k = len(unitaries)
    rho_E2 = as_density(rho_E2, tol, "rho_E2")
    if rho_E2.shape != (k, k):
        raise DimensionError(f"rho_E2 must be {k}x{k}")
    u_int = np.zeros((H_I.dim * k, H_I.dim * k), dtype=complex)
    for a, ua in enumerate(unitaries):
        proj = np.zeros((k, k))
        proj[a, a] = 1.0
        u_int += np.kron(as_unitary(ua, tol), proj)
    h_int = H_I.tensor_identity(k)
    eng = build_F(u_int, h_int, M, tol=tol, d_I=H_I.dim, rho_E2=rho_E2)
    return ShiftInvariantEngine(eng.U_int, eng.H_int, H_I, eng.ladders, eng.offsets, eng.F, rho_E2,
                                tuple(np.asarray(u, dtype=complex) for u in unitaries))


def build_multiladder(U_I: np.ndarray, H: SpectralHamiltonian, spans: Sequence[float], Ms: Sequence[int],
                      tol: Tolerances = DEFAULT_TOL, nmax: int = 16, Q: int = 64) -> ShiftInvariantEngine:
    """``F[U_I]`` on ``L <= 2`` ladders with rationally independent spans.

    Every internal gap must be an integer combination of the spans (found by
    search over coefficients in ``[-nmax, nmax]``).  Two spans whose ratio is
    within ``tol.lat`` of a fraction with denominator at most ``Q`` are
    rejected as rationally dependent.
    """
    spans = [float(s) for s in spans]
    Ms = [int(m) for m in Ms]
    L = len(spans)
    if L not in (1, 2) or len(Ms) != L:
        raise ValidationError("build_multiladder supports one or two ladders with one truncation each")
    if any(not s > 0 for s in spans):
        raise ValidationError("ladder spans must be positive")
    if L == 2:
        r = spans[1] / spans[0]
        if abs(r - float(Fraction(r).limit_denominator(Q))) <= tol.lat:
            raise ValidationError(f"spans {spans} are rationally dependent")
    u = as_unitary(U_I, tol, "U_I")
    gaps = H.levels - H.levels[0]
    lvl_off = np.zeros((H.n_levels, L), dtype=int)
    rng_ = range(-nmax, nmax + 1)
    cands = np.array(list(itertools.product(rng_, repeat=L)), dtype=int)
    cand_e = cands @ np.asarray(spans)
    order = np.lexsort(tuple(cands.T[::-1]) + (np.abs(cands).sum(axis=1),))
    cands, cand_e = cands[order], cand_e[order]
    for i, g in enumerate(gaps):
        err = np.abs(cand_e - g)
        k = int(np.argmin(err))  # first minimal entry in (L1 norm, lexicographic) order
        if err[k] > tol.lat * max(1.0, abs(g)):
            raise ValidationError(f"gap {g!r} is not an integer combination of spans {spans}")
        lvl_off[i] = cands[k]
    offsets = lvl_off[H.labels]
    margins = offsets.max(axis=0) - offsets.min(axis=0)
    ladders = []
    for l in range(L):
        if Ms[l] < margins[l]:
            raise TruncationError(f"ladder {l}: truncation {Ms[l]} smaller than offset range {margins[l]}")
        ladders.append(LadderSystem(spans[l], Ms[l], int(margins[l])))
    return _assemble(u, H, H, tuple(ladders), offsets)


def is_deterministic(U_I: np.ndarray, tol: float = 1e-10) -> bool:
    """Whether every column has exactly one nonzero entry, of unit modulus."""
    a = np.abs(np.asarray(U_I))
    nz = a > tol
    return bool(np.all(nz.sum(axis=0) == 1) and np.allclose(a[nz], 1.0, atol=tol))


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def _window_mask(ladders: Sequence[LadderSystem], shifted: int | None) -> np.ndarray:
    mask = np.ones(1, dtype=bool)
    for l, lad in enumerate(ladders):
        mask = np.kron(mask, lad.safe_mask(1 if l == shifted else 0)).astype(bool)
    return mask


def check_shift_invariant(F: np.ndarray, ladders, d_int: int | None = None,
                          tol: Tolerances = DEFAULT_TOL) -> tuple[bool, float]:
    """``||(F V_l - V_l F) P||`` for every ladder ``l``.

    ``P`` projects onto ladder states in the safe window whose displaced
    image stays in the window.
    """
    if isinstance(ladders, ShiftInvariantEngine):
        d_int = ladders.d_int
        ladders = ladders.ladders
    if isinstance(ladders, LadderSystem):
        ladders = (ladders,)
    D = int(np.prod([lad.dim for lad in ladders]))
    F = np.asarray(F, dtype=complex)
    if d_int is None:
        d_int = F.shape[0] // D
    if F.shape != (d_int * D, d_int * D):
        raise DimensionError(f"F shape {F.shape} does not match {d_int} x {D}")
    worst = 0.0
    for l in range(len(ladders)):
        ops = [np.eye(x.dim) for x in ladders]
        ops[l] = ladders[l].displacement()
        v = np.eye(d_int)
        for o in ops:
            v = np.kron(v, o)
        cols = np.kron(np.ones(d_int, dtype=bool), _window_mask(ladders, l)).astype(bool)
        comm = (F @ v[:, cols]) - (v @ F[:, cols])
        worst = max(worst, opnorm(comm))
    return worst <= tol.eq, worst


def _require_safe(engine: ShiftInvariantEngine, rho_E1: np.ndarray, tol: Tolerances) -> None:
    if rho_E1.shape != (engine.dim_E1, engine.dim_E1):
        raise DimensionError(f"ladder state shape {rho_E1.shape}, expected {engine.dim_E1}")
    out = engine.safe_weight_outside(rho_E1)
    if out > tol.eq:
        raise PreconditionError(f"ladder state has weight {out:.3e} outside the safe window")


def engine_instrument(engine: ShiftInvariantEngine, rho_E1: np.ndarray | None = None,
                      rho_E2: np.ndarray | None = None, tol: Tolerances = DEFAULT_TOL) -> CPWorkExtraction:
    """CP-work extraction of the engine with external state ``rho_E2 (x) rho_E1``."""
    r1 = engine.ladder_state(rho_E1)
    _require_safe(engine, r1, tol)
    return to_cp(engine.fq(r1, rho_E2, tol), engine.H_I)


def _ext_output_map(engine: ShiftInvariantEngine, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Outputs ``Tr_{I,E1} F(|a><b| (x) r2 (x) r1)F^dag`` for all ``a, b``, shape (d, d, d2, d2)."""
    d, d2, D = engine.d_I, engine.d_E2, engine.dim_E1
    rho_e = np.kron(r2, r1)
    q, vecs = np.linalg.eigh(rho_e)
    keep = q > 1e-14
    q, vecs = q[keep], vecs[:, keep]
    # columns F(|a> (x) |phi_k>) for all a, k
    f4 = engine.F.reshape(d * d2 * D, d, d2 * D)
    psi = np.einsum("nae,ek->ank", f4, vecs)  # (a, n, k)
    psi = psi.reshape(d, d, d2, D, len(q))  # (a, i, c, e1, k)
    return np.einsum("aicek,bidek,k->abcd", psi, psi.conj(), q)


def check_stationary(engine: ShiftInvariantEngine, rho_E2: np.ndarray | None = None,
                     rho_E1: np.ndarray | None = None, tol: Tolerances = DEFAULT_TOL) -> tuple[bool, float]:
    """``Tr_{I,E1} F(X (x) rho_E2 (x) rho_E1)F^dag = Tr(X) rho_E2`` for all ``X``.

    Checked on the matrix units of ``I``, which span every input.  Engines
    without an auxiliary system pass trivially.
    """
    if engine.d_E2 == 1:
        return True, 0.0
    r1 = engine.ladder_state(rho_E1)
    _require_safe(engine, r1, tol)
    r2 = engine.aux_state(rho_E2)
    out = _ext_output_map(engine, r1, r2)
    worst = 0.0
    for a in range(engine.d_I):
        for b in range(engine.d_I):
            target = r2 if a == b else np.zeros_like(r2)
            worst = max(worst, opnorm(out[a, b] - target))
    return worst <= tol.eq, worst


def stationary_implies_unital(engine: ShiftInvariantEngine, rho_E1: np.ndarray | None = None,
                              rho_E2: np.ndarray | None = None,
                              tol: Tolerances = DEFAULT_TOL) -> tuple[bool, bool]:
    """``(stationary, unital)`` for the engine's instrument."""
    st, _ = check_stationary(engine, rho_E2, rho_E1, tol)
    ext = engine_instrument(engine, rho_E1, rho_E2, tol)
    return st, classify(ext, engine.H_I, tol).unital


def average_work(engine: ShiftInvariantEngine, rho_I: np.ndarray, rho_E1: np.ndarray | None = None,
                 rho_E2: np.ndarray | None = None, tol: Tolerances = DEFAULT_TOL) -> float:
    """Mean work ``sum_j w_j Tr E_j(rho_I)`` of the engine's instrument."""
    ext = engine_instrument(engine, rho_E1, rho_E2, tol)
    rho_I = np.asarray(rho_I, dtype=complex)
    return float(sum(o.w * np.trace(o.apply(rho_I)).real for o in ext.outcomes))


def internal_energy_drop(U_I: np.ndarray, H_I: SpectralHamiltonian, rho_I: np.ndarray,
                         pinched: bool = True) -> float:
    """``Tr rho H - Tr H U rho' U^dag`` with ``rho'`` the pinched (or raw) input.

    With an eigenstate ladder the engine's mean work equals the pinched
    form; the two forms coincide when ``rho_I`` commutes with ``H_I``.
    """
    rho_I = np.asarray(rho_I, dtype=complex)
    r = pinch(H_I, rho_I) if pinched else rho_I
    h = H_I.matrix
    return float(np.trace(rho_I @ h).real - np.trace(h @ U_I @ r @ dag(U_I)).real)
