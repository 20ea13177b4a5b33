"""Coherence versus work-measurability trade-offs.

The internal state is purified with a reference copy ``R`` of the internal
system.  The energy lost by the internal system, ``Z = H_R - H_I``, is
measured jointly on ``I (x) R`` after the dynamics, and its correlation with
the external system is compared with how well the dynamics approximates a
target internal unitary.

Fidelity conventions: :func:`entanglement_fidelity` returns the root value
``F_e``.  Trade-off margins use ``-log F_e**2``, which is the quantity that
matches the pairwise double sums of root fidelities used for ``I_F``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .fqext import FQWorkExtraction, to_cp
from .hamiltonics import SpectralHamiltonian
from .instrument import CPWorkExtraction, classify, energy_tolerance, merge_values
from .qcore import (
    DEFAULT_TOL,
    DimensionError,
    PreconditionError,
    Tolerances,
    ValidationError,
    as_density,
    as_unitary,
    binary_entropy,
    dag,
    entropy_of_gram,
    fidelity,
    fidelity_from_factors,
    opnorm,
    partial_trace,
    random_probability,
    random_pure_vector,
    renyi2_entropy,
    shannon_entropy,
    sqrtm_psd,
)
from .shiftinv import LadderSystem, build_F

#: ``-log`` of a fidelity below this value is reported as ``inf``.
FIDELITY_FLOOR = 1e-300


def _neg_log(x: float) -> float:
    return math.inf if x < FIDELITY_FLOOR else -math.log(x)


# ---------------------------------------------------------------------------
# purification
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PurifiedScenario:
    """Purification ``|Phi> = sum_x sqrt(p_x) |v_x> (x) |x>_R``.

    Attributes
    ----------
    H : SpectralHamiltonian
        Internal Hamiltonian.
    rho : ndarray
        Internal state, commuting with ``H``.
    V : ndarray
        Joint eigenbasis of ``H`` and ``rho`` (columns ``|v_x>``).
    energies : ndarray
        ``h_x`` of each column; also the diagonal of ``H_R``.
    probs : ndarray
        ``p_x`` of each column.
    phi : ndarray
        ``Phi[i, r]``, the purification as a ``d x d`` coefficient matrix.
    """

    H: SpectralHamiltonian
    rho: np.ndarray
    V: np.ndarray
    energies: np.ndarray
    probs: np.ndarray
    phi: np.ndarray

    @property
    def dim(self) -> int:
        return self.H.dim

    @property
    def H_R(self) -> np.ndarray:
        return np.diag(self.energies).astype(complex)

    def vector(self) -> np.ndarray:
        """``|Phi>`` on ``I (x) R``."""
        return self.phi.reshape(-1)

    def energy_tolerance(self, tol: Tolerances) -> float:
        return tol.k * self.H.energy_scale()


def purify(rho_I: np.ndarray, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL) -> PurifiedScenario:
    """Purify a state commuting with ``H`` in a joint eigenbasis."""
    rho = as_density(rho_I, tol, "rho_I")
    if rho.shape != (H.dim, H.dim):
        raise DimensionError(f"state dim {rho.shape[0]} does not match Hamiltonian dim {H.dim}")
    comm = opnorm(rho @ H.matrix - H.matrix @ rho)
    if comm > tol.eq * H.energy_scale():
        raise PreconditionError(f"rho_I does not commute with H_I (commutator {comm:.3e})")
    cols, energies, probs = [], [], []
    for k in range(H.n_levels):
        b = H.sector_columns(k)
        w, u = np.linalg.eigh(dag(b) @ rho @ b)
        cols.append(b @ u)
        energies.extend([H.levels[k]] * len(w))
        probs.extend(np.clip(w, 0.0, None))
    V = np.hstack(cols)
    probs = np.asarray(probs)
    probs = probs / probs.sum()
    phi = V * np.sqrt(probs)[None, :]
    return PurifiedScenario(H, rho, V, np.asarray(energies), probs, phi)


def _z_groups(sc: PurifiedScenario, tol: Tolerances) -> tuple[np.ndarray, np.ndarray]:
    """Bins of ``z = h_r - h_y`` over pairs ``(y, r)``; returns centers and a ``(d, d)`` index map."""
    h = sc.energies
    z = h[None, :] - h[:, None]  # [y, r]
    centers, idx = merge_values(z.reshape(-1), sc.energy_tolerance(tol))
    return centers, idx.reshape(z.shape)


def _bin(weights: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    np.add.at(out, idx.reshape(-1), np.asarray(weights).reshape(-1))
    return out


def target_z_distribution(sc: PurifiedScenario, U_I: np.ndarray, tol: Tolerances = DEFAULT_TOL):
    """``P~_Z(z) = <Phi| U_I^dag F_z U_I |Phi>``; returns ``(z_values, probs)``."""
    u = as_unitary(U_I, tol, "U_I")
    zv, idx = _z_groups(sc, tol)
    m = dag(sc.V) @ u @ sc.phi
    return zv, _bin(np.abs(m) ** 2, idx, len(zv))


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Channel:
    """Completely positive trace-preserving map given by Kraus operators."""

    kraus: tuple

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray], tol: Tolerances = DEFAULT_TOL) -> "Channel":
        ks = tuple(np.asarray(k, dtype=complex) for k in kraus)
        if not ks:
            raise ValidationError("channel needs at least one Kraus operator")
        d = ks[0].shape[1]
        if any(k.shape != (d, d) for k in ks):
            raise DimensionError("Kraus operators must be square and of equal size")
        dev = opnorm(sum(dag(k) @ k for k in ks) - np.eye(d))
        if dev > tol.eq:
            raise ValidationError(f"Kraus operators are not trace preserving (deviation {dev:.3e})")
        return cls(ks)

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        return sum(k @ rho @ dag(k) for k in self.kraus)

    def on_purification(self, phi: np.ndarray) -> list:
        """Factors ``K phi`` so that ``(Lambda (x) id)(|Phi><Phi|)`` has them as pure branches."""
        return [k @ phi for k in self.kraus]


def channel_of(F: FQWorkExtraction) -> Channel:
    """``Lambda(rho) = Tr_E U (rho (x) rho_E) U^dag``."""
    return Channel(tuple(to_cp(F).all_kraus()))


def unitary_channel(U: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> Channel:
    return Channel((as_unitary(U, tol),))


def depolarizing_dilation(d: int) -> FQWorkExtraction:
    """Swap with a maximally mixed copy of dimension ``d`` and zero Hamiltonian."""
    swap = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            swap[j * d + i, i * d + j] = 1.0
    return FQWorkExtraction.create(np.zeros((d, d)), swap, np.eye(d) / d, d)


def basis_action_check(ch: Channel, U_I: np.ndarray, H: SpectralHamiltonian | None = None,
                       tol: Tolerances = DEFAULT_TOL) -> tuple[bool, float]:
    """``<y|Lambda(|x><x|)|y> = |<y|U_I|x>|^2`` in the eigenbasis of ``H`` (computational if absent)."""
    u = np.asarray(U_I, dtype=complex)
    d = ch.dim
    B = np.eye(d, dtype=complex) if H is None else H.basis
    target = np.abs(dag(B) @ u @ B) ** 2
    got = np.zeros((d, d))
    for x in range(d):
        v = B[:, x]
        out = dag(B) @ ch(np.outer(v, v.conj())) @ B
        got[:, x] = np.real(np.diag(out))
    dev = float(np.max(np.abs(got - target)))
    return dev <= tol.eq, dev


def entropy_exchange(ch: Channel, sc: PurifiedScenario, tol: Tolerances = DEFAULT_TOL) -> float:
    """``S((Lambda (x) id_R)(|Phi><Phi|))``."""
    branches = np.stack([b.reshape(-1) for b in ch.on_purification(sc.phi)], axis=1)
    return entropy_of_gram(branches, tol)


def entanglement_fidelity(ch: Channel, U_I: np.ndarray, sc: PurifiedScenario) -> float:
    """Root entanglement fidelity: ``F_e**2 = <Phi|(U^dag (x) 1)(Lambda (x) id)(Phi)(U (x) 1)|Phi>``."""
    target = np.asarray(U_I, dtype=complex) @ sc.phi
    f2 = sum(abs(np.vdot(target, b)) ** 2 for b in ch.on_purification(sc.phi))
    return float(math.sqrt(min(max(f2, 0.0), 1.0)))


# ---------------------------------------------------------------------------
# the Z-E joint state
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ZJointState:
    """Classical-quantum state of the energy loss ``Z`` and the external system.

    ``factors[k]`` is a ``dim_E x r`` matrix ``X`` with
    ``rho_{E|z_k} = X X^dag``; only bins with probability above
    ``tol.prob`` keep a factor (others hold ``None``).
    """

    z_values: np.ndarray
    probs: np.ndarray
    factors: tuple
    dim_E: int

    def conditional(self, k: int) -> np.ndarray:
        x = self.factors[k]
        return x @ dag(x)

    def external_state(self) -> np.ndarray:
        return sum(p * self.conditional(k) for k, p in enumerate(self.probs) if self.factors[k] is not None)

    def support(self) -> list:
        return [k for k, x in enumerate(self.factors) if x is not None]

    def purity_deficit(self) -> float:
        """Largest ``1 - Tr rho_{E|z}^2`` over supported ``z``."""
        out = 0.0
        for k in self.support():
            x = self.factors[k]
            g = dag(x) @ x
            out = max(out, 1.0 - float(np.real(np.trace(g @ g))))
        return out


def pure_external_vector(F: FQWorkExtraction, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """State vector of a pure external state; raises otherwise."""
    w, v = np.linalg.eigh(F.rho_E)
    if 1.0 - w[-1] > tol.eq:
        raise PreconditionError(f"external state is not pure (largest eigenvalue {w[-1]:.12f})")
    return v[:, -1]


def purify_external(F: FQWorkExtraction) -> FQWorkExtraction:
    """Equivalent quartet with a pure external state on ``E (x) E'``.

    ``E'`` has dimension ``rank(rho_E)``, zero energy, and is untouched by
    the unitary.
    """
    q, vecs = np.linalg.eigh(F.rho_E)
    keep = q > 1e-14
    q, vecs = q[keep], vecs[:, keep]
    r = len(q)
    psi = sum(math.sqrt(q[k]) * np.kron(vecs[:, k], np.eye(r)[k]) for k in range(r))
    d = F.dim_I
    u = np.kron(F.U, np.eye(r))
    h = np.kron(F.H_E.matrix, np.eye(r))
    return FQWorkExtraction.create(h, u, np.outer(psi, psi.conj()), d)


def z_joint(sc: PurifiedScenario, F: FQWorkExtraction, tol: Tolerances = DEFAULT_TOL) -> ZJointState:
    """Joint state of ``Z`` and ``E`` after ``U`` acts on ``|Phi> (x) |phi_E>``."""
    if F.dim_I != sc.dim:
        raise DimensionError(f"FQ internal dim {F.dim_I} does not match scenario dim {sc.dim}")
    phi_e = pure_external_vector(F, tol)
    d, de = sc.dim, F.dim_E
    # columns of U acting on |x> (x) |phi_E>, arranged as [i, e, x]
    u = F.U.reshape(d, de, d, de)
    col = np.einsum("iexf,f->iex", u, phi_e)
    psi = np.einsum("iex,xr->ier", col, sc.phi)
    psi = np.einsum("iy,ier->yer", sc.V.conj(), psi)  # internal index in the joint eigenbasis
    zv, idx = _z_groups(sc, tol)
    probs = np.zeros(len(zv))
    factors = []
    for k in range(len(zv)):
        ys, rs = np.nonzero(idx == k)
        x = psi[ys, :, rs].T  # (e, pairs)
        p = float(np.real(np.vdot(x, x)))
        probs[k] = p
        factors.append(x / math.sqrt(p) if p > tol.prob else None)
    return ZJointState(zv, probs, tuple(factors), de)


def mutual_information(zj: ZJointState, tol: Tolerances = DEFAULT_TOL) -> tuple[float, float]:
    """``(I(Z;E), S(P_Z) - I(Z;E))``."""
    sup = zj.support()
    big = np.hstack([math.sqrt(zj.probs[k]) * zj.factors[k] for k in sup])
    s_e = entropy_of_gram(big, tol)
    cond = sum(zj.probs[k] * entropy_of_gram(zj.factors[k], tol) for k in sup)
    i = s_e - cond
    return float(i), float(shannon_entropy(zj.probs) - i)


def pairwise_fidelities(zj: ZJointState) -> tuple[np.ndarray, np.ndarray]:
    """Supported probabilities and the matrix of root fidelities between conditionals."""
    sup = zj.support()
    p = zj.probs[sup]
    n = len(sup)
    f = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            f[a, b] = f[b, a] = fidelity_from_factors(zj.factors[sup[a]], zj.factors[sup[b]])
    return p, f


def fidelity_mutual_information(zj: ZJointState) -> tuple[float, float, float]:
    """``(I_F, S_2(P_Z), S_2 - I_F)`` with ``I_F = -log sum P P F``."""
    p, f = pairwise_fidelities(zj)
    i_f = _neg_log(float(p @ f @ p))
    s2 = renyi2_entropy(zj.probs)
    return i_f, s2, s2 - i_f


# ---------------------------------------------------------------------------
# reports and margins
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TradeoffReport:
    """Trade-off metrics of one FQ scenario (natural logs)."""

    d_I: int
    S_e: float
    F_e: float
    S_PZ: float
    I_ZE: float
    dI: float
    I_F: float
    S2: float
    dIF: float
    margin_T2: float
    margin_T3: float
    fano_rhs: float
    fano_holds: bool
    purity_deficit: float
    target_matches: bool
    target_deviation: float
    neg_log_Fe2: float = field(default=0.0)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MarginCheck:
    margin: float
    holds: bool
    applicable: bool = True
    equality_expected: bool | None = None


def fano_bound(F_e: float, S_e: float, d_I: int, tol: Tolerances = DEFAULT_TOL) -> tuple[float, bool]:
    """``S_e <= h(F_e^2) + (1 - F_e^2) log(d_I^2 - 1)``."""
    f2 = min(max(F_e * F_e, 0.0), 1.0)
    tail = (1.0 - f2) * math.log(d_I * d_I - 1) if d_I > 1 else 0.0
    rhs = binary_entropy(f2) + tail
    return rhs, S_e <= rhs + tol.eq


def analyze(sc: PurifiedScenario, F: FQWorkExtraction, U_I: np.ndarray,
            tol: Tolerances = DEFAULT_TOL) -> TradeoffReport:
    """All trade-off quantities for the quartet ``F`` approximating ``U_I``."""
    ch = channel_of(F)
    s_e = entropy_exchange(ch, sc, tol)
    f_e = entanglement_fidelity(ch, U_I, sc)
    zj = z_joint(sc, F, tol)
    i_ze, d_i = mutual_information(zj, tol)
    i_f, s2, d_if = fidelity_mutual_information(zj)
    s_pz = shannon_entropy(zj.probs)
    nl = _neg_log(f_e * f_e)
    zt, pt = target_z_distribution(sc, U_I, tol)
    dev = float(np.max(np.abs(pt - zj.probs))) if len(zt) == len(zj.z_values) else math.inf
    rhs, ok = fano_bound(f_e, s_e, sc.dim, tol)
    return TradeoffReport(
        d_I=sc.dim, S_e=s_e, F_e=f_e, S_PZ=s_pz, I_ZE=i_ze, dI=d_i, I_F=i_f, S2=s2, dIF=d_if,
        margin_T2=s_e + d_i - s_pz, margin_T3=nl + d_if - s2, fano_rhs=rhs, fano_holds=ok,
        purity_deficit=zj.purity_deficit(), target_matches=dev <= tol.eq, target_deviation=dev,
        neg_log_Fe2=nl,
    )


def verify_tradeoff_entropy(r: TradeoffReport, tol: Tolerances = DEFAULT_TOL) -> MarginCheck:
    """``S_e + dI - S(P_Z) >= 0``; equality is expected for pure conditionals."""
    return MarginCheck(r.margin_T2, r.margin_T2 >= -tol.eq, True, r.purity_deficit < tol.eq)


def verify_tradeoff_fidelity(r: TradeoffReport, tol: Tolerances = DEFAULT_TOL) -> MarginCheck:
    """``-log F_e^2 + dI_F - S_2(P_Z) >= 0``; applicable when the target ``Z`` law matches."""
    return MarginCheck(r.margin_T3, r.margin_T3 >= -tol.eq, r.target_matches)


# ---------------------------------------------------------------------------
# uniform-window ladder engines
# ---------------------------------------------------------------------------

def closed_form_double_sum(pz: dict, pj: dict) -> float:
    """``sum_{z,z'} P(z) P(z') sum_j sqrt(P_J(j) P_J(j + z - z'))`` over integer ``z``."""
    total = 0.0
    for z, p in pz.items():
        for z2, p2 in pz.items():
            s = sum(math.sqrt(q * pj.get(j + z - z2, 0.0)) for j, q in pj.items())
            total += p * p2 * s
    return total


@dataclass(frozen=True)
class WindowResult:
    m: int
    l: int
    q: float
    S_e: float
    F_e: float
    bound: float
    holds: bool
    neg_log_Fe2: float
    I_F: float
    closed_form: float
    neg_log_closed: float
    report: TradeoffReport


def window_bound(U_I: np.ndarray, H: SpectralHamiltonian, rho_I: np.ndarray, m: int, l: int,
                 tol: Tolerances = DEFAULT_TOL) -> WindowResult:
    """Entropy exchange of ``F[U_I]`` with a uniform ladder superposition over ``2m+1`` sites.

    The ladder truncation is ``m`` plus the internal offset range, so the
    superposition fills the safe window.  ``l`` must bound the support of
    ``P_Z`` in ladder units, ``P_Z(h_E j) = 0`` for ``|j| >= l``.
    """
    if m < 0 or l < 1 or l > 2 * m + 1:
        raise ValidationError("need m >= 0 and 1 <= l <= 2m+1")
    probe = build_F(U_I, H, None, tol=tol)
    delta = probe.ladder.margin
    eng = build_F(U_I, H, m + delta, tol=tol)
    lad: LadderSystem = eng.ladder
    psi = lad.uniform_superposition(m)
    F = eng.fq(psi, tol=tol)
    sc = purify(rho_I, H, tol)
    rep = analyze(sc, F, U_I, tol)
    zj = z_joint(sc, F, tol)
    units = zj.z_values / lad.span
    pz = {}
    for k, p in enumerate(zj.probs):
        if p <= tol.prob:
            continue
        j = int(round(units[k]))
        if abs(units[k] - j) > tol.lat or abs(j) >= l:
            raise PreconditionError(f"P_Z has weight {p:.3e} at z/h_E = {units[k]:.6g}, outside |j| < {l}")
        pz[j] = pz.get(j, 0.0) + float(p)
    pj = {j: 1.0 / (2 * m + 1) for j in range(-m, m + 1)}
    cf = closed_form_double_sum(pz, pj)
    a = l / (2 * m + 1)
    q = 2 * a - a * a
    bound = binary_entropy(q) + q * (math.log(sc.dim ** 2 - 1) if sc.dim > 1 else 0.0)
    return WindowResult(m, l, q, rep.S_e, rep.F_e, bound, rep.S_e <= bound + tol.eq, rep.neg_log_Fe2,
                        rep.I_F, cf, _neg_log(cf), rep)


# ---------------------------------------------------------------------------
# CP-work extractions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CPTradeoff:
    S_e: float
    F_e: float
    S_PZ: float
    I_ZW: float
    dI: float
    I_F: float
    S2: float
    dIF: float
    margin_entropy: float
    margin_fidelity: float
    fidelity_applicable: bool
    level4: bool

    def as_dict(self) -> dict:
        return asdict(self)


def _classical_mi(pzw: np.ndarray) -> float:
    pz, pw = pzw.sum(axis=1), pzw.sum(axis=0)
    return shannon_entropy(pz) + shannon_entropy(pw) - shannon_entropy(pzw.reshape(-1))


def _classical_fidelity_mi(pzw: np.ndarray, tol: Tolerances) -> float:
    pz = pzw.sum(axis=1)
    keep = pz > tol.prob
    cond = pzw[keep] / pz[keep, None]
    bh = np.sqrt(cond) @ np.sqrt(cond).T
    return _neg_log(float(pz[keep] @ bh @ pz[keep]))


def cp_tradeoff(ext: CPWorkExtraction, U_I: np.ndarray, sc: PurifiedScenario,
                tol: Tolerances = DEFAULT_TOL) -> CPTradeoff:
    """Trade-off between ``sum_j E_j`` approximating ``U_I`` and the ``Z``-``W`` correlation."""
    if ext.dim != sc.dim:
        raise DimensionError(f"instrument dim {ext.dim} does not match scenario dim {sc.dim}")
    ch = Channel(tuple(ext.all_kraus()))
    s_e = entropy_exchange(ch, sc, tol)
    f_e = entanglement_fidelity(ch, U_I, sc)
    zv, idx = _z_groups(sc, tol)
    wv, widx = merge_values(ext.works, energy_tolerance(ext, sc.H, tol))
    pzw = np.zeros((len(zv), len(wv)))
    for j, o in enumerate(ext.outcomes):
        for a in o.kraus:
            m = dag(sc.V) @ a @ sc.phi
            pzw[:, widx[j]] += _bin(np.abs(m) ** 2, idx, len(zv))
    pz = pzw.sum(axis=1)
    s_pz = shannon_entropy(pz)
    i_zw = _classical_mi(pzw)
    i_f = _classical_fidelity_mi(pzw, tol)
    s2 = renyi2_entropy(pz)
    _, pt = target_z_distribution(sc, U_I, tol)
    return CPTradeoff(
        S_e=s_e, F_e=f_e, S_PZ=s_pz, I_ZW=i_zw, dI=s_pz - i_zw, I_F=i_f, S2=s2, dIF=s2 - i_f,
        margin_entropy=s_e + (s_pz - i_zw) - s_pz,
        margin_fidelity=_neg_log(f_e * f_e) + (s2 - i_f) - s2,
        fidelity_applicable=float(np.max(np.abs(pt - pz))) <= tol.eq,
        level4=classify(ext, sc.H, tol).level4,
    )


# ---------------------------------------------------------------------------
# tripartite fidelity relations
# ---------------------------------------------------------------------------

def max_product_fidelity(p: Sequence[float], states: Sequence[np.ndarray], rng: np.random.Generator,
                         restarts: int = 8, iters: int = 5000, tol: float = 1e-13) -> float:
    """``max_sigma sum_a p_a F(rho_a, sigma)`` (root fidelities) by alternating ascent.

    With ``sigma = S S^dag`` and ``||S||_F = 1`` the objective is
    ``sum_a p_a ||sqrt(rho_a) S||_1``.  Each step replaces ``S`` by the
    normalized ``sum_a p_a sqrt(rho_a) U_a V_a^dag`` from the polar parts of
    ``sqrt(rho_a) S``, which never decreases the objective.
    """
    xs = [sqrtm_psd(np.asarray(r, dtype=complex)) for r in states]
    p = np.asarray(p, dtype=float)
    d = xs[0].shape[0]

    def value(s):
        return float(sum(pa * np.sum(np.linalg.svd(x @ s, compute_uv=False)) for pa, x in zip(p, xs)))

    starts = [x / np.linalg.norm(x) for x in xs]
    mix = sqrtm_psd(sum(pa * x @ x for pa, x in zip(p, xs)))
    starts.append(mix / np.linalg.norm(mix))
    for _ in range(restarts):
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        starts.append(g / np.linalg.norm(g))
    best = 0.0
    for s in starts:
        f_old = value(s)
        for _ in range(iters):
            t = np.zeros((d, d), dtype=complex)
            for pa, x in zip(p, xs):
                u, _, vh = np.linalg.svd(x @ s)
                t += pa * x @ u @ vh
            nrm = np.linalg.norm(t)
            if nrm == 0:
                break
            s = t / nrm
            f_new = value(s)
            if f_new - f_old < tol:
                f_old = max(f_old, f_new)
                break
            f_old = f_new
        best = max(best, f_old)
    return best


@dataclass(frozen=True, eq=False)
class TripartiteInstance:
    """``|Psi> = sum_a sqrt(pt_a)|a, psi_{B|a}>`` and ``|Phi> = sum_a sqrt(p_a)|a, phi_{BC|a}>``.

    ``psi_B[a]`` is a ``dB`` vector and ``phi_BC[a]`` a ``dB x dC`` matrix,
    both normalized.
    """

    p: np.ndarray
    pt: np.ndarray
    psi_B: tuple
    phi_BC: tuple

    @property
    def dims(self) -> tuple:
        return len(self.p), self.phi_BC[0].shape[0], self.phi_BC[0].shape[1]

    def phi_C(self) -> list:
        """Subnormalized ``<psi_{B|a}|phi_{BC|a}>``."""
        return [self.psi_B[a].conj() @ self.phi_BC[a] for a in range(len(self.p))]

    def conditional_C(self, a: int) -> np.ndarray:
        m = self.phi_BC[a]
        return m.T @ m.conj()

    def psi_vector(self) -> np.ndarray:
        dA, dB, _ = self.dims
        return sum(math.sqrt(self.pt[a]) * np.kron(np.eye(dA)[a], self.psi_B[a]) for a in range(dA))

    def phi_vector(self) -> np.ndarray:
        dA, _, _ = self.dims
        return sum(math.sqrt(self.p[a]) * np.kron(np.eye(dA)[a], self.phi_BC[a].reshape(-1))
                   for a in range(dA))


def random_tripartite(dims: tuple, rng: np.random.Generator, mode: str = "generic") -> TripartiteInstance:
    """Random instance.

    ``mode`` is ``"generic"`` (independent marginals), ``"same"`` (equal
    ``A`` marginals) or ``"aligned"`` (equal marginals and
    ``phi_{BC|a} = psi_{B|a} (x) c_a`` with entrywise-positive real ``c_a``,
    so all ``C`` overlaps are positive).
    """
    if mode not in ("generic", "same", "aligned"):
        raise ValidationError(f"unknown mode {mode!r}")
    dA, dB, dC = dims
    p = random_probability(dA, rng)
    pt = random_probability(dA, rng) if mode == "generic" else p.copy()
    psi = tuple(random_pure_vector(dB, rng) for _ in range(dA))
    phi = []
    for a in range(dA):
        if mode == "aligned":
            c = np.abs(rng.normal(size=dC)) + 1e-3
            phi.append(np.outer(psi[a], c / np.linalg.norm(c)).astype(complex))
        else:
            m = rng.normal(size=(dB, dC)) + 1j * rng.normal(size=(dB, dC))
            phi.append(m / np.linalg.norm(m))
    return TripartiteInstance(p, pt, psi, tuple(phi))


def overlap_identity(inst: TripartiteInstance) -> tuple[float, float]:
    """``<Psi|rho_AB|Psi>``: closed form from ``phi_{C|a}`` and the definitional partial trace."""
    pc = inst.phi_C()
    w = np.sqrt(inst.pt * inst.p)
    v = sum(w[a] * pc[a] for a in range(len(w)))
    closed = float(np.real(np.vdot(v, v)))
    dA, dB, dC = inst.dims
    rho_ab = partial_trace(np.outer(inst.phi_vector(), inst.phi_vector().conj()), [dA * dB, dC], [0])
    psi = inst.psi_vector()
    direct = fidelity(np.outer(psi, psi.conj()), rho_ab) ** 2
    return closed, direct


def cq_closed_form(inst: TripartiteInstance) -> float:
    """``sum_{a,a'} p_a p_a' F(rho_{C|a}, rho_{C|a'})`` with root fidelities."""
    fs = [inst.phi_BC[a].T for a in range(len(inst.p))]  # factors of rho_{C|a}
    n = len(fs)
    f = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            f[a, b] = f[b, a] = fidelity_from_factors(fs[a], fs[b])
    return float(inst.p @ f @ inst.p)


def cq_oracle(inst: TripartiteInstance, rng: np.random.Generator) -> float:
    """``(max_sigma F(rho_AC, rho_A (x) sigma_C))**2`` from :func:`max_product_fidelity`."""
    states = [inst.conditional_C(a) for a in range(len(inst.p))]
    return max_product_fidelity(inst.p, states, rng) ** 2


def equality_condition(inst: TripartiteInstance, tol: float = 1e-9) -> bool:
    """Whether every ``phi_{C|a}`` is normalized and all overlaps are nonnegative reals."""
    pc = inst.phi_C()
    for a in range(len(pc)):
        if abs(np.vdot(pc[a], pc[a]).real - 1.0) > tol:
            return False
        for b in range(len(pc)):
            ov = np.vdot(pc[b], pc[a])
            if ov.real < -tol or abs(ov.imag) > tol:
                return False
    return True


@dataclass(frozen=True)
class TripartiteRecord:
    dims: tuple
    overlap_closed: float
    overlap_direct: float
    cq_closed: float
    cq_oracle: float
    inequality_margin: float | None
    equality_condition: bool | None
    equality_observed: bool | None


@dataclass(frozen=True)
class TripartiteReport:
    records: tuple

    def worst(self, key) -> float:
        return max(key(r) for r in self.records) if self.records else 0.0


def tripartite_fidelity_identities(dims_list: Sequence[tuple], n: int, rng: np.random.Generator,
                                   eq_tol: float = 1e-8) -> TripartiteReport:
    """Evaluate the overlap identity, the cq maximization formula and the inequality between them.

    ``n`` instances per entry of ``dims_list``, cycling through the
    ``aligned``, ``same`` and ``generic`` modes of :func:`random_tripartite`.
    The inequality fields are ``None`` for generic instances, whose ``A``
    marginals differ.
    """
    modes = ("aligned", "same", "generic")
    recs = []
    for dims in dims_list:
        for k in range(n):
            mode = modes[k % 3]
            inst = random_tripartite(tuple(dims), rng, mode)
            oc, od = overlap_identity(inst)
            cc = cq_closed_form(inst)
            co = cq_oracle(inst, rng)
            if mode == "generic":
                recs.append(TripartiteRecord(tuple(dims), oc, od, cc, co, None, None, None))
            else:
                recs.append(TripartiteRecord(tuple(dims), oc, od, cc, co, co - oc, equality_condition(inst),
                                             abs(oc - cc) <= eq_tol))
    return TripartiteReport(tuple(recs))
