"""CP-work extractions and the energy-conservation classifiers.

A CP-work extraction is a finite family of completely positive maps, each
given by a Kraus set, together with a work value per outcome.  The maps sum
to a trace-preserving map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .hamiltonics import SpectralHamiltonian, pinch
from .qcore import (
    DEFAULT_TOL,
    ConsistencyError,
    DimensionError,
    PreconditionError,
    Tolerances,
    ValidationError,
    as_square,
    dag,
    matrix_from_json,
    matrix_to_json,
    opnorm,
    shannon_entropy,
)


@dataclass(frozen=True, eq=False)
class Outcome:
    """One outcome: work value and Kraus operators of its CP map."""

    w: float
    kraus: tuple

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho, dtype=complex)
        for a in self.kraus:
            out += a @ rho @ dag(a)
        return out

    def dual(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x, dtype=complex)
        for a in self.kraus:
            out += dag(a) @ x @ a
        return out


@dataclass(frozen=True, eq=False)
class CPWorkExtraction:
    """Instrument ``{E_j}`` with work values ``{w_j}``."""

    dim: int
    outcomes: tuple

    @classmethod
    def create(cls, outcomes: Iterable, tol: Tolerances = DEFAULT_TOL, check_tp: bool = True) -> "CPWorkExtraction":
        """Build from ``(w, [kraus...])`` pairs and check trace preservation."""
        outs = []
        dim = None
        for idx, item in enumerate(outcomes):
            w, ks = (item.w, item.kraus) if isinstance(item, Outcome) else item
            mats = []
            for a in ks:
                a = np.asarray(a, dtype=complex)
                if a.ndim != 2:
                    raise DimensionError(f"outcome {idx}: Kraus operator must be 2-D")
                if dim is None:
                    dim = a.shape[1]
                if a.shape != (dim, dim):
                    raise DimensionError(f"outcome {idx}: Kraus operator shape {a.shape}, expected ({dim}, {dim})")
                mats.append(a)
            outs.append(Outcome(float(w), tuple(mats)))
        if dim is None:
            raise ValidationError("instrument has no Kraus operators")
        ext = cls(int(dim), tuple(outs))
        if check_tp:
            dev = ext.tp_deviation()
            if dev > tol.eq:
                raise ValidationError(f"instrument is not trace preserving (deviation {dev:.3e})")
        return ext

    @property
    def works(self) -> np.ndarray:
        return np.array([o.w for o in self.outcomes], dtype=float)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    def all_kraus(self) -> list:
        return [a for o in self.outcomes for a in o.kraus]

    def tp_deviation(self) -> float:
        s = np.zeros((self.dim, self.dim), dtype=complex)
        for a in self.all_kraus():
            s += dag(a) @ a
        return opnorm(s - np.eye(self.dim))

    def total(self, rho: np.ndarray) -> np.ndarray:
        """The trace-preserving sum ``sum_j E_j(rho)``."""
        return sum((o.apply(rho) for o in self.outcomes), np.zeros((self.dim, self.dim), dtype=complex))

    def choi(self, j: int) -> np.ndarray:
        """Choi matrix ``sum_l vec(A) vec(A)^dag`` (row-major vec)."""
        d = self.dim
        c = np.zeros((d * d, d * d), dtype=complex)
        for a in self.outcomes[j].kraus:
            v = a.reshape(-1)
            c += np.outer(v, v.conj())
        return c

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "outcomes": [{"w": o.w, "kraus": [matrix_to_json(a) for a in o.kraus]} for o in self.outcomes],
        }

    @classmethod
    def from_json(cls, obj, tol: Tolerances = DEFAULT_TOL, path: str = "instrument") -> "CPWorkExtraction":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if not isinstance(obj, dict) or "dim" not in obj or "outcomes" not in obj:
            raise ValidationError(f"{path}: expected object with 'dim' and 'outcomes'")
        dim = obj["dim"]
        if not isinstance(dim, int) or dim < 1:
            raise ValidationError(f"{path}.dim: expected a positive integer")
        outs = []
        for j, o in enumerate(obj["outcomes"]):
            p = f"{path}.outcomes[{j}]"
            if not isinstance(o, dict) or "w" not in o or "kraus" not in o:
                raise ValidationError(f"{p}: expected object with 'w' and 'kraus'")
            ks = [matrix_from_json(k, dim, f"{p}.kraus[{l}]") for l, k in enumerate(o["kraus"])]
            outs.append((float(o["w"]), ks))
        try:
            return cls.create(outs, tol)
        except ValidationError as e:
            raise ValidationError(f"{path}: {e}") from None


def apply(ext: CPWorkExtraction, j: int, rho: np.ndarray) -> tuple[np.ndarray, float]:
    """``(E_j(rho), Tr E_j(rho))``."""
    rho = as_square(rho, "state")
    if rho.shape[0] != ext.dim:
        raise DimensionError(f"state dim {rho.shape[0]} does not match instrument dim {ext.dim}")
    out = ext.outcomes[j].apply(rho)
    return out, float(np.trace(out).real)


def identity_instrument(d: int, w: float = 0.0) -> CPWorkExtraction:
    return CPWorkExtraction.create([(w, [np.eye(d, dtype=complex)])])


def projective_instrument(H: SpectralHamiltonian, works: Sequence[float] | None = None) -> CPWorkExtraction:
    """Measurement of the energy sectors of ``H``; works default to zero."""
    ws = [0.0] * H.n_levels if works is None else list(works)
    return CPWorkExtraction.create([(ws[i], [H.projector(i)]) for i in range(H.n_levels)])


def energy_tolerance(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances) -> float:
    """Absolute tolerance for merging energies and works."""
    w = np.abs(ext.works)
    return tol.k * max(H.energy_scale(), float(w.max()) if w.size else 0.0)


def merge_values(values: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Group reals into bins whose consecutive members lie within ``tol``.

    Returns the bin centers (ascending) and the bin index of every input.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    order = np.argsort(values, kind="stable")
    idx = np.empty(len(values), dtype=int)
    centers: list[list[float]] = []
    last = None
    for i in order:
        v = values[i]
        if last is None or v - last > tol:
            centers.append([])
        centers[-1].append(v)
        idx[i] = len(centers) - 1
        last = v
    return np.array([float(np.mean(c)) for c in centers]), idx


# ---------------------------------------------------------------------------
# work distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkDistribution:
    """Finite distribution over work values (ascending, merged)."""

    values: tuple
    probs: tuple

    @classmethod
    def from_samples(cls, values, probs, tol: float) -> "WorkDistribution":
        centers, idx = merge_values(values, tol)
        p = np.zeros(len(centers))
        np.add.at(p, idx, np.asarray(probs, dtype=float).reshape(-1))
        return cls(tuple(float(c) for c in centers), tuple(float(x) for x in p))

    def entropy(self) -> float:
        return shannon_entropy(self.probs)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def prob(self, w: float, tol: float) -> float:
        return float(sum(p for v, p in zip(self.values, self.probs) if abs(v - w) <= tol))


def align(a: WorkDistribution, b: WorkDistribution, tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Put two distributions on a common merged support."""
    vals = np.concatenate([a.values, b.values])
    centers, idx = merge_values(vals, tol)
    pa = np.zeros(len(centers))
    pb = np.zeros(len(centers))
    na = len(a.values)
    np.add.at(pa, idx[:na], a.probs)
    np.add.at(pb, idx[na:], b.probs)
    return centers, pa, pb


def total_variation(a: WorkDistribution, b: WorkDistribution, tol: float) -> float:
    _, pa, pb = align(a, b, tol)
    return 0.5 * float(np.sum(np.abs(pa - pb)))


def work_distribution(ext: CPWorkExtraction, rho: np.ndarray, tol: float = 1e-10) -> WorkDistribution:
    """Outcome-probability distribution of the work values for input ``rho``."""
    probs = [apply(ext, j, rho)[1] for j in range(ext.n_outcomes)]
    return WorkDistribution.from_samples(ext.works, probs, tol)


# ---------------------------------------------------------------------------
# instrument-level comparison
# ---------------------------------------------------------------------------

def coarse_grain(ext: CPWorkExtraction, tol: float) -> CPWorkExtraction:
    """Merge outcomes with equal work (within ``tol``) into one outcome."""
    centers, idx = merge_values(ext.works, tol)
    groups: list[list] = [[] for _ in centers]
    for j, o in enumerate(ext.outcomes):
        groups[idx[j]].extend(o.kraus)
    return CPWorkExtraction(ext.dim, tuple(Outcome(float(c), tuple(g)) for c, g in zip(centers, groups)))


def action_distance(a: CPWorkExtraction, b: CPWorkExtraction, tol: float = 1e-9) -> float:
    """Largest Choi-matrix distance between the work-coarse-grained instruments.

    Outcomes present in only one instrument are compared against the zero
    map, so outcomes whose map vanishes do not contribute.
    """
    if a.dim != b.dim:
        raise DimensionError(f"instrument dims differ: {a.dim} vs {b.dim}")
    ca, cb = coarse_grain(a, tol), coarse_grain(b, tol)
    allw = np.concatenate([ca.works, cb.works])
    centers, idx = merge_values(allw, tol)
    d2 = a.dim * a.dim
    ma = [np.zeros((d2, d2), dtype=complex) for _ in centers]
    mb = [np.zeros((d2, d2), dtype=complex) for _ in centers]
    for j in range(ca.n_outcomes):
        ma[idx[j]] += ca.choi(j)
    for j in range(cb.n_outcomes):
        mb[idx[ca.n_outcomes + j]] += cb.choi(j)
    return max(opnorm(x - y) for x, y in zip(ma, mb))


# ---------------------------------------------------------------------------
# energy conservation
# ---------------------------------------------------------------------------

def check_level1(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL) -> tuple[bool, float]:
    """Average energy balance as the dual-map identity ``sum_j (w_j E_j*(1) + E_j*(H)) = H``.

    The deviation is an operator norm in energy units; it is compared with
    ``tol.eq`` times the energy scale of the problem.
    """
    _check_dim(ext, H)
    d = ext.dim
    s = np.zeros((d, d), dtype=complex)
    eye = np.eye(d)
    for o in ext.outcomes:
        s += o.w * o.dual(eye) + o.dual(H.matrix)
    dev = opnorm(s - H.matrix)
    scale = max(H.energy_scale(), float(np.max(np.abs(ext.works))) if ext.n_outcomes else 0.0)
    return dev <= tol.eq * scale, dev


def _check_dim(ext: CPWorkExtraction, H: SpectralHamiltonian) -> None:
    if ext.dim != H.dim:
        raise DimensionError(f"instrument dim {ext.dim} does not match Hamiltonian dim {H.dim}")


def _kraus_in_basis(ext: CPWorkExtraction, H: SpectralHamiltonian) -> list:
    v = H.basis
    return [[dag(v) @ a @ v for a in o.kraus] for o in ext.outcomes]


@dataclass(frozen=True, eq=False)
class KDistributions:
    """Conditional distributions of ``K = h_X - h_Y - w_J``.

    Attributes
    ----------
    k_values : ndarray
        Merged values of ``K`` (ascending).
    p_jy_x : ndarray, shape (n_j, d, d)
        ``p_jy_x[j, y, x] = <y|E_j(Pi_x)|y>``.
    k_index : ndarray of int, shape (n_j, d, d)
        Bin of ``h_x - h_y - w_j`` in ``k_values``.
    p_k_x : ndarray, shape (d, n_k)
        ``P_{K|X}(k|x)``.
    p_k_yx : ndarray, shape (d, d, n_k)
        ``P_{K|YX}(k|y,x)`` indexed ``[x, y, k]``; NaN where undefined.
    defined : ndarray of bool, shape (d, d)
        ``defined[x, y]`` when ``P(y|x) > tol.prob``.
    """

    k_values: np.ndarray
    p_jy_x: np.ndarray
    k_index: np.ndarray
    p_k_x: np.ndarray
    p_k_yx: np.ndarray
    defined: np.ndarray
    k_tol: float

    def zero_bin(self) -> int | None:
        i = int(np.argmin(np.abs(self.k_values)))
        return i if abs(self.k_values[i]) <= self.k_tol else None


def k_distributions(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL) -> KDistributions:
    """Joint and conditional distributions of ``K`` in the eigenbasis of ``H``."""
    _check_dim(ext, H)
    d = ext.dim
    nj = ext.n_outcomes
    kb = _kraus_in_basis(ext, H)
    p = np.zeros((nj, d, d))
    for j, ks in enumerate(kb):
        for b in ks:
            p[j] += np.abs(b) ** 2
    h = H.eigenvalues
    kv = h[None, None, :] - h[None, :, None] - ext.works[:, None, None]
    ktol = energy_tolerance(ext, H, tol)
    centers, idx = merge_values(kv.reshape(-1), ktol)
    idx = idx.reshape(kv.shape)
    nk = len(centers)
    p_k_x = np.zeros((d, nk))
    p_k_yx = np.zeros((d, d, nk))
    _, yy, xx = np.meshgrid(np.arange(nj), np.arange(d), np.arange(d), indexing="ij")
    np.add.at(p_k_x, (xx.ravel(), idx.ravel()), p.ravel())
    np.add.at(p_k_yx, (xx.ravel(), yy.ravel(), idx.ravel()), p.ravel())
    py_x = p_k_yx.sum(axis=2)
    defined = py_x > tol.prob
    with np.errstate(invalid="ignore", divide="ignore"):
        p_k_yx = np.where(defined[:, :, None], p_k_yx / py_x[:, :, None], np.nan)
    return KDistributions(centers, p, idx, p_k_x, p_k_yx, defined, ktol)


@dataclass
class ConservationVerdict:
    """Raw level flags plus consistency diagnostics and failure witnesses."""

    level1: bool
    level2: bool
    level3: bool
    level4: bool
    unital: bool
    level4_sandwich: bool
    level4_delta: bool
    deviations: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)

    @property
    def hierarchy_ok(self) -> bool:
        return (not self.level4 or self.level3) and (not self.level3 or self.level2) and (not self.level2 or self.level1)

    @property
    def level4_forms_agree(self) -> bool:
        return self.level4_sandwich == self.level4_delta

    def as_dict(self) -> dict:
        return {
            "level1": self.level1,
            "level2": self.level2,
            "level3": self.level3,
            "level4": self.level4,
            "unital": self.unital,
            "level4_sandwich": self.level4_sandwich,
            "level4_delta": self.level4_delta,
            "hierarchy_ok": self.hierarchy_ok,
            "level4_forms_agree": self.level4_forms_agree,
            "deviations": dict(sorted(self.deviations.items())),
            "witnesses": self.witnesses,
        }


def _max_tv(rows: np.ndarray) -> tuple[float, tuple]:
    worst, arg = 0.0, ()
    for a in range(len(rows)):
        tv = 0.5 * np.abs(rows[a + 1:] - rows[a]).sum(axis=1)
        if tv.size and tv.max() > worst:
            worst = float(tv.max())
            arg = (a, a + 1 + int(tv.argmax()))
    return worst, arg


def sandwich_deviation(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL,
                       _sign: float = -1.0) -> tuple[float, tuple]:
    """Worst ``||E_j(Pi_x) - P E_j(Pi_x) P||`` with ``P`` the sector at ``h_x - w_j``.

    When no sector has that energy the whole of ``E_j(Pi_x)`` counts as the
    deviation.  ``_sign`` exists only for mutation testing.
    """
    kb = _kraus_in_basis(ext, H)
    ktol = energy_tolerance(ext, H, tol)
    worst, arg = 0.0, ()
    for j, ks in enumerate(kb):
        if not ks:
            continue
        w = ext.outcomes[j].w
        for x in range(ext.dim):
            col = np.stack([b[:, x] for b in ks], axis=1)
            m = col @ dag(col)
            target = H.level_index(H.eigenvalues[x] + _sign * w, ktol)
            mask = np.zeros(ext.dim, dtype=bool) if target is None else (H.labels == target)
            keep = np.outer(mask, mask)
            dev = opnorm(np.where(keep, 0.0, m))
            if dev > worst:
                worst, arg = dev, (j, x)
    return worst, arg


def classify(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL,
             strict: bool = False, _sign: float = -1.0) -> ConservationVerdict:
    """Evaluate the four energy-conservation levels and unitality.

    Each flag is computed from its own definition; the hierarchy and the
    agreement of the two level-4 forms are reported rather than imposed.
    With ``strict=True`` a violation of either raises
    :class:`ConsistencyError`.
    """
    _check_dim(ext, H)
    l1, dev1 = check_level1(ext, H, tol)
    kd = k_distributions(ext, H, tol)
    tv2, arg2 = _max_tv(kd.p_k_x)
    cells = kd.p_k_yx[kd.defined]
    tv3, arg3 = _max_tv(cells)
    l2 = l1 and tv2 <= tol.eq
    l3 = l1 and tv3 <= tol.eq

    sdev, sarg = sandwich_deviation(ext, H, tol, _sign)
    sandwich_ok = sdev <= tol.eq
    z = kd.zero_bin()
    mass0 = kd.p_k_x[:, z] if z is not None else np.zeros(ext.dim)
    ddev = float(np.max(1.0 - mass0))
    delta_ok = ddev <= tol.eq
    l4 = sandwich_ok and delta_ok

    d = ext.dim
    udev = opnorm(ext.total(np.eye(d, dtype=complex)) - np.eye(d))
    unital = udev <= tol.eq

    witnesses = []
    if not l1:
        witnesses.append({"level": 1, "deviation": dev1})
    if tv2 > tol.eq:
        x, xp = arg2
        witnesses.append({"level": 2, "x": int(x), "x_prime": int(xp), "tv": tv2})
    if tv3 > tol.eq:
        cell_ids = np.argwhere(kd.defined)
        a, b = arg3
        witnesses.append({"level": 3, "xy": [int(t) for t in cell_ids[a]],
                          "xy_prime": [int(t) for t in cell_ids[b]], "tv": tv3})
    if not sandwich_ok:
        witnesses.append({"level": 4, "form": "sandwich", "j": int(sarg[0]), "x": int(sarg[1]), "deviation": sdev})
    if not delta_ok:
        witnesses.append({"level": 4, "form": "delta", "deviation": ddev})
    if not unital:
        witnesses.append({"unital": False, "deviation": udev})

    verdict = ConservationVerdict(
        l1, l2, l3, l4, unital, sandwich_ok, delta_ok,
        deviations={"level1": dev1, "level2_tv": tv2, "level3_tv": tv3,
                    "level4_sandwich": sdev, "level4_delta": ddev, "unital": udev},
        witnesses=witnesses,
    )
    if strict and not (verdict.hierarchy_ok and verdict.level4_forms_agree):
        raise ConsistencyError(f"inconsistent verdict: {verdict.as_dict()}")
    return verdict


def is_level4(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL) -> bool:
    return classify(ext, H, tol).level4


def _require_level4(ext, H, tol):
    if not classify(ext, H, tol).level4:
        raise PreconditionError("operation requires a level-4 CP-work extraction")


def pinching_commutation_check(ext: CPWorkExtraction, H: SpectralHamiltonian, tol: Tolerances = DEFAULT_TOL,
                               require_level4: bool = True) -> tuple[bool, float]:
    """Check ``P(E_j(rho)) = P(E_j(P(rho))) = E_j(P(rho))`` on all matrix units.

    Matrix units of the eigenbasis span all operators, so by linearity the
    check covers every input state.
    """
    _check_dim(ext, H)
    if require_level4:
        _require_level4(ext, H, tol)
    d = ext.dim
    v = H.basis
    worst = 0.0
    for a in range(d):
        for b in range(d):
            unit = np.outer(v[:, a], v[:, b].conj())
            pu = pinch(H, unit)
            for o in ext.outcomes:
                e1 = pinch(H, o.apply(unit))
                e2 = o.apply(pu)
                e3 = pinch(H, e2)
                worst = max(worst, opnorm(e1 - e3), opnorm(e3 - e2))
    return worst <= tol.eq, worst


@dataclass(frozen=True)
class EntropyBound:
    entropy: float
    bound: float
    holds: bool


def work_entropy_bound(ext: CPWorkExtraction, H: SpectralHamiltonian, rho: np.ndarray,
                       tol: Tolerances = DEFAULT_TOL, require_level4: bool = True) -> EntropyBound:
    """Shannon entropy of the work distribution against ``2 log N``.

    ``N`` is the number of distinct eigenvalues of ``H``.
    """
    _check_dim(ext, H)
    if require_level4:
        _require_level4(ext, H, tol)
    wd = work_distribution(ext, rho, energy_tolerance(ext, H, tol))
    s = wd.entropy()
    bound = 2.0 * np.log(H.n_levels)
    return EntropyBound(s, float(bound), s <= bound + tol.eq)
