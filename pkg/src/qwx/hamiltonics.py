"""Hamiltonians: spectral decomposition, energy sectors, pinching, lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .qcore import (
    DEFAULT_TOL,
    DimensionError,
    Tolerances,
    ValidationError,
    as_hermitian,
    dag,
    opnorm,
)


@dataclass(frozen=True, eq=False)
class SpectralHamiltonian:
    """Hermitian operator with its eigenbasis grouped into energy sectors.

    Attributes
    ----------
    matrix : ndarray
        The operator.
    eigenvalues : ndarray
        Energy of each basis column, sorted ascending.
    basis : ndarray
        Orthonormal eigenvectors as columns; ``basis[:, x]`` is ``|x>``.
    levels : ndarray
        Distinct energies (cluster means), ascending.
    labels : ndarray of int
        ``levels[labels[x]]`` is the sector of ``|x>``.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray
    levels: np.ndarray
    labels: np.ndarray
    cluster_tol: float = 0.0
    _projectors: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def projector(self, i: int) -> np.ndarray:
        """Projector onto sector ``levels[i]``."""
        if not self._projectors:
            for k in range(self.n_levels):
                cols = self.basis[:, self.labels == k]
                self._projectors.append(cols @ dag(cols))
        return self._projectors[i]

    def projectors(self) -> list:
        return [self.projector(i) for i in range(self.n_levels)]

    def sector_columns(self, i: int) -> np.ndarray:
        return self.basis[:, self.labels == i]

    def level_index(self, energy: float, tol: float) -> int | None:
        """Index of the sector whose energy is within ``tol`` of ``energy``."""
        d = np.abs(self.levels - energy)
        i = int(np.argmin(d))
        return i if d[i] <= tol else None

    def spread(self) -> float:
        return float(self.levels[-1] - self.levels[0])

    def energy_scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.levels))), self.spread())

    def tensor_identity(self, d: int) -> "SpectralHamiltonian":
        """``H (x) 1_d`` with eigenbasis ``basis (x) 1`` (sector structure kept)."""
        basis = np.kron(self.basis, np.eye(d))
        return SpectralHamiltonian(
            matrix=np.kron(self.matrix, np.eye(d)),
            eigenvalues=np.repeat(self.eigenvalues, d),
            basis=basis,
            levels=self.levels.copy(),
            labels=np.repeat(self.labels, d),
            cluster_tol=self.cluster_tol,
        )

    def in_basis(self, op: np.ndarray) -> np.ndarray:
        """Matrix elements ``<x|op|x'>`` in the eigenbasis."""
        return dag(self.basis) @ op @ self.basis


def _cluster(values: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    labels = np.empty(len(values), dtype=int)
    groups: list[list[int]] = []
    for i in order:
        if groups and values[i] - values[groups[-1][-1]] <= tol:
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    levels = np.empty(len(groups))
    for k, g in enumerate(groups):
        labels[g] = k
        levels[k] = float(np.mean(values[g]))
    return levels, labels


def decompose(H, tol: Tolerances = DEFAULT_TOL, basis=None) -> SpectralHamiltonian:
    """Spectral decomposition with eigenvalues grouped into sectors.

    Eigenvalues closer than ``tol.clust * ||H||`` (chained) share a sector.

    Parameters
    ----------
    H : array_like
        Hermitian matrix.
    basis : array_like, optional
        Orthonormal eigenbasis (columns) to use instead of the solver's
        choice.  Inside degenerate sectors the basis matters for
        basis-relative quantities such as the level-2/3 classifiers.
    """
    h = as_hermitian(H, tol, "Hamiltonian")
    scale = opnorm(h)
    ctol = tol.clust * scale
    if basis is None:
        w, v = np.linalg.eigh(h)
    else:
        v = np.asarray(basis, dtype=complex)
        if v.shape != h.shape:
            raise DimensionError(f"basis shape {v.shape} does not match Hamiltonian {h.shape}")
        if opnorm(dag(v) @ v - np.eye(h.shape[0])) > tol.unit:
            raise ValidationError("supplied basis is not orthonormal")
        d = dag(v) @ h @ v
        if opnorm(d - np.diag(np.diag(d))) > tol.eq * max(1.0, scale):
            raise ValidationError("supplied basis does not diagonalize the Hamiltonian")
        w = np.diag(d).real.copy()
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
    levels, labels = _cluster(w, ctol)
    return SpectralHamiltonian(h, np.asarray(w, dtype=float), v, levels, labels, ctol)


def from_energies(energies: Sequence[float], tol: Tolerances = DEFAULT_TOL) -> SpectralHamiltonian:
    """Diagonal Hamiltonian with the given energies, computational eigenbasis."""
    e = np.asarray(energies, dtype=float).reshape(-1)
    order = np.argsort(e, kind="stable")
    h = np.diag(e).astype(complex)
    return decompose(h, tol, basis=np.eye(len(e))[:, order])


def pinch(H: SpectralHamiltonian, rho: np.ndarray) -> np.ndarray:
    """Pinching ``sum_h P_h rho P_h``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (H.dim, H.dim):
        raise DimensionError(f"state shape {rho.shape} does not match Hamiltonian dim {H.dim}")
    r = H.in_basis(rho)
    mask = H.labels[:, None] == H.labels[None, :]
    return H.basis @ (r * mask) @ dag(H.basis)


@dataclass(frozen=True)
class LatticeReport:
    """Outcome of :func:`lattice_analyze`.

    ``offsets[x]`` is the integer ``(h_x - h_min) / span`` for basis vector
    ``x`` of the analyzed Hamiltonian.  ``gauge`` is ``h_min``.
    """

    is_lattice: bool
    span: float | None
    offsets: tuple
    gauge: float
    denominator_bound: int
    max_residual: float = 0.0

    def level_offsets(self, H: SpectralHamiltonian) -> np.ndarray:
        out = np.zeros(H.n_levels, dtype=int)
        out[H.labels] = np.asarray(self.offsets, dtype=int)
        return out


def lattice_analyze(H: SpectralHamiltonian, tau_lat: float = DEFAULT_TOL.lat, Q: int = 64) -> LatticeReport:
    """Detect whether all energy gaps are integer multiples of a common span.

    Gap ratios relative to the smallest positive gap are matched to fractions
    with denominator at most ``Q``; a ratio that misses its fraction by more
    than ``tau_lat`` yields a non-lattice verdict.  The span is the largest
    real dividing every gap, and offsets are measured from ``h_min``.
    """
    lv = H.levels
    h0 = float(lv[0])
    if len(lv) == 1:
        return LatticeReport(True, None, tuple(0 for _ in range(H.dim)), h0, Q)
    gaps = lv[1:] - h0
    g_ref = float(gaps[0])
    fracs = []
    worst = 0.0
    for g in gaps:
        r = g / g_ref
        f = Fraction(r).limit_denominator(Q)
        worst = max(worst, float(abs(r - float(f))))
        if abs(r - float(f)) > tau_lat:
            return LatticeReport(False, None, (), h0, Q, worst)
        fracs.append(f)
    lcm = 1
    for f in fracs:
        lcm = lcm * f.denominator // math.gcd(lcm, f.denominator)
    ints = [int(f * lcm) for f in fracs]
    g = 0
    for n in ints:
        g = math.gcd(g, n)
    lvl_off = [0] + [n // g for n in ints]
    n_arr = np.asarray(lvl_off[1:], dtype=float)
    span = float(np.dot(gaps, n_arr) / np.dot(n_arr, n_arr))
    offsets = tuple(int(lvl_off[k]) for k in H.labels)
    return LatticeReport(True, span, offsets, h0, Q, worst)
