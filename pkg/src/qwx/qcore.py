"""Dense complex-matrix kernel: states, tensor algebra, spectral functions.

All routines take and return plain ``numpy`` arrays.  Validation is explicit
(``as_density``, ``as_unitary``) so that hot loops can skip it.  Entropies use
natural logarithms.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import unitary_group


class QwxError(Exception):
    """Base class for library errors."""


class DimensionError(QwxError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(QwxError, ValueError):
    """An input violates a type invariant (Hermiticity, positivity, ...)."""


class PreconditionError(QwxError):
    """An operation was called outside of its domain of validity."""


class ConsistencyError(QwxError):
    """A result violates an internal consistency contract."""


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used across the library.

    Attributes
    ----------
    herm, psd, tr, unit, eq : float
        Hermiticity, negative-eigenvalue, trace, unitarity and generic
        equality tolerances.
    prob : float
        Probabilities below this are treated as zero when conditioning.
    clust : float
        Relative tolerance (times ``||H||``) for grouping eigenvalues into
        energy sectors.
    k : float
        Relative tolerance (times the energy scale) for merging energy-like
        values such as work or energy loss.
    lat : float
        Tolerance on gap ratios when detecting lattice spectra.
    """

    herm: float = 1e-10
    psd: float = 1e-10
    tr: float = 1e-10
    unit: float = 1e-9
    eq: float = 1e-8
    prob: float = 1e-12
    clust: float = 1e-9
    k: float = 1e-8
    lat: float = 1e-9

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v >= 0):
                raise ValidationError(f"tolerance {f.name} must be a finite nonnegative number, got {v!r}")

    def replace(self, **overrides) -> "Tolerances":
        """Return a copy with some fields replaced (unknown names raise)."""
        names = {f.name for f in dataclasses.fields(self)}
        bad = sorted(set(overrides) - names)
        if bad:
            raise ValidationError(f"unknown tolerance name(s): {', '.join(bad)}")
        return dataclasses.replace(self, **{k: float(v) for k, v in overrides.items()})

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


DEFAULT_TOL = Tolerances()


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------

def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Convert ``m`` to a finite 2-D complex array."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


def as_square(m, name: str = "matrix") -> np.ndarray:
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return a.conj().T


def opnorm(a: np.ndarray) -> float:
    """Operator (spectral) norm; 0 for empty input."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dag(a))


def is_hermitian(a: np.ndarray, tol: float = DEFAULT_TOL.herm) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and opnorm(a - dag(a)) <= tol


def as_hermitian(m, tol: Tolerances = DEFAULT_TOL, name: str = "operator") -> np.ndarray:
    a = as_square(m, name)
    dev = opnorm(a - dag(a))
    if dev > tol.herm * max(1.0, opnorm(a)):
        raise ValidationError(f"{name} is not Hermitian (||A - A^dag|| = {dev:.3e})")
    return hermitian_part(a)


def is_unitary(u: np.ndarray, tol: float = DEFAULT_TOL.unit) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return opnorm(dag(u) @ u - np.eye(u.shape[0])) <= tol


def as_unitary(m, tol: Tolerances = DEFAULT_TOL, name: str = "unitary") -> np.ndarray:
    u = as_square(m, name)
    dev = opnorm(dag(u) @ u - np.eye(u.shape[0]))
    if dev > tol.unit:
        raise ValidationError(f"{name} is not unitary (||U^dag U - 1|| = {dev:.3e})")
    return u


def as_density(m, tol: Tolerances = DEFAULT_TOL, name: str = "state") -> np.ndarray:
    """Validate a density matrix: Hermitian, PSD and unit trace."""
    rho = as_hermitian(m, tol, name)
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > tol.tr:
        raise ValidationError(f"{name} has trace {tr!r}, expected 1")
    lam = np.linalg.eigvalsh(rho)
    if lam[0] < -tol.psd:
        raise ValidationError(f"{name} has negative eigenvalue {lam[0]:.3e}")
    return rho


def pure_state(vec) -> np.ndarray:
    """Projector onto the normalized vector ``vec``."""
    v = np.asarray(vec, dtype=complex).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError("zero vector has no associated state")
    v = v / n
    return np.outer(v, v.conj())


def basis_state(d: int, i: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[i] = 1.0
    return np.outer(v, v)


def maximally_mixed(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex) / d


# ---------------------------------------------------------------------------
# tensor algebra
# ---------------------------------------------------------------------------

def tensor(*mats) -> np.ndarray:
    """Kronecker product of any number of matrices (or vectors)."""
    if not mats:
        raise DimensionError("tensor needs at least one operand")
    return reduce(np.kron, (np.asarray(m, dtype=complex) for m in mats))


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``.

    Parameters
    ----------
    m : ndarray
        Operator on the tensor product of spaces with dimensions ``dims``.
    dims : sequence of int
        Subsystem dimensions, in tensor order.
    keep : sequence of int
        Indices of subsystems to keep; the result keeps them in increasing
        order.
    """
    m = np.asarray(m, dtype=complex)
    dims = [int(d) for d in dims]
    n = int(np.prod(dims))
    if m.shape != (n, n):
        raise DimensionError(f"operator of shape {m.shape} does not match subsystem dims {dims}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionError(f"keep indices {keep} out of range for {len(dims)} subsystems")
    nsys = len(dims)
    t = m.reshape(dims + dims)
    # letters: row indices a.., column indices for traced systems reuse row letters
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * nsys > len(letters):
        raise DimensionError("too many subsystems")
    rows = [letters[i] for i in range(nsys)]
    cols = [letters[nsys + i] if i in keep else letters[i] for i in range(nsys)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    res = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return res.reshape(dk, dk)


# ---------------------------------------------------------------------------
# spectral functions
# ---------------------------------------------------------------------------

def _clipped_eigvals(rho: np.ndarray, tol: float) -> np.ndarray:
    lam = np.linalg.eigvalsh(hermitian_part(np.asarray(rho, dtype=complex)))
    if lam.size and lam[0] < -tol:
        raise ValidationError(f"operator has negative eigenvalue {lam[0]:.3e}")
    return np.clip(lam, 0.0, None)


def sqrtm_psd(a: np.ndarray, tol: float = DEFAULT_TOL.psd) -> np.ndarray:
    """Square root of a positive semidefinite matrix (small negatives clipped)."""
    w, v = np.linalg.eigh(hermitian_part(np.asarray(a, dtype=complex)))
    if w.size and w[0] < -tol * max(1.0, abs(w[-1])):
        raise ValidationError(f"operator has negative eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ dag(v)


def shannon_entropy(p) -> float:
    """Shannon entropy in nats; zero entries contribute nothing."""
    p = np.asarray(p, dtype=float).reshape(-1)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p))) if p.size else 0.0


def renyi2_entropy(p) -> float:
    """Collision entropy ``-log sum p^2``."""
    p = np.asarray(p, dtype=float).reshape(-1)
    return float(-np.log(np.sum(p * p)))


def von_neumann_entropy(rho: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> float:
    """``-Tr rho log rho`` in nats.

    Eigenvalues in ``(-tol.psd, 0)`` are clipped to zero; larger negative
    eigenvalues raise :class:`ValidationError`.
    """
    lam = _clipped_eigvals(rho, tol.psd)
    lam = lam[lam > tol.psd]
    return float(-np.sum(lam * np.log(lam))) if lam.size else 0.0


def entropy_of_gram(m: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> float:
    """Entropy of ``m m^dag`` computed from the smaller Gram matrix."""
    m = np.asarray(m, dtype=complex)
    g = dag(m) @ m if m.shape[1] <= m.shape[0] else m @ dag(m)
    return von_neumann_entropy(g, tol)


def _psd_factor(a: np.ndarray, tol: float) -> np.ndarray:
    """``B`` with ``B B^dag = a``, dropping eigenvalues at round-off level."""
    w, v = np.linalg.eigh(hermitian_part(a))
    if w.size and w[0] < -tol:
        raise ValidationError(f"operator has negative eigenvalue {w[0]:.3e}")
    keep = w > 64 * np.finfo(float).eps * max(1.0, float(w[-1]) if w.size else 1.0)
    return v[:, keep] * np.sqrt(w[keep])


def fidelity(rho: np.ndarray, sigma: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> float:
    """Root fidelity ``Tr sqrt(sqrt(rho) sigma sqrt(rho))`` (not squared).

    Evaluated as the trace norm of ``A^dag B`` with ``A A^dag = rho`` and
    ``B B^dag = sigma``.  Eigenvalues at round-off level are dropped, which
    avoids square roots of noise for rank-deficient inputs; eigenvalues
    below ``-tol.psd`` raise.
    """
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape or rho.ndim != 2:
        raise DimensionError(f"fidelity needs equal square shapes, got {rho.shape} and {sigma.shape}")
    a = _psd_factor(rho, tol.psd)
    b = _psd_factor(sigma, tol.psd)
    if a.shape[1] == 0 or b.shape[1] == 0:
        return 0.0
    return float(min(fidelity_from_factors(a, b), 1.0 + 1e-12))


def fidelity_from_factors(m: np.ndarray, n: np.ndarray) -> float:
    """Root fidelity of ``m m^dag`` and ``n n^dag`` as the trace norm of ``m^dag n``."""
    s = np.linalg.svd(dag(np.asarray(m)) @ np.asarray(n), compute_uv=False)
    return float(np.sum(s))


class LogPhase(NamedTuple):
    """Result of :func:`hermitian_log_phase`."""

    C: np.ndarray
    basis: np.ndarray
    phases: np.ndarray
    residual: float


def hermitian_log_phase(u: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> LogPhase:
    """Hermitian ``C`` with ``exp(iC) = U`` and eigenphases in ``(-pi, pi]``.

    A unitary is normal, so its complex Schur form is diagonal; the Schur
    vectors give an orthonormal eigenbasis even inside degenerate clusters.
    Phases numerically at ``-pi`` are mapped to ``+pi``.

    Raises
    ------
    ValidationError
        If ``u`` is not unitary, or the Schur form is not diagonal to within
        ``tol.eq`` (the off-diagonal mass is reported).
    """
    u = as_unitary(u, tol)
    t, z = scipy.linalg.schur(u, output="complex")
    off = opnorm(t - np.diag(np.diag(t)))
    if off > tol.eq:
        raise ValidationError(f"Schur form not diagonal (off-diagonal norm {off:.3e}); eigenbasis ill-conditioned")
    theta = np.angle(np.diag(t))
    theta = np.where(theta <= -np.pi + 1e-12, np.pi, theta)
    c = hermitian_part((z * theta) @ dag(z))
    resid = opnorm(unitary_exp(c) - u)
    return LogPhase(c, z, theta, resid)


def unitary_exp(h: np.ndarray, t: float = 1.0) -> np.ndarray:
    """``exp(i t H)`` for Hermitian ``H`` via ``eigh``."""
    w, v = np.linalg.eigh(hermitian_part(np.asarray(h, dtype=complex)))
    return (v * np.exp(1j * t * w)) @ dag(v)


def binary_entropy(p: float) -> float:
    """``-p log p - (1-p) log(1-p)`` in nats, with ``0 log 0 = 0``."""
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise ValidationError(f"binary entropy needs p in [0, 1], got {p!r}")
    return shannon_entropy([p, 1.0 - p])


# ---------------------------------------------------------------------------
# random objects (explicit generators only)
# ---------------------------------------------------------------------------

def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random ``d x d`` unitary."""
    if d == 1:
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1), dtype=complex)
    return unitary_group.rvs(d, random_state=rng)


def random_pure_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix of the given rank (Ginibre ensemble)."""
    r = d if rank is None else int(rank)
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    m = g @ dag(g)
    return m / np.trace(m).real


def random_probability(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(n))


# ---------------------------------------------------------------------------
# serialization: complex matrices as row-major lists of [re, im] pairs
# ---------------------------------------------------------------------------

def matrix_to_json(m: np.ndarray) -> list:
    """Row-major flat list of ``[re, im]`` pairs."""
    a = np.asarray(m, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in a]


def _entry(z, path: str) -> complex:
    if isinstance(z, bool):
        raise ValidationError(f"{path}: boolean is not a number")
    if isinstance(z, (int, float)):
        return complex(z)
    if isinstance(z, (list, tuple)) and len(z) == 2 and all(
        isinstance(t, (int, float)) and not isinstance(t, bool) for t in z
    ):
        return complex(z[0], z[1])
    raise ValidationError(f"{path}: expected a number or [re, im] pair, got {z!r}")


def matrix_from_json(obj, dim: int | None = None, path: str = "matrix") -> np.ndarray:
    """Parse a complex matrix.

    Accepts a flat row-major list of entries (square shape inferred unless
    ``dim`` is given) or a list of rows.  Each entry is a real number or a
    ``[re, im]`` pair.
    """
    if not isinstance(obj, list) or not obj:
        raise ValidationError(f"{path}: expected a non-empty list")
    is_rows = not _looks_flat(obj, dim)
    if is_rows:
        rows = []
        for i, row in enumerate(obj):
            if not isinstance(row, list):
                raise ValidationError(f"{path}[{i}]: expected a row list")
            rows.append([_entry(z, f"{path}[{i}][{j}]") for j, z in enumerate(row)])
        if len({len(r) for r in rows}) != 1:
            raise ValidationError(f"{path}: rows have unequal lengths")
        a = np.array(rows, dtype=complex)
    else:
        flat = np.array([_entry(z, f"{path}[{i}]") for i, z in enumerate(obj)], dtype=complex)
        n = len(flat)
        d = dim if dim is not None else int(round(np.sqrt(n)))
        if d * d != n:
            raise ValidationError(f"{path}: {n} entries do not form a square matrix")
        a = flat.reshape(d, d)
    if dim is not None and a.shape != (dim, dim):
        raise ValidationError(f"{path}: expected shape ({dim}, {dim}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{path}: non-finite entries")
    return a


def _looks_flat(obj: list, dim: int | None) -> bool:
    # flat form: perfect-square length (or dim**2) and every entry a scalar or [re, im] pair
    n = len(obj)
    r = int(round(np.sqrt(n)))
    if r * r != n or (dim is not None and n != dim * dim):
        return False
    return all(
        (isinstance(z, (int, float)) and not isinstance(z, bool))
        or (isinstance(z, list) and len(z) == 2 and all(isinstance(t, (int, float)) for t in z))
        for z in obj
    )
