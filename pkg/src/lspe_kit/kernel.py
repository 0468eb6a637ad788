"""
Dense linear-algebra substrate for real and complex problems.

Matrices and vectors are plain numpy arrays; the field (real or complex) is
read off the dtype.  The module provides Hadamard operations, a cached SPD
solver with a ridge fallback, a Gershgorin-shifted power iteration for the
algebraically largest eigenpair of Hermitian matrices, and seeded Gaussian
sampling with reproducible streams.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from .errors import FactorizationError, InputError

HERMITIAN_TOL = 1e-10


class Field(enum.Enum):
    REAL = "R"
    COMPLEX = "C"

    @property
    def dtype(self):
        return np.float64 if self is Field.REAL else np.complex128

    @classmethod
    def parse(cls, text: str) -> "Field":
        key = str(text).strip().lower()
        if key in ("r", "real"):
            return cls.REAL
        if key in ("c", "complex"):
            return cls.COMPLEX
        raise InputError(f"unknown field {text!r} (expected real or complex)")


def field_of(a) -> Field:
    return Field.COMPLEX if np.iscomplexobj(a) else Field.REAL


def as_field(a, field: Field) -> np.ndarray:
    """Cast ``a`` to the dtype of ``field``; refuses to drop imaginary parts."""
    a = np.asarray(a)
    if field is Field.REAL:
        if np.iscomplexobj(a):
            if np.any(a.imag != 0):
                raise InputError("complex data supplied where a real field is required")
            a = a.real
        return np.asarray(a, dtype=np.float64)
    return np.asarray(a, dtype=np.complex128)


# ---------------------------------------------------------------------------
# Reproducible random streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rng:
    """A (seed, stream_id) pair naming one reproducible random stream.

    The pair maps to a PCG64 generator through numpy's ``SeedSequence``, which
    is platform independent.  ``spawn`` derives child streams deterministically,
    so per-task streams never depend on scheduling.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) < 2**64:
                raise InputError(f"{name} must be an unsigned 64-bit integer, got {value}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(seq))

    def spawn(self, index: int) -> "Rng":
        words = np.random.SeedSequence([int(self.stream_id), int(index)]).generate_state(2, np.uint32)
        return Rng(self.seed, (int(words[0]) << 32) | int(words[1]))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Rng):
        return rng.generator()
    raise InputError(f"expected Rng or numpy Generator, got {type(rng).__name__}")


def sample_gaussian(rng, n, field: Field = Field.COMPLEX, variance: float = 1.0) -> np.ndarray:
    """Draw i.i.d. zero-mean Gaussian samples.

    ``n`` may be an int or a shape tuple.  Complex samples are circularly
    symmetric: real and imaginary parts are independent N(0, variance/2).
    """
    if not variance > 0:
        raise InputError(f"variance must be positive, got {variance}")
    gen = as_generator(rng)
    if field is Field.REAL:
        return np.sqrt(variance) * gen.standard_normal(n)
    g = gen.standard_normal((2,) + _shape(n))
    return np.sqrt(variance / 2.0) * (g[0] + 1j * g[1])


def _shape(n) -> tuple:
    return (int(n),) if np.ndim(n) == 0 else tuple(int(k) for k in n)


def psd_sqrt(c: np.ndarray) -> np.ndarray:
    """Factor F with F Fᴴ = c for a Hermitian PSD matrix (eigenvalue clipping)."""
    w, u = np.linalg.eigh(c)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if np.min(w, initial=0.0) < -1e-8 * scale:
        raise InputError("covariance matrix is not positive semidefinite")
    return u * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# Elementwise and structural helpers
# ---------------------------------------------------------------------------

def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if field_of(a) is not field_of(b):
        raise InputError("mixed real/complex operands")
    return a, b


def hadamard(a, b, mode: str = "product") -> np.ndarray:
    """Elementwise product, conjugate product ``a * conj(b)`` or division."""
    a, b = _check_pair(a, b)
    if mode == "product":
        return a * b
    if mode == "conj_product":
        return a * np.conj(b)
    if mode == "divide":
        if np.any(b == 0):
            raise InputError("zero divisor in Hadamard division")
        return a / b
    raise InputError(f"unknown Hadamard mode {mode!r}")


def hermitian_defect(a: np.ndarray) -> float:
    """max|a - aᴴ| relative to max|a| (0 for the zero matrix)."""
    a = np.asarray(a)
    scale = float(np.max(np.abs(a), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2))))) / scale


def is_hermitian(a, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    return a.ndim >= 2 and a.shape[-1] == a.shape[-2] and hermitian_defect(a) <= tol


def symmetrize(a: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return (a + aᴴ)/2, asserting the correction is below ``tol`` (relative)."""
    defect = hermitian_defect(a)
    if defect > tol:
        raise InputError(f"matrix is not Hermitian (relative defect {defect:.3g})")
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


# ---------------------------------------------------------------------------
# SPD solves
# ---------------------------------------------------------------------------

class SpdFactor:
    """Cholesky factor of a real symmetric matrix, reusable across right-hand sides.

    If the plain factorization fails, it is retried once on
    ``t + ridge * mean(diag(t)) * I`` and ``regularized`` is set.
    """

    def __init__(self, t, ridge: float = 0.0):
        t = np.asarray(t)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InputError(f"expected a square matrix, got shape {t.shape}")
        if np.iscomplexobj(t):
            raise InputError("solve_spd expects a real symmetric matrix")
        if not is_hermitian(t):
            raise InputError("solve_spd expects a symmetric matrix")
        if ridge < 0:
            raise InputError("ridge must be nonnegative")
        self.size = t.shape[0]
        self.regularized = False
        try:
            self._cho = la.cho_factor(t, lower=True, check_finite=True)
        except la.LinAlgError:
            shift = ridge * float(np.mean(np.diag(t)))
            if not shift > 0:
                raise FactorizationError(
                    "matrix is not positive definite and no ridge fallback is available "
                    "(rank-deficient T?)") from None
            try:
                self._cho = la.cho_factor(t + shift * np.eye(self.size), lower=True)
            except la.LinAlgError:
                raise FactorizationError(
                    "matrix is not positive definite even after ridge regularization") from None
            self.regularized = True

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.size:
            raise InputError(f"right-hand side has length {rhs.shape[0]}, expected {self.size}")
        return la.cho_solve(self._cho, rhs)


class PsdSolver:
    """Solver for a symmetric positive semidefinite matrix, reusable across right-hand sides.

    Uses a Cholesky factor when the eigenvalue ratio exceeds ``rcond``;
    otherwise applies the pseudo-inverse restricted to eigenvalues above
    ``rcond * max_eigenvalue``.  The pseudo-inverse is the minimum-norm
    solution, which is exact when ``rhs`` lies in the range of ``t``.
    """

    def __init__(self, t, rcond: float = 1e-10):
        t = np.asarray(t)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InputError(f"expected a square matrix, got shape {t.shape}")
        if np.iscomplexobj(t) or not is_hermitian(t):
            raise InputError("PsdSolver expects a real symmetric matrix")
        if not 0 <= rcond < 1:
            raise InputError("rcond must lie in [0, 1)")
        self.size = t.shape[0]
        w, v = la.eigh(t)
        top = float(w[-1]) if w.size else 0.0
        if not top > 0:
            raise FactorizationError("matrix has no positive eigenvalue")
        if w[0] < -max(rcond, 1e-12) * top:
            raise FactorizationError(f"matrix is indefinite (eigenvalue {w[0]:.3g}, largest {top:.3g})")
        keep = w > rcond * top
        self.rank = int(np.count_nonzero(keep))
        self.pseudo = self.rank < self.size
        self._cho = None
        if not self.pseudo:
            try:
                self._cho = la.cho_factor(t, lower=True)
            except la.LinAlgError:
                self.pseudo = True
        self._v = v[:, keep]
        self._inv_w = 1.0 / w[keep]

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.size:
            raise InputError(f"right-hand side has length {rhs.shape[0]}, expected {self.size}")
        if self._cho is not None:
            return la.cho_solve(self._cho, rhs)
        proj = self._v.T @ rhs
        scale = self._inv_w if proj.ndim == 1 else self._inv_w[:, None]
        return self._v @ (scale * proj)


class SpdSolve(NamedTuple):
    x: np.ndarray
    regularized: bool


def solve_spd(t, rhs, ridge: float = 0.0) -> SpdSolve:
    """Solve ``t x = rhs`` for real symmetric positive definite ``t``."""
    factor = SpdFactor(t, ridge)
    return SpdSolve(factor.solve(rhs), factor.regularized)


# ---------------------------------------------------------------------------
# Leading eigenpair
# ---------------------------------------------------------------------------

class EigenPair(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool
    iters: int


def phase_normalize(u: np.ndarray, rel_tol: float = 1e-8) -> np.ndarray:
    """Rotate each row of ``u`` so its first non-negligible entry is real positive."""
    u = np.array(u, copy=True)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    mag = np.abs(u2)
    big = mag > rel_tol * np.max(mag, axis=1, keepdims=True)
    first = np.argmax(big, axis=1)
    pivot = u2[np.arange(u2.shape[0]), first]
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(np.abs(pivot) > 0, np.conj(pivot) / np.abs(pivot), 1.0)
    if not np.iscomplexobj(u2):
        phase = phase.real
    u2 = u2 * phase[:, None]
    return u2[0] if single else u2


def leading_eigenpairs(d, start, tol: float = 1e-10, max_iter: int = 1000):
    """Batched power iteration on Gershgorin-shifted Hermitian matrices.

    Parameters
    ----------
    d : ndarray, shape (B, N, N)
        Stack of Hermitian matrices.
    start : ndarray, shape (B, N)
        Starting vectors (need not be normalized).
    tol, max_iter
        A matrix is converged once ``||u_k - u_{k-1}|| < tol``.

    Returns
    -------
    values : ndarray (B,)
        Rayleigh quotients, i.e. the algebraically largest eigenvalues.
    vectors : ndarray (B, N)
        Unit eigenvectors with the phase tie-break applied.
    converged : ndarray of bool (B,)
    iters : ndarray of int (B,)

    Each matrix is iterated independently and frozen once converged, so the
    result for one matrix does not depend on the rest of the batch.
    """
    d = np.asarray(d)
    if d.ndim != 3 or d.shape[1] != d.shape[2]:
        raise InputError(f"expected a stack of square matrices, got shape {d.shape}")
    if not tol > 0:
        raise InputError("tol must be positive")
    scale = np.max(np.abs(d), axis=(1, 2), initial=0.0)
    defect = np.max(np.abs(d - np.conj(np.swapaxes(d, 1, 2))), axis=(1, 2), initial=0.0)
    bad = np.flatnonzero(defect > HERMITIAN_TOL * scale)
    if bad.size:
        raise InputError(f"matrix {bad[0]} of the batch is not Hermitian")
    batch, n = d.shape[0], d.shape[1]
    dtype = np.result_type(d.dtype, np.asarray(start).dtype, np.float64)
    u = np.array(start, dtype=dtype).reshape(batch, n)
    norms = np.linalg.norm(u, axis=1)
    u[norms == 0, 0] = 1.0
    u /= np.linalg.norm(u, axis=1, keepdims=True)

    # the small margin keeps d + shift*I definite, e.g. for d = -I
    shift = np.max(np.sum(np.abs(d), axis=2), axis=1) * (1.0 + 1e-6)
    shifted = d + shift[:, None, None] * np.eye(n)
    converged = shift == 0  # zero matrix: every vector is an eigenvector
    iters = np.zeros(batch, dtype=np.int64)
    active = np.flatnonzero(~converged)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        v = np.einsum("bij,bj->bi", shifted[active], u[active])
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        change = np.linalg.norm(v - u[active], axis=1)
        u[active] = v
        iters[active] = it
        done = change < tol
        converged[active[done]] = True
        active = active[~done]

    values = np.einsum("bi,bij,bj->b", np.conj(u), d, u).real
    return values, phase_normalize(u), converged, iters


def leading_eigenpair(d, tol: float = 1e-10, max_iter: int = 1000, rng=None) -> EigenPair:
    """Algebraically largest eigenpair of a Hermitian matrix by power iteration.

    The iteration runs on ``d + c I`` with ``c`` the largest absolute row sum,
    which makes every eigenvalue nonnegative so the iteration targets the
    signed maximum rather than the largest magnitude.
    """
    d = np.asarray(d)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InputError(f"expected a square matrix, got shape {d.shape}")
    if not is_hermitian(d):
        raise InputError("leading_eigenpair requires a Hermitian matrix")
    gen = as_generator(rng if rng is not None else Rng(0))
    start = sample_gaussian(gen, d.shape[0], field_of(d))
    values, vectors, conv, iters = leading_eigenpairs(d[None], start[None], tol, max_iter)
    return EigenPair(float(values[0]), vectors[0], bool(conv[0]), int(iters[0]))
