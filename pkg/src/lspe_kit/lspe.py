"""
Spectral estimator matrices and rank-one extraction.

An LSPE matrix has the form ``D = K_x + sum_m t_m V_m`` with ``T t = P(y) - E[P(y)]``
where ``P`` is the preprocessing function, ``T`` the covariance of ``P(y)`` and
``V_m = E[(P(y_m) - E P(y_m)) (x xᴴ - K_x)]``.  For the Gaussian phase
retrieval models handled here every ``V_m`` is ``c_m a_m a_mᴴ`` (``a_mᴴ`` is row
m of A), so only the coefficients ``c_m`` are stored.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InputError
from .kernel import Field, PsdSolver, Rng, as_generator, field_of, is_hermitian, leading_eigenpairs, \
    sample_gaussian, symmetrize
from .model import MeasurementSystem
from .preprocess import Preprocessor, apply

DEFAULT_RCOND = 1e-10
PROVENANCES = ("lspe_real", "lspe_complex", "lspe_exp", "lspe_generic", "spectral_init")


@dataclass(frozen=True, eq=False)
class LspeQuantities:
    """Moments of the preprocessed measurements needed to build an LSPE.

    Attributes
    ----------
    k_x : ndarray (N, N)
        Signal correlation E[x xᴴ].
    t_bar : ndarray (M,)
        Mean of the preprocessed measurements.
    t_mat : ndarray (M, M)
        Covariance of the preprocessed measurements.
    v_coeffs : ndarray (M,) or None
        c_m in V_m = c_m a_m a_mᴴ.
    generic_v : ndarray (M, N, N) or None
        Dense V_m, used when no rank-one form is available.
    """

    k_x: np.ndarray
    t_bar: np.ndarray
    t_mat: np.ndarray
    v_coeffs: np.ndarray | None = None
    generic_v: np.ndarray | None = None
    preproc: Preprocessor = Preprocessor()
    provenance: str = "lspe_generic"
    _factors: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        if (self.v_coeffs is None) == (self.generic_v is None):
            raise InputError("exactly one of v_coeffs and generic_v must be given")
        if self.provenance not in PROVENANCES:
            raise InputError(f"unknown provenance {self.provenance!r}")
        t_mat = np.asarray(self.t_mat, dtype=np.float64)
        m = len(self.t_bar)
        if t_mat.shape != (m, m):
            raise InputError(f"T has shape {t_mat.shape}, expected ({m}, {m})")
        if not is_hermitian(t_mat):
            raise InputError("T must be symmetric")
        object.__setattr__(self, "t_mat", 0.5 * (t_mat + t_mat.T))
        if self.generic_v is not None:
            gv = np.asarray(self.generic_v)
            if gv.shape != (m,) + self.k_x.shape:
                raise InputError(f"generic_v has shape {gv.shape}, expected {(m,) + self.k_x.shape}")
            if not all(is_hermitian(v) for v in gv):
                raise InputError("every V_m must be Hermitian")

    @property
    def m(self) -> int:
        return len(self.t_bar)

    def factor(self, rcond: float = DEFAULT_RCOND) -> PsdSolver:
        """Solver for T, computed once per rcond value."""
        with self._lock:
            fac = self._factors.get(rcond)
            if fac is None:
                fac = PsdSolver(self.t_mat, rcond)
                self._factors[rcond] = fac
            return fac

    def v_dense(self, sys: MeasurementSystem) -> np.ndarray:
        if self.generic_v is not None:
            return np.asarray(self.generic_v)
        outer = np.conj(sys.a)[:, :, None] * sys.a[:, None, :]
        return self.v_coeffs[:, None, None] * outer

    def to_generic(self, sys: MeasurementSystem) -> "LspeQuantities":
        return LspeQuantities(self.k_x, self.t_bar, self.t_mat, generic_v=self.v_dense(sys),
                              preproc=self.preproc, provenance="lspe_generic")


class SpectralMatrix(NamedTuple):
    d: np.ndarray
    provenance: str
    t_weights: np.ndarray


class Estimate(NamedTuple):
    x_hat: np.ndarray
    lambda1: float
    converged: bool
    iters: int


# ---------------------------------------------------------------------------
# Closed-form quantities
# ---------------------------------------------------------------------------

def _require_field(sys: MeasurementSystem, fld: Field, name: str):
    if sys.field is not fld:
        raise InputError(f"{name} requires a {fld.name.lower()}-valued system")


def quantities_real(sys: MeasurementSystem) -> LspeQuantities:
    """Real Gaussian signal, f(z) = z^2, identity preprocessing."""
    _require_field(sys, Field.REAL, "quantities_real")
    c_z = sys.c_z.real
    s4 = sys.prior.sigma_x_sq ** 2
    return LspeQuantities(
        k_x=sys.prior.k_x,
        t_bar=np.diag(c_z) + sys.noise.mean_ey,
        t_mat=2.0 * c_z * c_z + sys.noise.c_ey,
        v_coeffs=np.full(sys.m, 2.0 * s4),
        preproc=Preprocessor.identity(),
        provenance="lspe_real",
    )


def quantities_complex(sys: MeasurementSystem) -> LspeQuantities:
    """Circular complex Gaussian signal, f(z) = |z|^2, identity preprocessing."""
    _require_field(sys, Field.COMPLEX, "quantities_complex")
    c_z = sys.c_z
    return LspeQuantities(
        k_x=sys.prior.k_x,
        t_bar=np.diag(c_z).real + sys.noise.mean_ey,
        t_mat=(c_z * np.conj(c_z)).real + sys.noise.c_ey,
        v_coeffs=np.full(sys.m, sys.prior.sigma_x_sq ** 2),
        preproc=Preprocessor.identity(),
        provenance="lspe_complex",
    )


def quantities_exp(sys: MeasurementSystem, gamma: float) -> LspeQuantities:
    """Circular complex Gaussian signal with exponential preprocessing exp(-gamma y)."""
    _require_field(sys, Field.COMPLEX, "quantities_exp")
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    c_z = sys.c_z
    c_ey = sys.noise.c_ey
    diag_cz = np.diag(c_z).real
    q = gamma * diag_cz + 1.0
    p = np.exp(-gamma * sys.noise.mean_ey + 0.5 * gamma ** 2 * np.diag(c_ey))
    qq = np.outer(q, q)
    abs_cz_sq = (c_z * np.conj(c_z)).real
    denom = qq - gamma ** 2 * abs_cz_sq
    if np.any(denom <= 0):
        raise InputError("exponential preprocessing: q qᵀ - γ² |C_z|² is not positive; gamma too large")
    # same as pp'·(exp(γ²C_ey) ⊘ denom − 1 ⊘ qq), rearranged to avoid cancellation for small γ
    t_mat = np.outer(p, p) * (np.expm1(gamma ** 2 * c_ey) * qq + gamma ** 2 * abs_cz_sq) / (denom * qq)
    s4 = sys.prior.sigma_x_sq ** 2
    return LspeQuantities(
        k_x=sys.prior.k_x,
        t_bar=p / q,
        t_mat=t_mat,
        v_coeffs=-gamma * s4 * p / q ** 2,
        preproc=Preprocessor.exponential(gamma),
        provenance="lspe_exp",
    )


# ---------------------------------------------------------------------------
# Spectral matrices
# ---------------------------------------------------------------------------

def weighted_gram(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_m w[..., m] a_m a_mᴴ = Aᴴ diag(w) A for one or a stack of weight vectors."""
    w = np.asarray(w)
    ah = np.conj(a.T)
    if w.ndim == 1:
        return (ah * w) @ a
    return (ah[None, :, :] * w[:, None, :]) @ a


def _check_y(sys: MeasurementSystem, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != sys.m:
        raise InputError(f"measurement vector has length {y.shape[-1]} but the system has M = {sys.m}")
    return y


def assemble_batch(q: LspeQuantities, sys: MeasurementSystem, y, preproc: Preprocessor | None = None,
                   rcond: float = DEFAULT_RCOND):
    """LSPE matrices for a stack of measurement vectors ``y`` of shape (B, M).

    Returns ``(d, t)`` with ``d`` of shape (B, N, N) and ``t`` of shape (B, M).
    """
    if preproc is not None and preproc != q.preproc:
        raise InputError(f"quantities were derived for {q.preproc} preprocessing, not {preproc}")
    y = np.atleast_2d(_check_y(sys, y))
    if q.m != sys.m:
        raise InputError("quantities and system disagree on M")
    t = q.factor(rcond).solve((apply(q.preproc, y) - q.t_bar).T).T
    if q.v_coeffs is not None:
        d = q.k_x[None] + weighted_gram(sys.a, t * q.v_coeffs)
    else:
        d = q.k_x[None] + np.einsum("bm,mij->bij", t, q.generic_v)
    return symmetrize(d), t


def assemble(q: LspeQuantities, sys: MeasurementSystem, y, preproc: Preprocessor | None = None,
             rcond: float = DEFAULT_RCOND) -> SpectralMatrix:
    """Build the LSPE matrix K_x + sum_m t_m V_m for one measurement vector."""
    y = _check_y(sys, y)
    if y.ndim != 1:
        raise InputError("assemble expects a single measurement vector")
    provenance = q.provenance
    d, t = assemble_batch(q, sys, y[None], preproc, rcond)
    return SpectralMatrix(d[0], provenance, t[0])


def si_batch(sys: MeasurementSystem, y, preproc: Preprocessor, beta: float) -> np.ndarray:
    y = np.atleast_2d(_check_y(sys, y))
    if not np.isfinite(beta):
        raise InputError("beta must be finite")
    return symmetrize(beta * weighted_gram(sys.a, apply(preproc, y)))


def si_matrix(sys: MeasurementSystem, y, preproc: Preprocessor, beta: float) -> SpectralMatrix:
    """Conventional spectral initializer matrix beta * sum_m P(y_m) a_m a_mᴴ."""
    y = _check_y(sys, y)
    weights = beta * apply(preproc, y)
    return SpectralMatrix(si_batch(sys, y[None], preproc, beta)[0], "spectral_init", weights)


def _si_terms(sys: MeasurementSystem, q: LspeQuantities):
    """Numerator sum_m a_mᴴ Ṽ_m a_m and denominator sum T̃ |a_mᴴ a_m'|^2."""
    if q.m != sys.m:
        raise InputError("quantities and system disagree on M")
    a = sys.a
    quad_k = np.einsum("mi,ij,mj->m", a, q.k_x, np.conj(a)).real  # a_mᴴ K_x a_m
    if q.v_coeffs is not None:
        quad_v = q.v_coeffs * sys.row_norms_sq ** 2
    else:
        quad_v = np.einsum("mi,mij,mj->m", a, q.generic_v, np.conj(a)).real
    numerator = float(np.sum(quad_v + q.t_bar * quad_k))
    t_tilde = q.t_mat + np.outer(q.t_bar, q.t_bar)
    denominator = float(np.sum(t_tilde * np.abs(sys.gram) ** 2))
    return numerator, denominator


def si_optimal_beta(sys: MeasurementSystem, preproc: Preprocessor, q: LspeQuantities) -> float:
    """S-MSE-optimal scaling of the spectral initializer for preprocessing ``preproc``."""
    if preproc != q.preproc:
        raise InputError(f"quantities were derived for {q.preproc} preprocessing, not {preproc}")
    numerator, denominator = _si_terms(sys, q)
    if denominator == 0:
        raise InputError("degenerate measurement matrix: zero denominator in optimal beta")
    return numerator / denominator


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def extract_batch(d, start, tol: float = 1e-10, max_iter: int = 1000):
    """Scaled leading eigenvectors for a stack of spectral matrices.

    Returns ``(x_hat, lambda1, converged, iters)``; rows with a nonpositive
    leading eigenvalue give the zero vector.
    """
    values, vectors, conv, iters = leading_eigenpairs(d, start, tol, max_iter)
    x_hat = np.sqrt(np.clip(values, 0.0, None))[:, None] * vectors
    return x_hat, values, conv, iters


def extract(d, tol: float = 1e-10, max_iter: int = 1000, rng=None) -> Estimate:
    """Scaled leading eigenvector sqrt(lambda1) u1 of a spectral matrix."""
    mat = d.d if isinstance(d, SpectralMatrix) else np.asarray(d)
    gen = as_generator(rng if rng is not None else Rng(0))
    start = sample_gaussian(gen, mat.shape[0], field_of(mat))
    x_hat, values, conv, iters = extract_batch(mat[None], start[None], tol, max_iter)
    return Estimate(x_hat[0], float(values[0]), bool(conv[0]), int(iters[0]))


# ---------------------------------------------------------------------------
# Estimator names
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorSpec:
    """Parsed estimator name: ``lspe-r``, ``lspe-c``, ``lspe-exp:GAMMA`` or ``si:PREPROC``."""

    kind: str
    preproc: Preprocessor = Preprocessor()

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        text = text.strip()
        if text in ("lspe-r", "lspe-c"):
            return cls(text)
        if text.startswith("lspe-exp:"):
            try:
                gamma = float(text.split(":", 1)[1])
            except ValueError:
                raise InputError(f"bad gamma in estimator {text!r}") from None
            return cls("lspe-exp", Preprocessor.exponential(gamma))
        if text.startswith("si:"):
            return cls("si", Preprocessor.parse(text[3:]))
        raise InputError(f"unknown estimator {text!r} (lspe-r | lspe-c | lspe-exp:GAMMA | si:PREPROC)")

    def __str__(self):
        if self.kind == "lspe-exp":
            return f"lspe-exp:{self.preproc.param:g}"
        if self.kind == "si":
            return f"si:{self.preproc}"
        return self.kind

    @property
    def is_lspe(self) -> bool:
        return self.kind != "si"


def quantities_for(spec: EstimatorSpec, sys: MeasurementSystem) -> LspeQuantities | None:
    """Closed-form quantities matching ``spec``; None if none are known."""
    if spec.kind == "lspe-r":
        return quantities_real(sys)
    if spec.kind == "lspe-c":
        return quantities_complex(sys)
    if spec.kind == "lspe-exp":
        return quantities_exp(sys, spec.preproc.param)
    if spec.preproc.kind == "identity":
        return quantities_real(sys) if sys.field is Field.REAL else quantities_complex(sys)
    if spec.preproc.kind == "exp" and sys.field is Field.COMPLEX:
        return quantities_exp(sys, spec.preproc.param)
    return None


class PreparedEstimator:
    """An estimator bound to one system: quantities, factorization and SI scale.

    Spectral initializers without closed-form moments use beta = 1/M, which
    leaves the estimate direction unchanged.
    """

    def __init__(self, spec: EstimatorSpec, sys: MeasurementSystem, rcond: float = DEFAULT_RCOND):
        if spec.kind in ("lspe-c", "lspe-exp") and sys.field is not Field.COMPLEX:
            raise InputError(f"{spec} requires a complex-valued system")
        if spec.kind == "lspe-r" and sys.field is not Field.REAL:
            raise InputError("lspe-r requires a real-valued system")
        self.spec = spec
        self.sys = sys
        self.rcond = rcond
        self.quantities = quantities_for(spec, sys)
        self.beta = None
        if not spec.is_lspe:
            if self.quantities is not None:
                self.beta = si_optimal_beta(sys, spec.preproc, self.quantities)
            else:
                self.beta = 1.0 / sys.m
        elif self.quantities is not None:
            self.quantities.factor(rcond)

    def matrices(self, y) -> np.ndarray:
        if self.spec.is_lspe:
            return assemble_batch(self.quantities, self.sys, y, self.spec.preproc, self.rcond)[0]
        return si_batch(self.sys, y, self.spec.preproc, self.beta)
