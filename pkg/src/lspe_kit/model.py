"""
Measurement model: signal prior, noise model, matrix ensembles and the
phaseless forward map y = |A x + e_z|^2 + e_y.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InputError
from .fileio import read_matrix
from .kernel import Field, as_field, as_generator, field_of, is_hermitian, psd_sqrt, sample_gaussian


@dataclass(frozen=True)
class SignalPrior:
    """i.i.d. zero-mean Gaussian signal with covariance ``sigma_x_sq * I``."""

    n: int
    sigma_x_sq: float = 1.0
    field: Field = Field.COMPLEX

    def __post_init__(self):
        if int(self.n) < 1:
            raise InputError(f"signal dimension must be >= 1, got {self.n}")
        if not self.sigma_x_sq > 0:
            raise InputError(f"sigma_x_sq must be positive, got {self.sigma_x_sq}")

    @property
    def k_x(self) -> np.ndarray:
        return self.sigma_x_sq * np.eye(self.n, dtype=self.field.dtype)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Signal noise e_z ~ (C)N(0, c_ez) and measurement noise e_y ~ N(mean_ey, c_ey)."""

    c_ez: np.ndarray
    mean_ey: np.ndarray
    c_ey: np.ndarray

    def __post_init__(self):
        c_ez = np.atleast_2d(np.asarray(self.c_ez))
        mean_ey = np.atleast_1d(np.asarray(self.mean_ey, dtype=np.float64))
        c_ey = np.atleast_2d(np.asarray(self.c_ey))
        m = mean_ey.shape[0]
        if c_ez.shape != (m, m) or c_ey.shape != (m, m):
            raise InputError(
                f"noise dimensions disagree: c_ez {c_ez.shape}, mean_ey {mean_ey.shape}, c_ey {c_ey.shape}")
        if np.iscomplexobj(c_ey):
            if np.any(c_ey.imag != 0):
                raise InputError("c_ey must be real")
            c_ey = c_ey.real
        if not is_hermitian(c_ez) or not is_hermitian(c_ey):
            raise InputError("noise covariances must be Hermitian")
        # psd_sqrt raises on indefinite input
        object.__setattr__(self, "_ez_factor", psd_sqrt(c_ez))
        object.__setattr__(self, "_ey_factor", psd_sqrt(c_ey))
        object.__setattr__(self, "c_ez", c_ez)
        object.__setattr__(self, "mean_ey", mean_ey)
        object.__setattr__(self, "c_ey", np.asarray(c_ey, dtype=np.float64))

    @property
    def m(self) -> int:
        return self.mean_ey.shape[0]

    @classmethod
    def noiseless(cls, m: int) -> "NoiseModel":
        return cls(np.zeros((m, m)), np.zeros(m), np.zeros((m, m)))

    @classmethod
    def white(cls, m: int, ez_var: float = 0.0, ey_mean: float = 0.0, ey_var: float = 0.0) -> "NoiseModel":
        if ez_var < 0 or ey_var < 0:
            raise InputError("noise variances must be nonnegative")
        return cls(ez_var * np.eye(m), np.full(m, float(ey_mean)), ey_var * np.eye(m))

    def permuted(self, perm) -> "NoiseModel":
        perm = np.asarray(perm)
        return NoiseModel(self.c_ez[np.ix_(perm, perm)], self.mean_ey[perm], self.c_ey[np.ix_(perm, perm)])

    def sample(self, gen: np.random.Generator, count: int, field: Field):
        """Draw ``count`` independent (e_z, e_y) pairs as (count, M) arrays."""
        m = self.m
        if np.any(self._ez_factor):
            ez = sample_gaussian(gen, (count, m), field) @ self._ez_factor.T
            if field is Field.REAL:
                ez = ez.real
        else:
            ez = np.zeros((count, m), dtype=field.dtype)
        ey = np.broadcast_to(self.mean_ey, (count, m)).copy()
        if np.any(self._ey_factor):
            ey += gen.standard_normal((count, m)) @ self._ey_factor.T
        return ez, ey


ENSEMBLE_KINDS = ("iid_gaussian", "row_correlated", "from_file")


@dataclass(frozen=True)
class Ensemble:
    """Recipe for the measurement matrix.

    ``row_correlated`` draws ``A = L G`` with ``G`` i.i.d. Gaussian and ``L`` the
    Cholesky factor of ``R[i, j] = rho ** |i - j|``.
    """

    kind: str
    m: int
    n: int
    field: Field = Field.COMPLEX
    rho: float = 0.0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise InputError(f"unknown ensemble kind {self.kind!r}")
        if int(self.m) < 1 or int(self.n) < 1:
            raise InputError("ensemble dimensions must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise InputError(f"rho must lie in [0, 1), got {self.rho}")
        if self.kind == "from_file" and not self.path:
            raise InputError("from_file ensemble needs a path")

    @classmethod
    def parse(cls, text: str, m: int, n: int, field: Field) -> "Ensemble":
        """``iid_gaussian``, ``row_correlated:RHO`` or ``file:PATH``."""
        text = text.strip()
        if text == "iid_gaussian":
            return cls("iid_gaussian", m, n, field)
        if text.startswith("row_correlated:"):
            try:
                rho = float(text.split(":", 1)[1])
            except ValueError:
                raise InputError(f"bad correlation in ensemble {text!r}") from None
            return cls("row_correlated", m, n, field, rho=rho)
        if text.startswith("file:"):
            return cls("from_file", m, n, field, path=text.split(":", 1)[1])
        raise InputError(f"unknown ensemble {text!r} (iid_gaussian | row_correlated:RHO | file:PATH)")


def correlation_factor(m: int, rho: float) -> np.ndarray:
    idx = np.arange(m)
    r = rho ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(r)


def draw_matrix(ens: Ensemble, rng) -> np.ndarray:
    if ens.kind == "from_file":
        a = read_matrix(ens.path)
        if a.shape != (ens.m, ens.n):
            raise InputError(f"{ens.path}: matrix is {a.shape[0]}x{a.shape[1]}, expected {ens.m}x{ens.n}")
        return as_field(a, ens.field)
    g = sample_gaussian(as_generator(rng), (ens.m, ens.n), ens.field, 1.0)
    if ens.kind == "row_correlated" and ens.rho > 0:
        g = correlation_factor(ens.m, ens.rho) @ g
    return g


@dataclass(frozen=True, eq=False)
class MeasurementSystem:
    """Everything that defines y = |A x + e_z|^2 + e_y, plus the cached C_z."""

    a: np.ndarray
    prior: SignalPrior
    noise: NoiseModel
    c_z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a))
        if a.ndim != 2:
            raise InputError("measurement matrix must be 2-D")
        if field_of(a) is not self.prior.field and not (
                self.prior.field is Field.COMPLEX and field_of(a) is Field.REAL):
            raise InputError("measurement matrix is complex but the prior is real")
        a = as_field(a, self.prior.field)
        m, n = a.shape
        if n != self.prior.n:
            raise InputError(f"matrix has {n} columns but the signal dimension is {self.prior.n}")
        if self.noise.m != m:
            raise InputError(f"matrix has {m} rows but the noise model has dimension {self.noise.m}")
        if self.prior.field is Field.REAL and np.iscomplexobj(self.noise.c_ez) and np.any(self.noise.c_ez.imag):
            raise InputError("real system with complex signal-noise covariance")
        c_ez = as_field(self.noise.c_ez, self.prior.field)
        c_z = self.prior.sigma_x_sq * (a @ np.conj(a.T)) + c_ez
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c_z", 0.5 * (c_z + np.conj(c_z.T)))

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def field(self) -> Field:
        return self.prior.field

    @cached_property
    def gram(self) -> np.ndarray:
        """G = A Aᴴ, so that |a_mᴴ a_m'|^2 = |G[m, m']|^2."""
        return self.a @ np.conj(self.a.T)

    @cached_property
    def row_norms_sq(self) -> np.ndarray:
        return np.sum(np.abs(self.a) ** 2, axis=1)

    def permuted(self, perm) -> "MeasurementSystem":
        perm = np.asarray(perm)
        return MeasurementSystem(self.a[perm], self.prior, self.noise.permuted(perm))


def build_system(ens: Ensemble, prior: SignalPrior, noise: NoiseModel, rng) -> MeasurementSystem:
    """Draw a measurement matrix from ``ens`` and wrap it with prior and noise."""
    if ens.n != prior.n:
        raise InputError(f"ensemble has n={ens.n} but the prior has n={prior.n}")
    if ens.field is not prior.field:
        raise InputError("ensemble and prior fields differ")
    if noise.m != ens.m:
        raise InputError(f"ensemble has m={ens.m} but the noise model has m={noise.m}")
    return MeasurementSystem(draw_matrix(ens, rng), prior, noise)


def sample_signals(prior: SignalPrior, count: int, rng) -> np.ndarray:
    return sample_gaussian(as_generator(rng), (count, prior.n), prior.field, prior.sigma_x_sq)


def sample_signal(prior: SignalPrior, rng) -> np.ndarray:
    return sample_gaussian(as_generator(rng), prior.n, prior.field, prior.sigma_x_sq)


def measure(sys: MeasurementSystem, x, ez, ey):
    """Noise-explicit forward map; rows of ``x``, ``ez`` and ``ey`` are trials."""
    z = np.asarray(x) @ sys.a.T + ez
    y = np.abs(z) ** 2 + ey
    return y, z


def forward_measure(sys: MeasurementSystem, x, rng):
    """Apply the measurement process to a single signal.

    Returns
    -------
    y : ndarray (M,)
        Phaseless measurements |z|^2 + e_y.
    z : ndarray (M,)
        Phased measurements A x + e_z.
    """
    x = np.asarray(x)
    if x.shape != (sys.n,):
        raise InputError(f"signal has shape {x.shape}, expected ({sys.n},)")
    if sys.field is Field.REAL and np.iscomplexobj(x):
        raise InputError("complex signal supplied to a real system")
    ez, ey = sys.noise.sample(as_generator(rng), 1, sys.field)
    y, z = measure(sys, x[None], ez, ey)
    return y[0], z[0]
