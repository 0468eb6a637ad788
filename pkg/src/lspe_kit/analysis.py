"""
Analytic and empirical error measures for spectral estimators.

The analytic side covers the S-MSE of an LSPE, the S-MSE of an optimally
scaled spectral initializer and the 4x S-MSE bound on the estimation error.
The empirical side runs seeded Monte-Carlo trials in fixed-size chunks so the
result does not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import InputError, LspeError, NumericalError
from .kernel import Field, Rng, as_generator, sample_gaussian
from .lspe import DEFAULT_RCOND, EstimatorSpec, LspeQuantities, PreparedEstimator, _si_terms, \
    extract_batch
from .model import MeasurementSystem, SignalPrior, measure

CHUNK = 256


class PriorConstants(NamedTuple):
    c_xx: float  # E||x xᴴ - K_x||_F^2
    r_xx: float  # E||x xᴴ||_F^2


def prior_constants(prior: SignalPrior) -> PriorConstants:
    """Fourth-order moments of x xᴴ for the i.i.d. Gaussian prior.

    With s = sigma_x^2, E||x||^4 is N(N+2) s^2 for real and N(N+1) s^2 for
    circular complex signals, and E||x xᴴ - K_x||^2 = E||x||^4 - N s^2.
    """
    n, s2 = prior.n, prior.sigma_x_sq ** 2
    if prior.field is Field.REAL:
        return PriorConstants(n * (n + 1) * s2, n * (n + 2) * s2)
    return PriorConstants(n * n * s2, n * (n + 1) * s2)


def _v_gram(q: LspeQuantities, sys: MeasurementSystem) -> np.ndarray:
    """H[m, m'] = tr(V_mᴴ V_m')."""
    if q.v_coeffs is not None:
        return np.outer(q.v_coeffs, q.v_coeffs) * np.abs(sys.gram) ** 2
    v = q.generic_v.reshape(q.m, -1)
    return (np.conj(v) @ v.T).real


def smse_lspe(q: LspeQuantities, sys: MeasurementSystem, consts: PriorConstants | None = None,
              rcond: float = DEFAULT_RCOND) -> float:
    """S-MSE of the LSPE: C_xx - sum_{m,m'} [T^-1]_{m,m'} tr(V_mᴴ V_m')."""
    if consts is None:
        consts = prior_constants(sys.prior)
    if q.m != sys.m:
        raise InputError("quantities and system disagree on M")
    h = _v_gram(q, sys)
    return float(consts.c_xx - np.trace(q.factor(rcond).solve(h)))


def smse_si(q: LspeQuantities, sys: MeasurementSystem, consts: PriorConstants | None = None):
    """S-MSE of the optimally scaled spectral initializer and its scale.

    Returns
    -------
    smse : float
    beta_hat : float
    """
    if consts is None:
        consts = prior_constants(sys.prior)
    numerator, denominator = _si_terms(sys, q)
    if denominator == 0:
        raise InputError("degenerate measurement matrix: zero denominator")
    return float(consts.r_xx - numerator ** 2 / denominator), numerator / denominator


def eer_bound(smse: float) -> float:
    return 4.0 * smse


def nmse_batch(x, x_hat) -> np.ndarray:
    """Row-wise min_alpha ||x - alpha x_hat||^2 / ||x||^2."""
    x = np.atleast_2d(x)
    x_hat = np.atleast_2d(x_hat)
    xx = np.sum(np.abs(x) ** 2, axis=1)
    if np.any(xx == 0):
        raise InputError("N-MSE is undefined for a zero signal")
    hh = np.sum(np.abs(x_hat) ** 2, axis=1)
    inner = np.sum(np.conj(x_hat) * x, axis=1)
    safe = np.where(hh > 0, hh, 1.0)
    alpha = np.where(hh > 0, inner / safe, 0.0)
    resid = x - alpha[:, None] * x_hat
    return np.sum(np.abs(resid) ** 2, axis=1) / xx


def nmse(x, x_hat) -> float:
    """Normalized MSE after optimal complex (or real) rescaling of ``x_hat``."""
    return float(nmse_batch(np.asarray(x)[None], np.asarray(x_hat)[None])[0])


def frob_sq(a: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm over the last two axes."""
    return np.sum(np.abs(a) ** 2, axis=(-2, -1))


def bound_slack(lambda1, n: int, tol: float) -> np.ndarray:
    """Floating-point allowance for the per-trial rank-one bound.

    A power-iteration eigenvector accurate to ``tol`` perturbs x̂x̂ᴴ by about
    ``tol * lambda1`` in Frobenius norm, so comparisons below that level are
    round-off against round-off.  The allowance vanishes in exact arithmetic.
    """
    lam = np.abs(np.asarray(lambda1, dtype=np.float64))
    return (10.0 * (tol + n * np.finfo(np.float64).eps) * lam) ** 2


def bound_violations(samples: "TrialSamples", n: int, tol: float) -> tuple[int, int]:
    """(violations with the round-off allowance, raw violations) of EER <= 4 S-MSE per trial."""
    excess = samples.eer - 4.0 * samples.smse
    return (int(np.count_nonzero(excess > bound_slack(samples.lambda1, n, tol))),
            int(np.count_nonzero(excess > 0)))


class TrialSamples(NamedTuple):
    smse: np.ndarray
    eer: np.ndarray
    nmse: np.ndarray
    lambda1: np.ndarray
    converged: np.ndarray


@dataclass(frozen=True)
class ErrorReport:
    smse_analytic: float
    eer_bound: float
    smse_empirical: float | None = None
    eer_empirical: float | None = None
    nmse_mean: float | None = None
    trials: int = 0
    unconverged: int = 0
    samples: TrialSamples | None = None

    def __post_init__(self):
        for name in ("smse_empirical", "eer_empirical", "nmse_mean"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise InputError(f"{name} must be nonnegative")


def analytic_smse(prepared: PreparedEstimator, consts: PriorConstants | None = None) -> float:
    """Analytic S-MSE for a prepared estimator; NaN when no closed form exists."""
    q = prepared.quantities
    if q is None:
        return math.nan
    if prepared.spec.is_lspe:
        return smse_lspe(q, prepared.sys, consts, prepared.rcond)
    return smse_si(q, prepared.sys, consts)[0]


def _draw_trial(sys: MeasurementSystem, rng: Rng):
    gen = rng.generator()
    x = sample_gaussian(gen, sys.n, sys.field, sys.prior.sigma_x_sq)
    ez, ey = sys.noise.sample(gen, 1, sys.field)
    start = sample_gaussian(gen, sys.n, sys.field)
    return x, ez[0], ey[0], start


def _run_chunk(prepared: PreparedEstimator, rng: Rng, first: int, count: int, tol: float, max_iter: int):
    sys = prepared.sys
    draws = [_draw_trial(sys, rng.spawn(first + k)) for k in range(count)]
    x, ez, ey, start = (np.array(col) for col in zip(*draws))
    y, _ = measure(sys, x, ez, ey)
    try:
        d = prepared.matrices(y)
    except LspeError as exc:
        for k in range(count):
            try:
                prepared.matrices(y[k:k + 1])
            except LspeError:
                raise NumericalError(f"trial {first + k}: {exc}") from exc
        raise
    outer = x[:, :, None] * np.conj(x[:, None, :])
    smse = frob_sq(d - outer)
    x_hat, lam, conv, _ = extract_batch(d, start, tol, max_iter)
    eer = frob_sq(x_hat[:, :, None] * np.conj(x_hat[:, None, :]) - outer)
    return smse, eer, nmse_batch(x, x_hat), lam, conv


def empirical_errors(sys: MeasurementSystem, estimator, trials: int, rng: Rng, *,
                     tol: float = 1e-10, max_iter: int = 1000, threads: int = 1,
                     rcond: float = DEFAULT_RCOND, keep_samples: bool = False) -> ErrorReport:
    """Monte-Carlo S-MSE, EER and N-MSE of one estimator on one system.

    Trial ``i`` draws its signal, noise and power-iteration start from the
    stream ``rng.spawn(i)``.  Trials are processed in chunks of fixed size and
    means are taken with ``math.fsum``, so reports are bit-identical for any
    ``threads``.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    if not isinstance(rng, Rng):
        raise InputError("empirical_errors needs an Rng (seed, stream) for reproducible trial streams")
    spec = estimator if isinstance(estimator, EstimatorSpec) else EstimatorSpec.parse(str(estimator))
    prepared = estimator if isinstance(estimator, PreparedEstimator) else PreparedEstimator(spec, sys, rcond)
    smse_a = analytic_smse(prepared)

    starts = list(range(0, trials, CHUNK))

    def job(first):
        return _run_chunk(prepared, rng, first, min(CHUNK, trials - first), tol, max_iter)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    smse, eer, nm, lam, conv = (np.concatenate(col) for col in zip(*parts))
    samples = TrialSamples(smse, eer, nm, lam, conv) if keep_samples else None
    return ErrorReport(
        smse_analytic=smse_a,
        eer_bound=eer_bound(smse_a),
        smse_empirical=math.fsum(smse) / trials,
        eer_empirical=math.fsum(eer) / trials,
        nmse_mean=math.fsum(nm) / trials,
        trials=trials,
        unconverged=int(np.count_nonzero(~conv)),
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Moment oracles
# ---------------------------------------------------------------------------

def folded_cov(mu1, mu2, s12):
    return 4 * mu1 * mu2 * s12 + 2 * s12 ** 2


def folded_var(mu, s):
    return 2 * s ** 2 + 4 * mu ** 2 * s


def exp_quadratic_mean(g, sigma):
    """E exp(-uᴴ G u) for u ~ CN(0, sigma)."""
    g = np.atleast_2d(g)
    sigma = np.atleast_2d(sigma)
    return 1.0 / np.linalg.det(g @ sigma + np.eye(g.shape[0])).real


def gaussian_neg_mgf(gamma, mean, sigma):
    """E exp(-gammaᵀ u) for u ~ N(mean, sigma)."""
    gamma = np.atleast_1d(gamma)
    return float(np.exp(-gamma @ np.atleast_1d(mean) + 0.5 * gamma @ np.atleast_2d(sigma) @ gamma))


DEFAULT_FORMULAS = {
    "folded_cov": folded_cov,
    "folded_var": folded_var,
    "exp_quadratic": exp_quadratic_mean,
    "neg_mgf": gaussian_neg_mgf,
}

# (mu1, mu2, sigma1^2, sigma2^2, sigma12^2)
FOLDED_GRID = [
    (0.0, 0.0, 1.0, 1.0, 0.5),
    (0.5, -0.3, 1.0, 2.0, 0.7),
    (1.0, 1.0, 0.5, 0.5, -0.2),
    (-0.8, 0.4, 2.0, 1.0, 0.0),
]
EXPQ_GRID = [
    (np.array([[1.0]]), np.array([[1.0]])),
    (np.array([[0.3]]), np.array([[2.5]])),
    (np.array([[1.0, 0.2], [0.2, 0.5]]), np.array([[1.0, 0.4 + 0.3j], [0.4 - 0.3j, 1.5]])),
    (0.7 * np.eye(2), np.array([[2.0, -0.5j], [0.5j, 1.0]])),
]
MGF_GRID = [
    (np.array([1.0]), np.array([0.0]), np.array([[1.0]])),
    (np.array([0.5, -0.2]), np.array([1.0, 0.3]), np.array([[0.8, 0.3], [0.3, 0.6]])),
    (np.array([0.3, 0.3]), np.array([-0.5, 0.2]), np.array([[1.0, -0.4], [-0.4, 1.2]])),
]


class MomentCheck(NamedTuple):
    lemma: str
    params: str
    analytic: float
    estimate: float
    stderr: float
    passed: bool

    @property
    def z(self) -> float:
        return abs(self.estimate - self.analytic) / self.stderr if self.stderr > 0 else math.inf


class MomentReport(NamedTuple):
    checks: list
    samples: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


def _mean_se(values: np.ndarray):
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))


def _check(lemma, params, analytic, values, z_max):
    est, se = _mean_se(values)
    return MomentCheck(lemma, params, float(analytic), est, se, abs(est - analytic) <= z_max * se)


def moment_oracles(rng, samples: int = 1_000_000, z_max: float = 5.0,
                   formulas: dict[str, Callable] | None = None) -> MomentReport:
    """Sampling checks of the Gaussian moment identities behind the closed forms.

    Covers the bivariate folded-normal covariance and variance, the mean of
    exp(-uᴴ G u) for circular Gaussian u, and the Gaussian moment generating
    function.  Each analytic value must lie within ``z_max`` standard errors
    of its sample estimate.  ``formulas`` overrides entries of
    ``DEFAULT_FORMULAS`` (used to confirm that a wrong formula is caught).
    """
    f = dict(DEFAULT_FORMULAS)
    if formulas:
        f.update(formulas)
    gen = as_generator(rng)
    checks = []

    for mu1, mu2, s1, s2, s12 in FOLDED_GRID:
        cov = np.array([[s1, s12], [s12, s2]])
        u = gen.multivariate_normal([mu1, mu2], cov, size=samples, method="cholesky")
        nu = u ** 2
        means = np.array([mu1 ** 2 + s1, mu2 ** 2 + s2])
        c = nu - means  # exact means, so the product is an unbiased sample of the covariance
        label = f"mu=({mu1},{mu2}) s1={s1} s2={s2} s12={s12}"
        checks.append(_check("folded-normal covariance", label, f["folded_cov"](mu1, mu2, s12),
                             c[:, 0] * c[:, 1], z_max))
        checks.append(_check("folded-normal variance", label, f["folded_var"](mu1, s1), c[:, 0] ** 2, z_max))

    for g, sigma in EXPQ_GRID:
        k = g.shape[0]
        w = sample_gaussian(gen, (samples, k), Field.COMPLEX) @ np.linalg.cholesky(sigma).T
        quad = np.einsum("si,ij,sj->s", np.conj(w), g, w).real
        label = f"G={g.tolist()} Sigma={np.round(sigma, 3).tolist()}"
        checks.append(_check("exp-quadratic mean", label, f["exp_quadratic"](g, sigma), np.exp(-quad), z_max))

    for gamma, mean, sigma in MGF_GRID:
        u = gen.multivariate_normal(mean, sigma, size=samples, method="cholesky")
        label = f"gamma={gamma.tolist()} mean={mean.tolist()} Sigma={sigma.tolist()}"
        checks.append(_check("negative MGF", label, f["neg_mgf"](gamma, mean, sigma), np.exp(-u @ gamma), z_max))

    return MomentReport(checks, samples)


def format_moment_report(report: MomentReport) -> str:
    lines = [f"# moment oracle checks, {report.samples} samples each",
             "status\tlemma\tanalytic\testimate\tstderr\tz\tparams"]
    for c in report.checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'}\t{c.lemma}\t{c.analytic:.10g}\t{c.estimate:.10g}\t"
                     f"{c.stderr:.3g}\t{c.z:.2f}\t{c.params}")
    lines.append(f"# overall: {'PASS' if report.passed else 'FAIL'} "
                 f"({len(report.checks) - len(report.failures)}/{len(report.checks)})")
    return "\n".join(lines) + "\n"
