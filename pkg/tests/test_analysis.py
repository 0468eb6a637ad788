import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gaussian_system, scalar_system
from lspe_kit.analysis import (bound_violations, empirical_errors, eer_bound, exp_quadratic_mean, folded_cov,
                               gaussian_neg_mgf, moment_oracles, nmse, prior_constants, smse_lspe, smse_si)
from lspe_kit.errors import InputError
from lspe_kit.kernel import Field, Rng, sample_gaussian
from lspe_kit.lspe import quantities_complex, quantities_exp, quantities_real
from lspe_kit.model import NoiseModel, SignalPrior, sample_signals

EXTRACT = dict(tol=1e-14, max_iter=5000)


def lspe_quantities(sys):
    return quantities_real(sys) if sys.field is Field.REAL else quantities_complex(sys)


# ---- prior constants ------------------------------------------------------

@pytest.mark.parametrize("field, c_xx, r_xx", [(Field.COMPLEX, 1, 2), (Field.REAL, 2, 3)])
def test_prior_constants_scalar_vs_sampling(field, c_xx, r_xx):
    prior = SignalPrior(1, 1.0, field)
    consts = prior_constants(prior)
    assert consts == (c_xx, r_xx)
    x = sample_signals(prior, 10**6, Rng(3))[:, 0]
    mag = np.abs(x) ** 2
    assert np.mean((mag - 1) ** 2) == pytest.approx(c_xx, rel=0.01)
    assert np.mean(mag ** 2) == pytest.approx(r_xx, rel=0.01)


@pytest.mark.parametrize("field", [Field.REAL, Field.COMPLEX])
def test_prior_constants_vs_sampling_vector(field):
    prior = SignalPrior(3, 1.5, field)
    x = sample_signals(prior, 2 * 10**5, Rng(4))
    outer = x[:, :, None] * np.conj(x[:, None, :])
    consts = prior_constants(prior)
    assert np.mean(np.sum(np.abs(outer - prior.k_x) ** 2, axis=(1, 2))) == pytest.approx(consts.c_xx, rel=0.02)
    assert np.mean(np.sum(np.abs(outer) ** 2, axis=(1, 2))) == pytest.approx(consts.r_xx, rel=0.02)


@given(n=st.integers(1, 50), s=st.floats(0.1, 10), field=st.sampled_from(Field))
def test_prior_constants_homogeneity_and_gap(n, s, field):
    base = prior_constants(SignalPrior(n, 1.0, field))
    scaled = prior_constants(SignalPrior(n, s, field))
    assert scaled.c_xx == pytest.approx(base.c_xx * s ** 2, rel=1e-14)
    assert scaled.r_xx == pytest.approx(base.r_xx * s ** 2, rel=1e-14)
    assert scaled.r_xx - scaled.c_xx == pytest.approx(n * s ** 2, rel=1e-12)


# ---- analytic S-MSE -------------------------------------------------------

@pytest.mark.parametrize("field", [Field.REAL, Field.COMPLEX])
def test_scalar_smse_is_zero(field):
    sys = scalar_system(field)
    q = lspe_quantities(sys)
    assert abs(smse_lspe(q, sys)) < 1e-12
    smse, beta = smse_si(q, sys)
    assert abs(smse) < 1e-12
    if field is Field.COMPLEX:
        assert beta == pytest.approx(1.0)


@pytest.mark.parametrize("n, m", [(2, 1), (3, 4), (4, 9), (5, 16), (4, 16)])
def test_noiseless_complex_smse_closed_form(n, m):
    # generic noiseless complex A with M <= N^2: each measurement removes one unit of S-MSE
    sys = gaussian_system(n, m, seed=n * 100 + m)
    q = quantities_complex(sys)
    assert smse_lspe(q, sys) == pytest.approx(n * n - m, abs=1e-6 * n * n)


@pytest.mark.parametrize("n, m", [(2, 2), (3, 5), (4, 7), (4, 10)])
def test_noiseless_real_smse_closed_form(n, m):
    sys = gaussian_system(n, m, Field.REAL, seed=n * 100 + m)
    q = quantities_real(sys)
    assert smse_lspe(q, sys) == pytest.approx(n * (n + 1) - 2 * m, abs=1e-6 * n * n)


@pytest.mark.parametrize("estimator", ["lspe-c", "si:identity"])
def test_analytic_smse_matches_monte_carlo(estimator):
    noise = NoiseModel.white(32, ez_var=0.1, ey_mean=0.0, ey_var=0.1)
    sys = gaussian_system(4, 32, seed=21, noise=noise)
    rep = empirical_errors(sys, estimator, 10**4, Rng(5), **EXTRACT)
    assert rep.smse_analytic > 0
    assert abs(rep.smse_empirical - rep.smse_analytic) / rep.smse_analytic < 0.03


def test_noiseless_oversampled_lspe_recovers_exactly():
    # M = 32 > N^2 = 16: T is singular and the pseudo-inverse solution recovers xx^H
    sys = gaussian_system(4, 32, seed=21)
    rep = empirical_errors(sys, "lspe-c", 10**4, Rng(5), **EXTRACT)
    assert abs(rep.smse_analytic) < 1e-9 * 16
    assert rep.smse_empirical < 1e-9 * 16
    si = empirical_errors(sys, "si:identity", 10**4, Rng(5), **EXTRACT)
    assert abs(si.smse_empirical - si.smse_analytic) / si.smse_analytic < 0.03


def test_analytic_smse_matches_monte_carlo_with_noise_and_exp():
    noise = NoiseModel.white(24, ez_var=0.2, ey_mean=0.1, ey_var=0.1)
    sys = gaussian_system(3, 24, seed=3, noise=noise)
    for est in ("lspe-c", "lspe-exp:0.05", "si:exp:0.05"):
        rep = empirical_errors(sys, est, 10**4, Rng(6), **EXTRACT)
        assert abs(rep.smse_empirical - rep.smse_analytic) / rep.smse_analytic < 0.03, est


def test_analytic_smse_real_matches_monte_carlo():
    sys = gaussian_system(4, 16, Field.REAL, seed=2, noise=NoiseModel.white(16, 0.1, 0.0, 0.1))
    rep = empirical_errors(sys, "lspe-r", 10**4, Rng(7), **EXTRACT)
    assert abs(rep.smse_empirical - rep.smse_analytic) / rep.smse_analytic < 0.03


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), ratio=st.floats(0.5, 6), rho=st.floats(0, 0.95), ez=st.floats(0, 1),
       ey=st.floats(0, 1), field=st.sampled_from(Field), seed=st.integers(0, 2**32 - 1))
def test_lspe_dominates_si(n, ratio, rho, ez, ey, field, seed):
    m = max(1, int(round(ratio * n)))
    sys = gaussian_system(n, m, field, seed=seed, rho=round(rho, 3), noise=NoiseModel.white(m, ez, 0.0, ey))
    q = lspe_quantities(sys)
    lspe = smse_lspe(q, sys)
    si, _ = smse_si(q, sys)
    scale = prior_constants(sys.prior).r_xx
    assert lspe <= si + 1e-9 * abs(si) + 1e-9 * scale
    assert lspe >= -1e-6 * scale


def test_exp_lspe_dominates_exp_si():
    sys = gaussian_system(4, 20, seed=1, noise=NoiseModel.white(20, 0.1, 0.0, 0.1))
    q = quantities_exp(sys, 0.1)
    assert smse_lspe(q, sys) <= smse_si(q, sys)[0]


# ---- bound and N-MSE -----------------------------------------------------

def test_eer_bound_examples():
    assert eer_bound(0.0) == 0.0
    assert eer_bound(2.5) == 10.0


@pytest.mark.parametrize("estimator", ["lspe-c", "si:identity", "si:trunc:20", "lspe-exp:0.01"])
def test_per_trial_bound_holds(estimator):
    sys = gaussian_system(6, 30, seed=12, noise=NoiseModel.white(30, 0.1, 0.0, 0.1))
    rep = empirical_errors(sys, estimator, 2000, Rng(3), keep_samples=True, **EXTRACT)
    slack_viol, raw_viol = bound_violations(rep.samples, 6, EXTRACT["tol"])
    assert raw_viol == 0 and slack_viol == 0
    assert rep.eer_empirical <= 4 * rep.smse_empirical


def test_nmse_examples():
    x = np.array([1.0, 2j, -1.0])
    assert nmse(x, x) == pytest.approx(0, abs=1e-15)
    assert nmse(x, np.exp(0.7j) * x) == pytest.approx(0, abs=1e-15)
    ortho = np.array([2j, 1.0, 0.0])
    assert abs(np.vdot(ortho, x)) < 1e-15
    assert nmse(x, ortho) == pytest.approx(1.0)
    assert nmse(x, np.zeros(3)) == 1.0
    with pytest.raises(InputError):
        nmse(np.zeros(3), x)


@given(seed=st.integers(0, 2**32 - 1), re=st.floats(-5, 5), im=st.floats(-5, 5))
def test_nmse_is_scale_invariant(seed, re, im):
    c = complex(re, im)
    if abs(c) < 1e-3:
        return
    gen = np.random.default_rng(seed)
    x, xh = sample_gaussian(gen, (2, 4), Field.COMPLEX)
    assert nmse(x, c * xh) == pytest.approx(nmse(x, xh), rel=1e-9, abs=1e-12)


# ---- Monte-Carlo harness --------------------------------------------------

@pytest.mark.parametrize("field", [Field.REAL, Field.COMPLEX])
def test_single_scalar_trial_recovers_exactly(field):
    est = "lspe-r" if field is Field.REAL else "lspe-c"
    rep = empirical_errors(scalar_system(field), est, 1, Rng(0))
    assert rep.smse_empirical <= 1e-24
    assert rep.eer_empirical <= 1e-24


def test_reports_are_deterministic_across_runs_and_threads():
    sys = gaussian_system(4, 24, seed=3, noise=NoiseModel.white(24, 0.1, 0.0, 0.1))
    a = empirical_errors(sys, "lspe-c", 700, Rng(9), threads=1)
    b = empirical_errors(sys, "lspe-c", 700, Rng(9), threads=1)
    c = empirical_errors(sys, "lspe-c", 700, Rng(9), threads=8)
    assert a == b == c
    assert a != empirical_errors(sys, "lspe-c", 700, Rng(10))


def test_noiseless_n8_exact_recovery():
    # M = N^2 measurements determine xx^H, so both the analytic and empirical S-MSE vanish
    sys = gaussian_system(8, 64, seed=1)
    rep = empirical_errors(sys, "lspe-c", 500, Rng(2), **EXTRACT)
    scale = prior_constants(sys.prior).c_xx
    assert abs(rep.smse_analytic) <= 1e-9 * scale
    assert rep.smse_empirical <= 1e-9 * scale


def test_empirical_errors_input_checks():
    sys = gaussian_system(2, 4)
    with pytest.raises(InputError):
        empirical_errors(sys, "lspe-c", 0, Rng(0))
    with pytest.raises(InputError):
        empirical_errors(sys, "lspe-c", 5, np.random.default_rng(0))


# ---- moment oracles -------------------------------------------------------

def test_moment_formula_examples():
    assert folded_cov(0.0, 0.0, 0.5) == pytest.approx(0.5)
    assert exp_quadratic_mean(1.0, 1.0) == pytest.approx(0.5)
    assert gaussian_neg_mgf([1.0], [0.0], [[1.0]]) == pytest.approx(math.exp(0.5))
    assert gaussian_neg_mgf([1.0], [0.0], [[1.0]]) == pytest.approx(1.6487, abs=1e-4)


@pytest.mark.parametrize("seed", [0, 1])
def test_moment_oracles_pass(seed):
    report = moment_oracles(Rng(seed, 3))
    assert report.passed, report.failures


def test_corrupted_formula_is_caught():
    def wrong_cov(mu1, mu2, s12):
        return 4 * mu1 * mu2 * s12 + 3 * s12 ** 2

    report = moment_oracles(Rng(0, 3), samples=200_000, formulas={"folded_cov": wrong_cov})
    assert not report.passed
    assert all(c.lemma == "folded-normal covariance" for c in report.failures)
