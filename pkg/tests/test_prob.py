import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from dpvi import autodiff as ad
from dpvi import rng
from dpvi.prob import (
    Bernoulli,
    Categorical,
    DiagMultivariateNormal,
    Dirichlet,
    DivergenceError,
    GaussianMixture,
    GuideParams,
    InverseGamma,
    ModelSpec,
    Normal,
    Param,
    Site,
    batch_elbo,
    build_models,
    gmm_log_prob,
    log_prob,
    logreg_model,
    per_example_elbo,
    posterior_predictive_w,
    sample,
    unpack_noise,
    noise_size,
)
from dpvi.prob.guide import lane_sum
from dpvi.prob.models import etas

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_log_prob_examples():
    assert log_prob(Normal(0.0, 1.0), 0.0) == pytest.approx(-0.918939, abs=1e-6)
    assert log_prob(Bernoulli(0.5), 1) == pytest.approx(math.log(0.5), abs=1e-12)
    third = np.full(3, 1 / 3)
    assert log_prob(Dirichlet(np.ones(3)), third) == pytest.approx(math.log(2.0), abs=1e-12)


def test_normal_matches_scipy():
    x = np.linspace(-4, 6, 11)
    np.testing.assert_allclose(Normal(1.5, 2.0).log_prob(x), stats.norm(1.5, 2.0).logpdf(x), rtol=1e-13)
    lp = DiagMultivariateNormal(np.zeros(3), np.ones(3)).log_prob(np.array([0.1, 0.2, 0.3]))
    assert lp == pytest.approx(stats.norm.logpdf([0.1, 0.2, 0.3]).sum(), rel=1e-13)


def test_inverse_gamma_and_dirichlet_match_scipy():
    x = np.array([0.2, 1.0, 3.5])
    np.testing.assert_allclose(InverseGamma(2.0, 3.0).log_prob(x), stats.invgamma(2.0, scale=3.0).logpdf(x),
                               rtol=1e-12)
    p = np.array([0.2, 0.5, 0.3])
    a = np.array([1.5, 2.0, 0.7])
    assert Dirichlet(a).log_prob(p) == pytest.approx(stats.dirichlet(a).logpdf(p), rel=1e-12)


@pytest.mark.parametrize(
    "logpdf,lo,hi",
    [
        (lambda x: Normal(0.3, 0.7).log_prob(x), -8.0, 8.0),
        (lambda x: gmm_log_prob(np.array([0.3, 0.7]), np.array([[-1.0], [1.0]]), np.ones(2), x[:, None]),
         -10.0, 10.0),
        (lambda x: Dirichlet(np.array([2.0, 3.0])).log_prob(np.stack([x, 1 - x], -1)), 0.0, 1.0),
    ],
)
def test_continuous_normalization(logpdf, lo, hi):
    xs = np.linspace(lo, hi, 400_001)[1:-1]
    total = integrate.trapezoid(np.exp(logpdf(xs)), xs)
    assert abs(total - 1.0) < 1e-3


def test_inverse_gamma_normalization():
    # heavy x^-2 tail: integrate over log x
    t = np.linspace(math.log(1e-4), math.log(1e8), 400_001)
    x = np.exp(t)
    total = integrate.trapezoid(np.exp(InverseGamma(1.0, 1.0).log_prob(x)) * x, t)
    assert abs(total - 1.0) < 1e-3


def test_discrete_normalization():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.exp(Categorical(p).log_prob(np.arange(4))).sum() == pytest.approx(1.0, abs=1e-15)
    b = Bernoulli(0.3)
    assert math.exp(b.log_prob(0)) + math.exp(b.log_prob(1)) == pytest.approx(1.0, abs=1e-15)


def test_gmm_log_prob_examples():
    x = np.array([0.4, -1.3])
    locs = np.array([[1.0, 2.0]])
    single = gmm_log_prob(np.array([1.0]), locs, np.array([0.8]), x)
    assert single == pytest.approx(Normal(locs[0], 0.8).log_prob(x).sum(), abs=1e-13)
    two = gmm_log_prob(np.array([0.5, 0.5]), np.vstack([locs, locs]), np.array([0.8, 0.8]), x)
    assert two == pytest.approx(single, abs=1e-13)
    v = gmm_log_prob(np.array([0.3, 0.7]), np.array([[-1.0], [1.0]]), np.ones(2), np.array([0.0]))
    direct = math.log(0.3 * stats.norm.pdf(0, -1, 1) + 0.7 * stats.norm.pdf(0, 1, 1))
    assert v == pytest.approx(direct, abs=1e-12)


def test_gmm_log_prob_equals_direct_sum():
    key = rng.key(4)
    for i in range(50):
        k = rng.split(key, i)
        pis = Dirichlet(np.ones(4)).sample(rng.split(k, 0))
        locs = rng.normal(rng.split(k, 1), (4, 2))
        scales = 0.5 + rng.uniform(rng.split(k, 2), 4)
        x = 2 * rng.normal(rng.split(k, 3), (2,))
        dens = sum(pis[j] * np.prod(stats.norm.pdf(x, locs[j], scales[j])) for j in range(4))
        assert gmm_log_prob(pis, locs, scales, x) == pytest.approx(math.log(dens), abs=1e-12)


def test_gmm_log_prob_far_tail_is_finite():
    v = gmm_log_prob(np.array([0.5, 0.5]), np.array([[0.0], [1.0]]), np.ones(2) * 0.1, np.array([1e3]))
    assert np.isfinite(v)


def test_sample_examples():
    k = rng.key(0)
    x = sample(Normal(2.5, 1e-12), k)
    assert abs(x - 2.5) < 6e-12
    assert np.all(sample(Bernoulli(1.0), k, (1000,)) == 1)
    z = sample(Normal(3.0, 2.0), k, (10**5,))
    assert abs(z.mean() - 3.0) < 0.02


def test_samplers_match_their_laws():
    k = rng.key(8)
    d = Dirichlet(np.ones(5)).sample(k, (2000,))
    assert np.allclose(d.sum(-1), 1.0) and d.min() >= 0
    ig = InverseGamma(3.0, 2.0).sample(k, (20000,))
    assert stats.kstest(ig, stats.invgamma(3.0, scale=2.0).cdf).pvalue > 0.001
    c = Categorical(np.array([0.2, 0.5, 0.3])).sample(k, (20000,))
    np.testing.assert_allclose(np.bincount(c) / c.size, [0.2, 0.5, 0.3], atol=0.015)


def test_parameter_validation():
    with pytest.raises(ValueError):
        Normal(0.0, 0.0)
    with pytest.raises(ValueError):
        Bernoulli(1.2)
    with pytest.raises(ValueError):
        Bernoulli(0.5).log_prob(2)
    with pytest.raises(ValueError):
        Categorical(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        Dirichlet(np.ones(3)).log_prob(np.array([0.5, 0.6, 0.1]))
    with pytest.raises(ValueError):
        InverseGamma(1.0, 1.0).log_prob(-1.0)
    with pytest.raises(ValueError):
        GaussianMixture(pis=np.array([0.5, 0.6]), locs=np.zeros((2, 1)), scales=np.ones(2))


# -- guide parameters ------------------------------------------------------------

def test_guide_constraints():
    psi = GuideParams({
        "a": Param(np.array([-3.0, 0.5])),
        "s_log": Param(np.array([-50.0, 4.0]), "exp"),
        "p": Param(np.array([300.0, -2.0, 0.0]), "simplex"),
    })
    c = psi.constrained()
    np.testing.assert_array_equal(c["a"], [-3.0, 0.5])
    assert np.all(c["s"] > 0)
    assert c["p"].shape == (4,)
    assert abs(c["p"].sum() - 1.0) < 1e-12
    assert GuideParams.from_dict(psi.to_dict()).flatten().tolist() == psi.flatten().tolist()


# -- per-example ELBO ------------------------------------------------------------

def test_elbo_without_latents():
    model = ModelSpec("coin", (), lambda th: 0.0, lambda th, b: Bernoulli(0.5).log_prob(b["y"]))
    psi = model.init_params()
    values, grads = per_example_elbo(model, psi, {"y": np.array([1, 1, 0])}, 10, rng.key(0))
    np.testing.assert_allclose(values, math.log(0.5))
    assert grads.shape == (3, 0)


def test_elbo_guide_equals_prior_is_zero():
    def log_prior(th):
        return lane_sum(Normal(0.0, 1.0).log_prob(th["w"]))

    model = ModelSpec("prior", (Site("w", (3,)),), log_prior, lambda th, b: np.zeros(len(b["y"])))
    psi = model.init_params()
    for i in range(20):
        values, _ = per_example_elbo(model, psi, {"y": np.zeros(4)}, 7, rng.key(i))
        assert np.all(values == 0.0)


def test_elbo_logreg_at_zero_weights():
    model = logreg_model(1)
    psi = model.init_params()
    batch = {"x": np.array([[1.0], [-2.0], [0.3]]), "y": np.array([1, 0, 1])}
    n = 5
    values, _ = per_example_elbo(model, psi, batch, n, noise={"w": np.zeros(1)})
    prior0 = -math.log(4 * math.sqrt(2 * math.pi))
    np.testing.assert_allclose(values, math.log(0.5) + (prior0 + HALF_LOG_2PI) / n, atol=1e-14)


def test_plate_scaling_exhaustive():
    model = logreg_model(2)
    k = rng.key(3)
    x = rng.normal(rng.split(k, 0), (6, 2))
    y = np.array([0, 1, 1, 0, 1, 0])
    proto = model.init_params()
    psi = proto.unflatten(0.3 * rng.normal(rng.split(k, 1), (proto.size,)))
    noise = unpack_noise(model, rng.normal(rng.split(k, 2), (noise_size(model),)))
    full, full_grad = batch_elbo(model, psi, {"x": x, "y": y}, 6, noise=noise)
    ests, grads = [], []
    for pair in itertools.combinations(range(6), 2):
        idx = list(pair)
        v, g = per_example_elbo(model, psi, {"x": x[idx], "y": y[idx]}, 6, noise=noise)
        ests.append(3.0 * v.sum())
        grads.append(3.0 * g.sum(0))
    assert np.mean(ests) == pytest.approx(full, abs=1e-12)
    np.testing.assert_allclose(np.mean(grads, axis=0), full_grad, atol=1e-12)


def test_batch_elbo_matches_per_example_sum():
    models = build_models()
    model = models["hlr"]
    batch = {"x": rng.normal(rng.key(0), (5, 5)), "y": np.array([0, 1, 1, 0, 1]), "l": np.array([0, 1, 2, 0, 1])}
    psi = model.init_params()
    noise = unpack_noise(model, rng.normal(rng.key(1), (noise_size(model),)))
    v, g = per_example_elbo(model, psi, batch, 20, noise=noise)
    bv, bg = batch_elbo(model, psi, batch, 20, noise=noise)
    assert bv == pytest.approx(4.0 * v.sum(), rel=1e-13)
    np.testing.assert_allclose(bg, 4.0 * g.sum(0), rtol=1e-12, atol=1e-12)


def test_divergence_is_reported():
    def log_lik(th, b):
        return ad.exp(ad.exp(ad.sum(th["w"], axis=-1)) * 1e3) * np.ones(len(b["y"]))

    model = ModelSpec("blowup", (Site("w", (1,)),), lambda th: 0.0, log_lik)
    psi = model.init_params()
    # overflow on the tape surfaces as a domain error; update() reports it as divergence
    with pytest.raises((DivergenceError, ad.DomainError)):
        per_example_elbo(model, psi, {"y": np.zeros(2)}, 4, noise={"w": np.array([1.0])})


# -- models and predictive ------------------------------------------------------------

def test_build_models_examples():
    models = build_models(d=1)
    lp = models["logreg"].log_prior({"w": np.zeros((1, 1))})
    assert float(np.squeeze(lp)) == pytest.approx(-math.log(4 * math.sqrt(2 * math.pi)), abs=1e-14)
    np.testing.assert_array_equal(etas(np.zeros((5, 3)), np.ones((3, 3))), np.zeros((3, 5)))
    pis = Dirichlet(np.ones(5)).sample(rng.key(0))
    assert abs(pis.sum() - 1.0) < 1e-12 and pis.min() >= 0
    assert set(models) == {"logreg", "hlr", "gmm"}


def _hlr_psi(loc, scale_log):
    return GuideParams({"M_loc": Param(loc), "M_scale_log": Param(scale_log, "exp")})


def test_posterior_predictive_degenerate_guide():
    m0 = rng.normal(rng.key(2), (5, 3))
    g = np.array([0.5, -1.0, 2.0])
    s = 20000
    draws = posterior_predictive_w(_hlr_psi(m0, np.full((5, 3), -40.0)), g, rng.key(3), s)
    assert draws.shape == (s, 5)
    assert np.all(np.abs(draws.mean(0) - m0 @ g) < 6 / math.sqrt(s))
    draws0 = posterior_predictive_w(_hlr_psi(m0, np.zeros((5, 3))), np.zeros(3), rng.key(4), s)
    assert np.all(np.abs(draws0.mean(0)) < 6 / math.sqrt(s))


def test_posterior_predictive_covariance():
    loc = rng.normal(rng.key(5), (5, 3))
    scale_log = 0.5 * rng.normal(rng.key(6), (5, 3))
    g = np.array([1.0, -0.5, 0.8])
    draws = posterior_predictive_w(_hlr_psi(loc, scale_log), g, rng.key(7), 10**5)
    # law of total variance: I + Var_q(M g), diagonal because rows of M are independent
    expected = np.eye(5) + np.diag((np.exp(2 * scale_log) * g**2).sum(1))
    cov = np.cov(draws, rowvar=False)
    assert np.all(np.abs(np.diag(cov) / np.diag(expected) - 1) < 0.1)
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 0.1 * np.min(np.diag(expected))
