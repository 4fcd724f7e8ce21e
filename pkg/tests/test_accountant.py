import math

import numpy as np
import pytest
from scipy import optimize
from scipy.special import gammaln, logsumexp
from scipy.stats import norm

from dpvi import accountant as acc


def gaussian_mechanism_epsilon(sigma: float, delta: float) -> float:
    """Exact epsilon of one Gaussian mechanism with sensitivity 1."""

    def excess(eps):
        return norm.cdf(0.5 / sigma - eps * sigma) - math.exp(eps) * norm.cdf(-0.5 / sigma - eps * sigma) - delta

    if excess(0.0) <= 0:
        return 0.0
    return optimize.brentq(excess, 0.0, 100.0, xtol=1e-12)


def rdp_epsilon(sigma: float, q: float, T: int, delta: float) -> float:
    """Loose upper bound from integer-order Renyi DP of the subsampled Gaussian."""
    best = math.inf
    for a in range(2, 257):
        k = np.arange(a + 1)
        log_binom = gammaln(a + 1) - gammaln(k + 1) - gammaln(a - k + 1)
        with np.errstate(divide="ignore"):
            terms = log_binom + (a - k) * math.log1p(-q) + k * math.log(q) + (k * k - k) / (2 * sigma**2)
        rdp = T * logsumexp(terms) / (a - 1)
        best = min(best, rdp + math.log(1 / delta) / (a - 1))
    return best


@pytest.mark.parametrize("delta", [1e-3, 1e-5, 1e-7])
def test_gaussian_mechanism_oracle(delta):
    assert acc.epsilon(1.0, 1.0, 1, delta) == pytest.approx(gaussian_mechanism_epsilon(1.0, delta), abs=1e-3)


def test_zero_sampling_is_point_mass_at_origin():
    pld = acc.pld_subsampled_gaussian(1.0, 0.0)
    i = int(np.argmax(pld.mass))
    assert pld.mass[i] == pytest.approx(1.0, abs=1e-12)
    assert pld.losses[i] == 0.0
    assert acc.get_epsilon(pld, 1e-5) == 0.0


def test_huge_noise_is_almost_free():
    assert acc.epsilon(1e3, 0.01, 1, 1e-5) < 1e-2


def test_compose_identity_and_point_mass():
    pld = acc.pld_subsampled_gaussian(2.0, 0.1, points=2**14)
    assert acc.compose(pld, 1).mass.tolist() == pld.mass.tolist()
    step = pld.grid_step
    c = 37 * step
    pm = acc.Pld.point_mass(c, points=2**14)
    out = acc.compose(pm, 3)
    j = int(np.argmax(out.mass))
    assert out.mass[j] == pytest.approx(1.0, abs=1e-12)
    assert out.losses[j] == pytest.approx(3 * c, abs=1e-9)


def test_compose_associative():
    pld = acc.pld_subsampled_gaussian(1.2, 0.05, points=2**15)
    a = acc.compose(pld, 4)
    b = acc.compose(acc.compose(pld, 2), 2)
    tv = 0.5 * (np.abs(a.mass - b.mass).sum() + abs(a.inf_mass - b.inf_mass))
    assert tv < 1e-9


def test_compose_inf_mass():
    base = acc.pld_subsampled_gaussian(1.0, 0.5, points=2**12)
    m = base.mass * 0.99
    pld = acc.Pld(base.grid_origin, base.grid_step, m, 1.0 - m.sum())
    out = acc.compose(pld, 5)
    assert out.inf_mass == pytest.approx(1 - (1 - pld.inf_mass) ** 5, abs=1e-12)
    assert out.mass.sum() + out.inf_mass == pytest.approx(1.0, abs=1e-9)


def test_point_mass_epsilon_zero():
    pm = acc.Pld.point_mass(0.0)
    for d in (1e-2, 1e-5, 1e-9):
        assert acc.get_epsilon(pm, d) == 0.0


def test_delta_monotone_in_epsilon():
    pld = acc.compose(acc.pld_subsampled_gaussian(1.0, 0.02, points=2**15), 200)
    eps = np.linspace(0, 5, 201)
    d = acc.delta_for_epsilon(pld, eps)
    assert np.all(np.diff(d) <= 1e-15)
    e = acc.get_epsilon(pld, 1e-5)
    assert acc.delta_for_epsilon(pld, e) == pytest.approx(1e-5, rel=1e-6)


def test_monotonicity_lattice():
    sigmas, qs, ts = (1.0, 2.0, 4.0), (0.001, 0.01, 0.1), (10, 100, 1000)
    e = np.array([[[acc.epsilon(s, q, t, 1e-5) for t in ts] for q in qs] for s in sigmas])
    assert np.all(np.diff(e, axis=0) <= 0)
    assert np.all(np.diff(e, axis=1) >= 0)
    assert np.all(np.diff(e, axis=2) >= 0)


@pytest.mark.parametrize(
    "sigma,q,T", [(1.0, 0.01, 1000), (2.0, 0.1, 100), (0.8, 0.001, 10_000), (1.5, 128 / 60000, 9380)]
)
def test_renyi_bound_dominates(sigma, q, T):
    assert acc.epsilon(sigma, q, T, 1e-5) <= rdp_epsilon(sigma, q, T, 1e-5)


def test_grid_refinement_stable_at_reference_point():
    args = (1.5, 128 / 60000, 9380, 1 / 60000)
    coarse = acc.epsilon(*args, points=2**17, refine=False)
    fine = acc.epsilon(*args, points=2**18, refine=False)
    assert abs(coarse - fine) < 1e-3


def test_errors():
    with pytest.raises(acc.GridError):
        acc.epsilon(0.05, 1.0, 1, 1e-5)
    pm = acc.Pld.point_mass(0.0, points=64)
    with pytest.raises(ValueError):
        acc.get_epsilon(pm, 0.0)
    m = np.full(64, 0.9 / 64)
    with pytest.raises(acc.GridError):
        acc.get_epsilon(acc.Pld(-30.0, 60 / 64, m, 0.1), 1e-3)
    with pytest.raises(ValueError):
        acc.Pld(-30.0, 60 / 64, np.full(64, 1 / 60))
    with pytest.raises(ValueError):
        acc.compose(pm, 0)


def test_approximate_sigma_round_trip():
    s = acc.approximate_sigma(1.0, 1e-5, 0.01, 1000)
    e = acc.epsilon(s, 0.01, 1000, 1e-5)
    assert 0.95 <= e <= 1.0
    assert acc.epsilon(0.98 * s, 0.01, 1000, 1e-5) > 1.0


def test_approximate_sigma_monotone():
    strict = acc.approximate_sigma(0.5, 1e-5, 0.01, 1000)
    loose = acc.approximate_sigma(2.0, 1e-5, 0.01, 1000)
    assert strict > loose


def test_approximate_sigma_reference_point():
    s = acc.approximate_sigma(0.5, 1 / 60000, 128 / 60000, 9380)
    assert 1.3 <= s <= 1.7


def test_approximate_sigma_infeasible():
    with pytest.raises(ValueError):
        acc.approximate_sigma(1e-4, 1e-5, 0.5, 10_000, bracket=(0.3, 2.0))
