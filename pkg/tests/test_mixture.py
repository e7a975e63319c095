import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fd_grad, rel_err
from rescodec import autograd as ag
from rescodec.mixture import (
    NUM_BINS,
    RMAX,
    RMIN,
    SIGMA_MIN,
    MixtureParams,
    build_cdf_table,
    conditional_means,
    discrete_logistic_pmf,
    mixture_nll_bits,
    nll_bits,
    pixel_pmf,
    sample,
)


def _random_params(rng, k=3, h=4, w=5, sigma=(0.3, 4.0)):
    pi = rng.random((k, 3, h, w)) + 0.05
    pi /= pi.sum(axis=0)
    return MixtureParams(
        pi,
        rng.normal(size=(k, 3, h, w)) * 3,
        rng.uniform(*sigma, size=(k, 3, h, w)),
        rng.normal(size=(k, 3, h, w)) * 0.5,
    )


def test_discrete_logistic_closed_forms():
    s = lambda z: 1 / (1 + math.exp(-z))
    assert discrete_logistic_pmf(0, 0.0, 1.0) == pytest.approx(s(0.5) - s(-0.5), abs=1e-15)
    assert discrete_logistic_pmf(0, 0.0, 1.0) == pytest.approx(0.2449187, abs=1e-7)
    # lower tail absorbs everything below rmin
    assert discrete_logistic_pmf(RMIN, RMIN, 1.0) == pytest.approx(0.6224593, abs=1e-7)
    assert discrete_logistic_pmf(RMAX, RMAX, 1.0) == pytest.approx(0.6224593, abs=1e-7)
    assert -math.log2(0.2449187) == pytest.approx(2.0296, abs=1e-4)
    with pytest.raises(ValueError):
        discrete_logistic_pmf(RMAX + 1, 0.0, 1.0)


def _mp_pmf(pi, mu, sigma, r):
    mpmath.mp.dps = 40
    sig = lambda z: 1 / (1 + mpmath.exp(-z))
    total = mpmath.mpf(0)
    for p, m, s in zip(pi, mu, sigma):
        hi = mpmath.mpf(1) if r == RMAX else sig((r + mpmath.mpf("0.5") - m) / s)
        lo = mpmath.mpf(0) if r == RMIN else sig((r - mpmath.mpf("0.5") - m) / s)
        total += p * (hi - lo)
    return total


def test_pixel_pmf_matches_high_precision_k2():
    pi = np.array([[0.3, 0.2, 0.6], [0.7, 0.8, 0.4]])
    mu = np.array([[1.5, -2.0, 0.25], [-3.0, 4.0, 10.0]])
    sigma = np.array([[0.8, 2.0, 1.1], [3.0, 0.5, 7.0]])
    lam = np.array([[0.4, -0.3, 0.2], [-0.1, 0.5, 0.05]])
    params = MixtureParams(pi, mu, sigma, lam)
    prev = [2, -1]
    mu_t = conditional_means(mu, lam, prev)
    for c in range(3):
        pmf = pixel_pmf(params, c, prev[:c])
        for r in (RMIN, -7, -1, 0, 1, 3, 12, RMAX):
            ref = float(_mp_pmf(pi[:, c], mu_t[:, c], sigma[:, c], r))
            assert abs(pmf[r - RMIN] - ref) < 1e-12


def test_conditional_means_chain():
    mu = np.zeros((1, 3))
    lam = np.array([[2.0, 3.0, 5.0]])
    out = conditional_means(mu, lam, [1.0, 10.0])
    np.testing.assert_array_equal(out, [[0.0, 2.0, 3.0 + 50.0]])


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    k=st.integers(1, 5),
    log_sigma=st.floats(math.log(1e-3), math.log(50.0)),
    mu=st.floats(-300, 300),
)
def test_pixel_pmf_normalized(seed, k, log_sigma, mu):
    rng = np.random.default_rng(seed)
    pi = rng.random((k, 3)) + 1e-3
    params = MixtureParams(
        pi / pi.sum(0), mu + rng.normal(size=(k, 3)) * 5, np.exp(log_sigma) * rng.uniform(1, 1.5, (k, 3)),
        rng.normal(size=(k, 3)),
    )
    prev = list(rng.integers(-255, 256, size=2))
    for c in range(3):
        pmf = pixel_pmf(params, c, prev[:c])
        assert abs(pmf.sum() - 1.0) < 1e-9
        assert np.all(pmf >= 0)


def test_nll_bits_matches_per_pixel_pmf():
    rng = np.random.default_rng(7)
    p = _random_params(rng)
    r = rng.integers(-6, 7, size=(3, 4, 5))
    r[0, 0, 0], r[2, 3, 4] = RMIN, RMAX
    ref = 0.0
    for u in range(4):
        for v in range(5):
            pp = p.at(u, v)
            for c in range(3):
                pmf = pixel_pmf(pp, c, list(r[:c, u, v]))
                ref -= math.log2(max(pmf[r[c, u, v] - RMIN], 1e-12))
    assert nll_bits(r, p) == pytest.approx(ref, rel=1e-10)


def test_mixture_nll_bits_gradients():
    rng = np.random.default_rng(8)
    with ag.precision(np.float64):
        shape = (2, 3, 3, 3, 4)
        lg = ag.Tensor(rng.normal(size=shape), requires_grad=True, name="logits")
        mu = ag.Tensor(rng.normal(size=shape) * 3, requires_grad=True, name="mu")
        sr = ag.Tensor(rng.normal(size=shape), requires_grad=True, name="sigma_raw")
        lam = ag.Tensor(rng.normal(size=shape) * 0.5, requires_grad=True, name="lam")
        r = rng.integers(-5, 6, size=(2, 3, 3, 4))
        r[0, 0, 0, 0], r[1, 2, 1, 1] = RMIN, RMAX

        def loss():
            return mixture_nll_bits(lg, mu, ag.softplus(sr) + SIGMA_MIN, lam, r)

        out = loss()
        out.backward()
        for t in (lg, mu, sr, lam):
            assert rel_err(fd_grad(lambda: loss().item(), t.data), t.grad) < 1e-6, t.name


def test_mixture_nll_bits_agrees_with_nll_bits():
    rng = np.random.default_rng(9)
    p = _random_params(rng, k=5)
    r = rng.integers(-4, 5, size=(3, 4, 5))
    with ag.precision(np.float64):
        bits = mixture_nll_bits(np.log(p.pi)[None], p.mu[None], p.sigma[None], p.lam[None], r[None]).item()
    assert bits == pytest.approx(nll_bits(r, p), rel=1e-12)


def test_cdf_table_uniform():
    cdf = build_cdf_table(np.full(NUM_BINS, 1 / NUM_BINS))
    counts = np.diff(cdf)
    assert cdf[0] == 0 and cdf[-1] == 1 << 16
    assert counts.max() - counts.min() <= 1
    assert counts.min() >= 128


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 600), peaky=st.booleans())
def test_cdf_table_properties(seed, n, peaky):
    rng = np.random.default_rng(seed)
    pmf = rng.random(n) ** (30 if peaky else 1)
    pmf /= pmf.sum()
    for precision in (16, 24):
        if n >= 1 << precision:
            continue
        cdf = build_cdf_table(pmf, precision)
        counts = np.diff(cdf)
        assert cdf[0] == 0 and cdf[-1] == 1 << precision
        assert counts.min() >= 1


def test_sample_at_sigma_min_is_round_mu():
    rng = np.random.default_rng(10)
    k, h, w = 3, 40, 50
    pi = np.zeros((k, 3, h, w))
    pi[1] = 1.0
    mu = rng.integers(-20, 21, size=(k, 3, h, w)).astype(np.float64)
    p = MixtureParams(pi, mu, np.full((k, 3, h, w), SIGMA_MIN), np.zeros((k, 3, h, w)))
    s = sample(p, 0)
    assert np.mean(s == mu[1]) > 0.999


def test_sample_frequencies_match_pmf():
    k = 2
    pi = np.array([[0.3] * 3, [0.7] * 3])
    mu = np.array([[0.4, -1.0, 2.0], [-2.5, 1.0, 0.0]])
    sigma = np.array([[1.2, 0.7, 2.0], [0.6, 1.5, 0.9]])
    lam = np.zeros((k, 3))
    n = 100_000
    # n independent draws at one position: replicate the pixel over a 1 x n image
    tile = lambda a: np.repeat(a[:, :, None, None], n, axis=3)
    p = MixtureParams(tile(pi), tile(mu), tile(sigma), tile(lam))
    s = sample(p, 1)
    single = MixtureParams(pi, mu, sigma, lam)
    for c in range(3):
        pmf = pixel_pmf(single, c, [0, 0][:c])
        counts = np.bincount(s[c, 0] - RMIN, minlength=NUM_BINS)
        expected = n * pmf
        sd = np.sqrt(n * pmf * (1 - pmf))
        mask = expected > 5
        assert np.all(np.abs(counts[mask] - expected[mask]) <= 4 * sd[mask] + 1)


def test_params_validate():
    rng = np.random.default_rng(11)
    p = _random_params(rng)
    p.validate()
    bad = MixtureParams(p.pi * 2, p.mu, p.sigma, p.lam)
    with pytest.raises(ValueError):
        bad.validate()
