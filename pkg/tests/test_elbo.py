import itertools
import math

import numpy as np
import pytest
import torch

from nsvlmc.data import MultiTaskDataset, gen_toy, normalize
from nsvlmc.elbo import (ElboConfig, _make_batch, elbo_iwvi, elbo_tight,
                         expected_loglik, full_batch, log_mean_exp, objective_terms, sample_batch)
from nsvlmc.errors import InvalidSpec, NonPositiveNoise
from nsvlmc.kernels import KernelParams, kernel_matrix
from nsvlmc.models import ModelSpec, build_model, sample_draws, tril_from_s_chol
from nsvlmc.numerics import BASE_JITTER, RngStream, gaussian_logpdf
from nsvlmc.sparse import LatentMoments


def _set(state, name, value):
    state.params[state.layout.slice(name)] = torch.as_tensor(value, dtype=torch.float64).reshape(-1)


@pytest.fixture(scope="module")
def small():
    data, _ = gen_toy(1, sizes=(8, 4, 8))
    return normalize(data)


def test_zero_variance_perfect_fit():
    y = torch.tensor([0.3, -1.2])
    a = torch.ones(1, 1)
    b = torch.ones(2, 1, 1)
    mom = LatentMoments(y[None].clone(), torch.zeros(1, 2))
    val = expected_loglik(y, [0, 0], a, b, mom, [0.2], torch.ones(2))
    assert float(val) == pytest.approx(-math.log(2 * math.pi * 0.2), rel=1e-14)


def test_scalar_reduction_to_svgp_term(rng):
    y, mu, var = rng.standard_normal(6), rng.standard_normal(6), rng.uniform(0, 1, 6)
    mom = LatentMoments(torch.from_numpy(mu)[None], torch.from_numpy(var)[None])
    val = expected_loglik(y, np.zeros(6), torch.ones(1, 1), torch.ones(6, 1, 1), mom, [0.3],
                          torch.ones(6))
    ref = sum(-0.5 * math.log(2 * math.pi * 0.3) - (yi - m) ** 2 / 0.6 - v / 0.6
              for yi, m, v in zip(y, mu, var))
    assert float(val) == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("mode", ["exact_cross", "paper_literal"])
def test_matches_monte_carlo_expectation(rng, mode):
    n, C, H, Q = 3, 2, 3, 2
    y = rng.standard_normal(n)
    task = np.array([0, 1, 1])
    a = torch.from_numpy(rng.standard_normal((C, H)))
    b = torch.from_numpy(rng.standard_normal((n, H, Q)))
    mu, var = rng.standard_normal((Q, n)), rng.uniform(0.1, 1, (Q, n))
    noise = np.array([0.5, 0.8])
    val = float(expected_loglik(y, task, a, b, LatentMoments(torch.from_numpy(mu),
                                                             torch.from_numpy(var)),
                                noise, torch.ones(n), mode))
    f = mu + np.sqrt(var) * np.random.default_rng(5).standard_normal((100_000, Q, n))
    w = np.einsum("nh,nhq->nq", a.numpy()[task], b.numpy())
    mean = np.einsum("nq,sqn->sn", w, f)
    logp = (-0.5 * np.log(2 * np.pi * noise[task]) - (y - mean) ** 2 / (2 * noise[task])).sum(1)
    se = logp.std() / np.sqrt(len(logp))
    if mode == "exact_cross":
        assert abs(val - logp.mean()) < 3 * se
    else:
        # the literal correction drops the cross terms, so it is a different number in general
        assert np.isfinite(val)


def test_nonpositive_noise():
    mom = LatentMoments(torch.zeros(1, 1), torch.zeros(1, 1))
    with pytest.raises(NonPositiveNoise):
        expected_loglik([0.0], [0], torch.ones(1, 1), torch.ones(1, 1, 1), mom, [0.0], [1.0])


def test_config_validation():
    with pytest.raises(InvalidSpec):
        ElboConfig(s_train=0)
    with pytest.raises(InvalidSpec):
        ElboConfig(variance_term_mode="loose")
    with pytest.raises(InvalidSpec):
        ElboConfig(minibatch_sizes=[0, 2])


def test_size_one_minibatches_average_to_full_batch(rng):
    data = MultiTaskDataset([rng.standard_normal((4, 1)), rng.standard_normal((3, 1))],
                            [rng.standard_normal(4), rng.standard_normal(3)])
    st = build_model(ModelSpec("svlmc", q=2, m_per_latent=3), data, seed=0)
    full, _, _ = objective_terms(st, st.params, full_batch(data), sample_draws(st, 7, 1, None))
    vals = [objective_terms(st, st.params, _make_batch(data, [[i], [j]]),
                            sample_draws(st, 2, 1, None))[0]
            for i, j in itertools.product(range(4), range(3))]
    assert float(torch.stack(vals).mean()) == pytest.approx(float(full), rel=1e-12)


def test_sample_batch_sizes(small):
    rng = RngStream(0)
    b = sample_batch(small, 5, rng)
    assert b.n == 5 + 4 + 5
    assert torch.equal(b.scale[b.task == 0], torch.full((5,), 8 / 5, dtype=torch.float64))
    assert torch.equal(b.scale[b.task == 1], torch.ones(4, dtype=torch.float64))
    assert sample_batch(small, None, rng).n == 20


def test_tight_equals_iwvi_with_one_draw(small):
    st = build_model(ModelSpec("nsvlmc", q=2, h=5), small, seed=0)
    _set(st, "nu0.log", math.log(0.3))
    batch = full_batch(small)
    for mode in ("exact_cross", "paper_literal"):
        a = elbo_tight(st, batch, RngStream(7), mode)
        b = elbo_iwvi(st, batch, 1, RngStream(7), mode)
        assert torch.equal(a, b)


def test_deterministic_embedding_makes_s_irrelevant(small):
    st = build_model(ModelSpec("nsvlmc", q=2, h=5), small, seed=0)
    _set(st, "nu0.log", -700.0)
    batch = full_batch(small)
    vals = [float(elbo_iwvi(st, batch, s, RngStream(3))) for s in (1, 4, 9)]
    assert vals[1] == pytest.approx(vals[0], rel=1e-12)
    assert vals[2] == pytest.approx(vals[0], rel=1e-12)


def test_kl_terms_vanish_at_prior(small):
    st = build_model(ModelSpec("nsvlmc", q=2, h=5), small, seed=0)
    _set(st, "qa.mu", np.zeros((3, 5)))
    _set(st, "qa.log_nu", np.zeros((3, 5)))
    _, kla, klu = objective_terms(st, st.params, full_batch(small),
                                  sample_draws(st, 20, 1, RngStream(0)))
    assert float(kla) == 0.0
    assert abs(float(klu)) < 1e-8


def test_log_mean_exp_is_stable():
    v = torch.tensor([-1e6, -1e6 - 2.0, -1e6 + 1.0], dtype=torch.float64)
    out = log_mean_exp(v)
    assert math.isfinite(float(out))
    assert float(out) == pytest.approx(-1e6 + math.log((math.exp(0) + math.exp(-2) + math.exp(1))
                                                       / 3), rel=1e-15)


def test_iwvi_mean_nondecreasing_in_s(small):
    st = build_model(ModelSpec("nsvlmc", q=2, h=5), small, seed=0)
    _set(st, "nu0.log", math.log(0.5))
    batch = full_batch(small)
    means, ses = [], []
    for s in (1, 5, 10):
        v = np.array([float(elbo_iwvi(st, batch, s, RngStream(seed))) for seed in range(200)])
        means.append(v.mean())
        ses.append(v.std(ddof=1) / np.sqrt(len(v)))
    for i in range(2):
        assert means[i + 1] >= means[i] - 2 * math.hypot(ses[i], ses[i + 1])
    assert means[2] > means[0]


def test_optimal_sparse_bound_matches_collapsed_formula(rng):
    # C = Q = 1 with unit weight: plugging in the optimal q(u) gives the collapsed sparse bound
    X = np.sort(rng.uniform(-2, 2, 12))[:, None]
    y = np.sin(2 * X[:, 0]) + 0.1 * rng.standard_normal(12)
    data = MultiTaskDataset([X], [y])
    st = build_model(ModelSpec("svlmc", q=1, m_per_latent=5, length_scale=0.8), data, seed=0)
    _set(st, "coreg.a", [[1.0]])
    noise = 0.05
    _set(st, "noise.log_var", [math.log(noise)])
    p = st.unpack()
    k = KernelParams(1.0, [0.8])
    Z = p["inducing.z"][0].numpy()
    Kz = kernel_matrix(Z, Z, k).numpy()
    Kz = Kz + BASE_JITTER * np.diag(Kz).mean() * np.eye(5)
    Kzx = kernel_matrix(Z, X, k).numpy()
    Sigma = np.linalg.inv(Kz + Kzx @ Kzx.T / noise)
    S = Kz @ Sigma @ Kz
    m = Kz @ Sigma @ Kzx @ y / noise
    _set(st, "inducing.m", m[None])
    _set(st, "inducing.s_tril", tril_from_s_chol(torch.linalg.cholesky(torch.from_numpy(S)))[None])
    val = float(elbo_tight(st, full_batch(data), RngStream(0)))
    Qff = Kzx.T @ np.linalg.solve(Kz, Kzx)
    ref = float(gaussian_logpdf(y, np.zeros(12), Qff + noise * np.eye(12))) - (
        12 * 1.0 - np.trace(Qff)) / (2 * noise)
    assert val == pytest.approx(ref, rel=1e-8)
