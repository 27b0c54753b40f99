import numpy as np
import pytest
import torch

from nsvlmc.data import gen_toy, normalize
from nsvlmc.elbo import full_batch
from nsvlmc.errors import InvalidSpec
from nsvlmc.models import (Draws, ModelSpec, build_model, likelihood_moments, parameter_count,
                           sample_draws)
from nsvlmc.numerics import RngStream
from nsvlmc.training import TrainConfig, train


@pytest.fixture(scope="module")
def toy():
    data, _ = gen_toy(0)
    return normalize(data)


@pytest.fixture(scope="module")
def small():
    data, _ = gen_toy(0, sizes=(12, 5, 12))
    return normalize(data)


def test_nsvlmc_parameter_audit(toy):
    st = build_model(ModelSpec("nsvlmc", q=1, h=100, m_per_latent=25), toy, seed=0)
    M, C, H = 25, 3, 100
    kernels = 1 + 1
    inducing = M + M + M * (M + 1) // 2
    trunk = (1 * H + H) + 2 * (H * H + H)
    heads = 2 * (H * H + H) + 1
    assert parameter_count(st, "kernel") == kernels
    assert parameter_count(st, "inducing") == inducing
    assert parameter_count(st, "prior") + parameter_count(st, "nu0") == trunk + heads
    assert parameter_count(st, "qa") == C * H * 2
    assert parameter_count(st) == kernels + inducing + trunk + heads + C * H * 2 + C


def test_svlmc_has_six_weights(toy):
    st = build_model(ModelSpec("svlmc", q=2, m_per_latent=10), toy, seed=0)
    assert st.layout.shapes["coreg.a"] == (3, 2)
    assert "qa.mu" not in st.layout.shapes


@pytest.mark.parametrize("variant", ["svlmc", "nsvlmc", "nmogp", "ngprn", "svlmc-dkl"])
def test_build_is_deterministic(small, variant):
    a = build_model(ModelSpec(variant, m_per_latent=6), small, seed=3)
    b = build_model(ModelSpec(variant, m_per_latent=6), small, seed=3)
    c = build_model(ModelSpec(variant, m_per_latent=6), small, seed=4)
    assert torch.equal(a.params, b.params)
    assert not torch.equal(a.params, c.params)


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        ModelSpec("lmc")
    with pytest.raises(InvalidSpec):
        ModelSpec("svlmc", q=0)
    with pytest.raises(InvalidSpec):
        ModelSpec("nmogp", activation="softplus")
    assert ModelSpec("svlmc_dkl").variant == "svlmc-dkl"


def _set(state, name, value):
    state.params[state.layout.slice(name)] = torch.as_tensor(value, dtype=torch.float64).reshape(-1)


def _shared_latents(src, dst):
    for k in ("kernel.log_sf2", "kernel.log_ls", "inducing.z", "inducing.m", "inducing.s_tril"):
        dst.params[dst.layout.slice(k)] = src.params[src.layout.slice(k)]


@pytest.mark.parametrize("mode", ["exact_cross", "paper_literal"])
def test_nsvlmc_with_fixed_embedding_is_svlmc(small, rng, mode):
    q, h = 2, 4
    ns = build_model(ModelSpec("nsvlmc", q=q, h=h, m_per_latent=6), small, seed=0)
    sv = build_model(ModelSpec("svlmc", q=q, m_per_latent=6), small, seed=0)
    _set(ns, "inducing.m", rng.standard_normal((q, 6)))
    _shared_latents(ns, sv)
    for i in range(3):
        _set(ns, f"prior.trunk{i}.W", np.zeros(ns.layout.shapes[f"prior.trunk{i}.W"]))
    B = rng.standard_normal((h, q))
    _set(ns, "prior.mu.W", np.zeros(ns.layout.shapes["prior.mu.W"]))
    _set(ns, "prior.mu.b", B.reshape(-1))
    _set(ns, "nu0.log", -700.0)
    mu_a = rng.standard_normal((3, h))
    _set(ns, "qa.mu", mu_a)
    _set(ns, "qa.log_nu", np.full((3, h), -700.0))
    _set(sv, "coreg.a", mu_a @ B)
    batch = full_batch(small)
    d = sample_draws(ns, batch.n, 3, RngStream(0), mode)
    m1, v1 = likelihood_moments(ns, ns.unpack(), batch.X, batch.task, d, "exact_cross")
    m2, v2 = likelihood_moments(sv, sv.unpack(), batch.X, batch.task, Draws(), "exact_cross")
    assert torch.allclose(m1, m2.expand_as(m1), rtol=1e-12, atol=1e-12)
    assert torch.allclose(v1, v2.expand_as(v1), rtol=1e-12, atol=1e-12)


def test_constant_ngprn_is_svlmc(small, rng):
    ng = build_model(ModelSpec("ngprn", q=2, h=3, m_per_latent=6), small, seed=0)
    sv = build_model(ModelSpec("svlmc", q=2, m_per_latent=6), small, seed=0)
    _set(ng, "inducing.m", rng.standard_normal((2, 6)))
    _shared_latents(ng, sv)
    last = max(int(k.split(".")[1][5:]) for k in ng.layout.shapes if k.startswith("gprn."))
    A = rng.standard_normal((3, 2))
    _set(ng, f"gprn.layer{last}.W", np.zeros(ng.layout.shapes[f"gprn.layer{last}.W"]))
    _set(ng, f"gprn.layer{last}.b", A.reshape(-1))
    _set(sv, "coreg.a", A)
    batch = full_batch(small)
    m1, v1 = likelihood_moments(ng, ng.unpack(), batch.X, batch.task, Draws())
    m2, v2 = likelihood_moments(sv, sv.unpack(), batch.X, batch.task, Draws())
    assert torch.equal(m1, m2) and torch.equal(v1, v2)


def test_linear_nmogp_matches_svlmc_in_expectation(small, rng):
    nm = build_model(ModelSpec("nmogp", q=2, h=2, m_per_latent=6, activation="identity"),
                     small, seed=0)
    sv = build_model(ModelSpec("svlmc", q=2, m_per_latent=6), small, seed=0)
    _set(nm, "inducing.m", rng.standard_normal((2, 6)))
    _shared_latents(nm, sv)
    A = rng.standard_normal((3, 2))
    _set(nm, "coreg.a", A)
    _set(nm, "coreg.b", np.eye(2))
    _set(sv, "coreg.a", A)
    batch = full_batch(small)
    s = 20000
    d = sample_draws(nm, batch.n, s, RngStream(1))
    m1, v1 = likelihood_moments(nm, nm.unpack(), batch.X, batch.task, d)
    m2, v2 = likelihood_moments(sv, sv.unpack(), batch.X, batch.task, Draws())
    se_mean = torch.sqrt(v2 / s)
    assert bool(((m1 - m2).abs() <= 4 * se_mean + 1e-12).all())
    assert torch.allclose(v1, v2, rtol=0.05, atol=1e-6)


@pytest.mark.parametrize("variant", ["svlmc", "nsvlmc", "nmogp", "ngprn", "svlmc-dkl"])
def test_objective_rises_early(toy, variant):
    wins = 0
    for seed in range(10):
        st = build_model(ModelSpec(variant, q=2, h=10, m_per_latent=20), toy, seed=seed)
        cfg = TrainConfig(iterations=200, minibatch=32, s_train=5, seed=seed, log_every=1)
        trace = train(st, toy, cfg).trace
        obj = np.array([r.objective for r in trace])
        assert np.isfinite(obj).all()
        wins += obj[-20:].mean() > obj[:20].mean()
    assert wins >= 9
