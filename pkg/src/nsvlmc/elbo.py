"""Factorised expected log-likelihood and the tight / importance-weighted bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data import MultiTaskDataset
from .errors import InvalidSpec, NonPositiveNoise
from .models import (VARIANCE_MODES, Draws, LmcState, latent_moments, likelihood_moments,
                     sample_draws)
from .numerics import LOG_2PI, RngStream
from .sparse import LatentMoments, batched_kl_u, kl_a, prior_cholesky

DEFAULT_S_TRAIN = 10


@dataclass
class ElboConfig:
    """``minibatch_sizes`` holds |B^c| per task (``None`` = full batch)."""

    s_train: int = DEFAULT_S_TRAIN
    minibatch_sizes: list | None = None
    variance_term_mode: str = "exact_cross"

    def __post_init__(self):
        if self.s_train < 1:
            raise InvalidSpec("s_train must be >= 1")
        if self.variance_term_mode not in VARIANCE_MODES:
            raise InvalidSpec(f"variance_term_mode must be one of {VARIANCE_MODES}")
        if self.minibatch_sizes is not None and min(self.minibatch_sizes) < 1:
            raise InvalidSpec("minibatch sizes must be >= 1")


@dataclass
class Batch:
    """Task-stacked points of a minibatch; ``scale`` is N_c / |B_c| per point."""

    X: torch.Tensor
    y: torch.Tensor
    task: torch.Tensor
    scale: torch.Tensor

    @property
    def n(self) -> int:
        return self.y.numel()


def _make_batch(data: MultiTaskDataset, index: list) -> Batch:
    X = np.concatenate([x[i] for x, i in zip(data.X, index)])
    y = np.concatenate([yy[i] for yy, i in zip(data.y, index)])
    task = np.concatenate([np.full(len(i), c) for c, i in enumerate(index)])
    scale = np.concatenate([np.full(len(i), n / len(i)) for n, i in zip(data.sizes, index)])
    return Batch(torch.from_numpy(X), torch.from_numpy(y), torch.from_numpy(task).long(),
                 torch.from_numpy(scale))


def full_batch(data: MultiTaskDataset) -> Batch:
    return _make_batch(data, [np.arange(n) for n in data.sizes])


def sample_batch(data: MultiTaskDataset, sizes, rng: RngStream) -> Batch:
    """Independent uniform minibatches per task, without replacement."""
    if sizes is None:
        return full_batch(data)
    if np.isscalar(sizes):
        sizes = [sizes] * data.n_tasks
    index = []
    for n, b in zip(data.sizes, sizes):
        index.append(np.arange(n) if b >= n else np.sort(rng.choice(n, b)))
    return _make_batch(data, index)


def gaussian_terms(y, noise, mean, varcorr) -> torch.Tensor:
    """log N(y | mean, noise) - varcorr / (2 noise), elementwise."""
    return -0.5 * (LOG_2PI + torch.log(noise)) - ((y - mean) ** 2 + varcorr) / (2.0 * noise)


def expected_loglik(y, task, a, b, moments: LatentMoments, noise_vars, scale,
                    mode: str = "exact_cross") -> torch.Tensor:
    """E_q(f)[log p(y | f, A, B)] for fixed mixtures, with per-task scaling.

    ``a`` is (C, H); ``b`` is (n, H, Q) or (S, n, H, Q) with one matrix per
    point; ``moments`` holds (Q, n) means/variances. Returns one value per
    leading sample of ``b`` (a scalar when ``b`` is (n, H, Q)).
    """
    noise_vars = torch.as_tensor(noise_vars, dtype=torch.float64)
    if bool((noise_vars <= 0).any()):
        raise NonPositiveNoise("noise variances must be positive")
    task = torch.as_tensor(task).long()
    single = b.ndim == 3
    b = b.unsqueeze(0) if single else b
    a_rows = a[task]
    w = torch.einsum("nh,snhq->snq", a_rows, b)
    mu, var = moments.mu.T, moments.var.T
    mean = (w * mu).sum(-1)
    if mode == "exact_cross":
        varcorr = (w * w * var).sum(-1)
    elif mode == "paper_literal":
        varcorr = (torch.einsum("nh,snhq->snq", a_rows ** 2, b ** 2) * var).sum(-1)
    else:
        raise InvalidSpec(f"unknown variance mode {mode!r}")
    terms = gaussian_terms(torch.as_tensor(y), noise_vars[task], mean, varcorr)
    out = (terms * torch.as_tensor(scale)).sum(-1)
    return out[0] if single else out


def log_mean_exp(values: torch.Tensor) -> torch.Tensor:
    return torch.logsumexp(values, 0) - math.log(values.shape[0])


def objective_terms(state: LmcState, flat: torch.Tensor, batch: Batch, draws: Draws,
                    mode: str = "exact_cross"):
    """(L~ per importance sample (S,), KL[q(A)||p(A)], KL[q(u)||p(u)])."""
    p = state.unpack(flat)
    z = state.warp(p, p["inducing.z"])
    L = prior_cholesky(z, p["kernel.log_sf2"], p["kernel.log_ls"])
    s_chol = state.s_chol(p)
    mom = latent_moments(state, p, batch.X, L=L, s_chol=s_chol)
    mean, varcorr = likelihood_moments(state, p, batch.X, batch.task, draws, mode, mom=mom)
    noise = torch.exp(p["noise.log_var"])
    ltilde = (gaussian_terms(batch.y, noise[batch.task], mean, varcorr) * batch.scale).sum(-1)
    kla = kl_a(state.mixture_a(p)) if state.variant == "nsvlmc" else flat.new_zeros(())
    klu = batched_kl_u(z, p["inducing.m"], s_chol, p["kernel.log_sf2"], p["kernel.log_ls"], L=L)
    return ltilde, kla, klu


def elbo_from_draws(state: LmcState, flat: torch.Tensor, batch: Batch, draws: Draws,
                    mode: str = "exact_cross") -> torch.Tensor:
    ltilde, kla, klu = objective_terms(state, flat, batch, draws, mode)
    return log_mean_exp(ltilde) - kla - klu


def elbo_iwvi(state: LmcState, batch: Batch, s: int, rng: RngStream | Draws,
              mode: str = "exact_cross", flat: torch.Tensor | None = None) -> torch.Tensor:
    """Importance-weighted bound with ``s`` draws of B per point and one draw of A.

    ``rng`` may also be a prepared :class:`Draws` to reuse fixed noise.
    """
    if s < 1:
        raise InvalidSpec("s must be >= 1")
    draws = rng if isinstance(rng, Draws) else sample_draws(state, batch.n, s, rng, mode)
    return elbo_from_draws(state, state.params if flat is None else flat, batch, draws, mode)


def elbo_tight(state: LmcState, batch: Batch, rng: RngStream | Draws,
               mode: str = "exact_cross", flat: torch.Tensor | None = None) -> torch.Tensor:
    """Tight bound: one B draw per point, i.e. the importance-weighted bound at S = 1."""
    return elbo_iwvi(state, batch, 1, rng, mode, flat)
