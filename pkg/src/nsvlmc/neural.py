"""Neural prior p(B | x) over the H x Q latent mixture, and q(A) over the C x H mixture.

B is laid out row = h, column = q; flattened vectors are row-major, so the
entry for (h, q) sits at ``h * Q + q``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .numerics import as_tensor, reparam_sample

NU0_INIT = 1e-4
TRUNK_DEPTH = 3


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-normal weights with variance 2 / (fan_in + fan_out)."""
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, sizes: list) -> list:
    """[(W, b), ...] for consecutive ``sizes``; zero biases."""
    return [(xavier(rng, a, b), np.zeros(b)) for a, b in zip(sizes[:-1], sizes[1:])]


def mlp_forward(layers, x: torch.Tensor, activation=torch.tanh, final_activation=False):
    for i, (W, b) in enumerate(layers):
        x = x @ W + b
        if i < len(layers) - 1 or final_activation:
            x = activation(x)
    return x


@dataclass
class NeuralMixturePrior:
    """Trunk MLP (three tanh layers of Q*H units) with mean and variance heads."""

    trunk: list
    head_mu: tuple
    head_nu: tuple
    nu0: torch.Tensor
    h: int
    q: int

    @classmethod
    def init(cls, input_dim: int, h: int, q: int, rng: np.random.Generator,
             nu0: float = NU0_INIT) -> "NeuralMixturePrior":
        width = q * h
        trunk = init_mlp(rng, [input_dim] + [width] * TRUNK_DEPTH)
        head_mu = (xavier(rng, width, h * q), np.zeros(h * q))
        head_nu = (xavier(rng, width, h * q), np.zeros(h * q))
        t = lambda a: torch.from_numpy(np.asarray(a, dtype=np.float64))
        return cls([(t(W), t(b)) for W, b in trunk], (t(head_mu[0]), t(head_mu[1])),
                   (t(head_nu[0]), t(head_nu[1])), torch.tensor(nu0, dtype=torch.float64), h, q)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return mlp_forward(self.trunk, x, final_activation=True)


def prior_b_moments(prior: NeuralMixturePrior, x):
    """Mean and variance (each ``H*Q`` per input) of the factorised prior p(B | x)."""
    x = as_tensor(x)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    t = prior.features(x)
    mu = t @ prior.head_mu[0] + prior.head_mu[1]
    nu = prior.nu0 * torch.sigmoid(t @ prior.head_nu[0] + prior.head_nu[1])
    if single:
        return mu[0], nu[0]
    return mu, nu


def sample_b(prior: NeuralMixturePrior, x, eps) -> torch.Tensor:
    """Reparameterised draw of B(x); ``eps`` has ``H*Q`` trailing entries."""
    mu, nu = prior_b_moments(prior, x)
    eps = as_tensor(eps)
    b = reparam_sample(mu, nu, eps)
    return b.reshape(*b.shape[:-1], prior.h, prior.q)


@dataclass
class MixtureA:
    """q(A) = N(mu, diag(exp(log_nu))), both stored as (C, H)."""

    mu: torch.Tensor
    log_nu: torch.Tensor

    def __post_init__(self):
        self.mu, self.log_nu = as_tensor(self.mu), as_tensor(self.log_nu)

    @property
    def nu(self) -> torch.Tensor:
        return torch.exp(self.log_nu)

    @classmethod
    def init(cls, c: int, h: int, rng: np.random.Generator) -> "MixtureA":
        return cls(rng.normal(0.0, 0.1, size=(c, h)), np.zeros((c, h)))


def sample_a(q_a: MixtureA, eps) -> torch.Tensor:
    eps = as_tensor(eps).reshape(q_a.mu.shape)
    return reparam_sample(q_a.mu, q_a.nu, eps)
