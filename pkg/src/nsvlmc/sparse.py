"""Inducing-point posteriors q(u_q), the induced marginals q(f_q) and KL terms."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch

from .errors import NonPositiveVariance
from .kernels import KernelParams, batched_kernel
from .numerics import as_tensor, cholesky_with_jitter

log = logging.getLogger(__name__)

#: how many variances were clamped at zero, keyed by call site
clamp_counter: Counter = Counter()

KMEANS_ITERATIONS = 25


@dataclass
class InducingBlock:
    """Pseudo-inputs ``z`` (M, D) with q(u) = N(m, s_chol s_chol^T)."""

    z: torch.Tensor
    m: torch.Tensor
    s_chol: torch.Tensor

    def __post_init__(self):
        self.z, self.m, self.s_chol = as_tensor(self.z), as_tensor(self.m), as_tensor(self.s_chol)

    @property
    def S(self) -> torch.Tensor:
        return self.s_chol @ self.s_chol.T


@dataclass
class LatentMoments:
    """Marginal means/variances of q(f_q) at a batch of points, each shaped (Q, n)."""

    mu: torch.Tensor
    var: torch.Tensor


def s_chol_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Lower-triangular factor with the diagonal stored in log-space."""
    return torch.tril(raw, -1) + torch.diag_embed(torch.exp(torch.diagonal(raw, dim1=-2, dim2=-1)))


def raw_from_s_chol(L: torch.Tensor) -> torch.Tensor:
    return torch.tril(L, -1) + torch.diag_embed(torch.log(torch.diagonal(L, dim1=-2, dim2=-1)))


def prior_cholesky(z, log_sf2, log_ls) -> torch.Tensor:
    """Lower Cholesky factors (Q, M, M) of the jittered K_{Z_q}."""
    return cholesky_with_jitter(batched_kernel(z, z, log_sf2, log_ls)).lower


def batched_moments(X, z, m, s_chol, log_sf2, log_ls, site: str = "train",
                    L: torch.Tensor | None = None) -> LatentMoments:
    """q(f_q) marginals for all Q latent GPs.

    ``X`` is (n, D); ``z`` (Q, M, D); ``m`` (Q, M); ``s_chol`` (Q, M, M);
    ``log_sf2`` (Q,); ``log_ls`` (Q, D). ``L`` may pass in
    :func:`prior_cholesky` of the same inputs to avoid refactorising.
    """
    L = prior_cholesky(z, log_sf2, log_ls) if L is None else L
    Kzx = batched_kernel(z, X, log_sf2, log_ls)
    alpha = torch.linalg.solve_triangular(L, Kzx, upper=False)
    Lm = torch.linalg.solve_triangular(L, m.unsqueeze(-1), upper=False)
    mu = (alpha * Lm).sum(-2)
    beta = torch.linalg.solve_triangular(L.transpose(-1, -2), alpha, upper=True)
    sb = s_chol.transpose(-1, -2) @ beta
    var = torch.exp(log_sf2).unsqueeze(-1) - (alpha * alpha).sum(-2) + (sb * sb).sum(-2)
    neg = var < 0
    if bool(neg.any()):
        clamp_counter[site] += int(neg.sum())
        var = torch.clamp(var, min=0.0)
    return LatentMoments(mu, var)


def q_f_moments(block: InducingBlock, kernel: KernelParams, X) -> LatentMoments:
    """mean K_xz K_z^-1 m and variance diag(K + K_xz K_z^-1 (S K_z^-1 - I) K_zx)."""
    X = as_tensor(X)
    X = X.unsqueeze(-1) if X.ndim == 1 else X
    mom = batched_moments(
        X, block.z[None], block.m[None], block.s_chol[None],
        torch.log(kernel.output_scale_sq).reshape(1), torch.log(kernel.length_scales)[None],
        site="q_f_moments")
    return LatentMoments(mom.mu[0], mom.var[0])


def batched_kl_u(z, m, s_chol, log_sf2, log_ls, L: torch.Tensor | None = None) -> torch.Tensor:
    """sum_q KL[N(m_q, S_q) || N(0, K_{Z_q})]."""
    L = prior_cholesky(z, log_sf2, log_ls) if L is None else L
    M = z.shape[-2]
    logdet_k = 2.0 * torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)
    logdet_s = 2.0 * torch.log(torch.abs(torch.diagonal(s_chol, dim1=-2, dim2=-1))).sum(-1)
    trace = (torch.linalg.solve_triangular(L, s_chol, upper=False) ** 2).sum((-1, -2))
    maha = (torch.linalg.solve_triangular(L, m.unsqueeze(-1), upper=False) ** 2).sum((-1, -2))
    return 0.5 * (logdet_k - logdet_s - M + trace + maha).sum()


def kl_u(blocks: list, kernels: list) -> torch.Tensor:
    total = torch.zeros((), dtype=torch.float64)
    for b, k in zip(blocks, kernels):
        total = total + batched_kl_u(
            b.z[None], b.m[None], b.s_chol[None],
            torch.log(k.output_scale_sq).reshape(1), torch.log(k.length_scales)[None])
    return total


def kl_a(q_a) -> torch.Tensor:
    """KL[N(mu_A, diag nu_A) || N(0, I)] for a :class:`~nsvlmc.neural.MixtureA`."""
    nu = q_a.nu
    if not bool(torch.all(nu > 0)) or not bool(torch.all(torch.isfinite(nu))):
        raise NonPositiveVariance("q(A) variances must be positive and finite")
    mu = q_a.mu.reshape(-1)
    nu = nu.reshape(-1)
    return 0.5 * (-torch.log(nu).sum() - nu.numel() + nu.sum() + mu @ mu)


def init_inducing(X: np.ndarray, m: int, seed: int = 0) -> np.ndarray:
    """Initial pseudo-inputs: all distinct inputs when they fit, else k-means centroids."""
    X = np.asarray(X, dtype=np.float64)
    uniq = np.unique(X, axis=0)
    if m >= len(uniq):
        return uniq
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=m, n_init=1, max_iter=KMEANS_ITERATIONS, random_state=seed)
    return km.fit(X).cluster_centers_.astype(np.float64)
