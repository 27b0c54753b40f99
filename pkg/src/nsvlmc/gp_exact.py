"""Exact single-task GP and exact LMC (no inducing points).

These are the O(N^3) reference models: baselines in the benchmarks and
oracles for the sparse variational path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import minimize

from .data import MultiTaskDataset
from .errors import ConfigError, DimensionMismatch
from .kernels import KernelParams, kernel_matrix
from .numerics import LOG_2PI, as_tensor, cholesky_with_jitter

LMC_SIZE_GUARD = 2000


@dataclass
class ExactGpModel:
    kernel: KernelParams
    noise_var: torch.Tensor
    X: torch.Tensor
    y: torch.Tensor

    def __post_init__(self):
        self.noise_var = as_tensor(self.noise_var).reshape(())
        self.X = as_tensor(self.X)
        if self.X.ndim == 1:
            self.X = self.X.unsqueeze(-1)
        self.y = as_tensor(self.y).reshape(-1)
        if self.y.numel() != self.X.shape[0]:
            raise DimensionMismatch("y and X disagree on the number of points")
        if not float(self.noise_var.detach()) > 0:
            raise ValueError("noise_var must be positive")


def _cov(m: ExactGpModel) -> torch.Tensor:
    K = kernel_matrix(m.X, m.X, m.kernel)
    return K + m.noise_var * torch.eye(K.shape[0], dtype=K.dtype)


def _log_marginal(y: torch.Tensor, cov: torch.Tensor) -> torch.Tensor:
    chol = cholesky_with_jitter(cov, base_jitter=0.0)
    w = torch.linalg.solve_triangular(chol.lower, y.unsqueeze(-1), upper=False).squeeze(-1)
    return -0.5 * (w @ w) - 0.5 * chol.logdet() - 0.5 * y.numel() * LOG_2PI


def gp_log_marginal(m: ExactGpModel) -> torch.Tensor:
    """log N(y | 0, K + noise I); differentiable in the model tensors."""
    return _log_marginal(m.y, _cov(m))


def gp_predict(m: ExactGpModel, x_star):
    """Predictive mean and variance (noise included) at one or several points."""
    xs = as_tensor(x_star)
    single = xs.ndim == 1
    xs = xs.reshape(1, -1) if single else xs
    chol = cholesky_with_jitter(_cov(m), base_jitter=0.0)
    ks = kernel_matrix(m.X, xs, m.kernel)
    mean = ks.T @ chol.solve(m.y.unsqueeze(-1)).squeeze(-1)
    v = torch.linalg.solve_triangular(chol.lower, ks, upper=False)
    var = m.kernel.output_scale_sq - (v * v).sum(0) + m.noise_var
    var = torch.clamp(var, min=float(m.noise_var.detach()))
    if single:
        return mean[0], var[0]
    return mean, var


def fit_gp(X, y, init_length_scales=(0.1, 0.5, 1.0, 2.0), maxiter: int = 500) -> ExactGpModel:
    """Type-II maximum likelihood fit of a single-task GP.

    Runs L-BFGS from each initial length-scale and keeps the best evidence.
    """
    X = as_tensor(X)
    X = X.unsqueeze(-1) if X.ndim == 1 else X
    y = as_tensor(y).reshape(-1)
    d = X.shape[1]

    def unpack(theta):
        t = torch.as_tensor(theta, dtype=torch.float64)
        return t[0], t[1:1 + d], t[1 + d]

    def objective(theta):
        t = torch.tensor(theta, dtype=torch.float64, requires_grad=True)
        model = ExactGpModel(KernelParams.from_log(t[0], t[1:1 + d]), torch.exp(t[1 + d]), X, y)
        try:
            val = -gp_log_marginal(model)
        except ArithmeticError:
            return 1e10, np.zeros_like(theta)
        val.backward()
        return float(val.detach()), t.grad.numpy().copy()

    best = None
    for ls in init_length_scales:
        theta0 = np.concatenate([[0.0], np.full(d, np.log(ls)), [np.log(0.1)]])
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                       bounds=[(-10, 10)] * (d + 1) + [(np.log(1e-6), 5)],
                       options={"maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
    log_sf2, log_ls, log_noise = unpack(best.x)
    return ExactGpModel(KernelParams.from_log(log_sf2, log_ls), torch.exp(log_noise), X, y)


@dataclass
class ExactLmcModel:
    """Exact LMC: y_c(x) = sum_q A[c, q] f_q(x) + noise_c."""

    kernels: list
    coreg_matrix: torch.Tensor
    noise_vars: torch.Tensor
    data: MultiTaskDataset
    size_guard: int = LMC_SIZE_GUARD

    def __post_init__(self):
        self.coreg_matrix = as_tensor(self.coreg_matrix)
        self.noise_vars = as_tensor(self.noise_vars).reshape(-1)
        C, Q = self.coreg_matrix.shape
        if C != self.data.n_tasks or Q != len(self.kernels):
            raise DimensionMismatch(
                f"coregionalization matrix {C}x{Q} vs {self.data.n_tasks} tasks, "
                f"{len(self.kernels)} kernels")
        if self.noise_vars.numel() != C or bool((self.noise_vars <= 0).any()):
            raise ValueError("need one positive noise variance per task")
        if sum(self.data.sizes) > self.size_guard:
            raise ConfigError(
                f"exact LMC limited to {self.size_guard} points, got {sum(self.data.sizes)}")


def _stacked(m: ExactLmcModel):
    X, y, task = m.data.stacked()
    return as_tensor(X), as_tensor(y), torch.as_tensor(task)


def lmc_covariance(m: ExactLmcModel) -> torch.Tensor:
    """sum_q Kbar_q + Xi over the task-stacked training points."""
    X, _, task = _stacked(m)
    K = torch.zeros(X.shape[0], X.shape[0], dtype=X.dtype)
    for q, kern in enumerate(m.kernels):
        a = m.coreg_matrix[task, q]
        K = K + torch.outer(a, a) * kernel_matrix(X, X, kern)
    return K + torch.diag(m.noise_vars[task])


def lmc_log_marginal(m: ExactLmcModel) -> torch.Tensor:
    _, y, _ = _stacked(m)
    return _log_marginal(y, lmc_covariance(m))


def lmc_predict(m: ExactLmcModel, x_star):
    """Joint predictive over the C tasks at ``x_star``: (mean (C,), cov (C, C))."""
    X, y, task = _stacked(m)
    xs = as_tensor(x_star).reshape(1, -1)
    A = m.coreg_matrix
    C = A.shape[0]
    Ks = torch.zeros(X.shape[0], C, dtype=X.dtype)
    Kss = torch.zeros(C, C, dtype=X.dtype)
    for q, kern in enumerate(m.kernels):
        Ks = Ks + torch.outer(A[task, q], A[:, q]) * kernel_matrix(X, xs, kern)
        Kss = Kss + torch.outer(A[:, q], A[:, q]) * kern.output_scale_sq
    chol = cholesky_with_jitter(lmc_covariance(m), base_jitter=0.0)
    mean = Ks.T @ chol.solve(y.unsqueeze(-1)).squeeze(-1)
    v = torch.linalg.solve_triangular(chol.lower, Ks, upper=False)
    cov = Kss - v.T @ v + torch.diag(m.noise_vars)
    return mean, 0.5 * (cov + cov.T)
