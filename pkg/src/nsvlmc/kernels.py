"""Squared-exponential kernel with one length-scale per input dimension."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DimensionMismatch
from .numerics import as_tensor

DEFAULT_LENGTH_SCALE = 0.1
DEFAULT_OUTPUT_SCALE = 1.0


@dataclass
class KernelParams:
    """``output_scale_sq`` is sigma_f^2; ``length_scales`` has one entry per input dim."""

    output_scale_sq: torch.Tensor
    length_scales: torch.Tensor

    def __post_init__(self):
        self.output_scale_sq = as_tensor(self.output_scale_sq).reshape(())
        self.length_scales = as_tensor(self.length_scales).reshape(-1)

    @property
    def input_dim(self) -> int:
        return self.length_scales.numel()

    @classmethod
    def from_log(cls, log_sf2: torch.Tensor, log_ls: torch.Tensor) -> "KernelParams":
        return cls(torch.exp(log_sf2), torch.exp(log_ls))

    @classmethod
    def default(cls, input_dim: int, length_scale: float = DEFAULT_LENGTH_SCALE,
                output_scale_sq: float = DEFAULT_OUTPUT_SCALE) -> "KernelParams":
        return cls(torch.tensor(output_scale_sq), torch.full((input_dim,), length_scale))


def _check(X: torch.Tensor, p: KernelParams):
    if X.shape[-1] != p.input_dim:
        raise DimensionMismatch(
            f"inputs have {X.shape[-1]} columns, kernel expects {p.input_dim}")


def se_ard(x, x2, p: KernelParams) -> torch.Tensor:
    x, x2 = as_tensor(x).reshape(-1), as_tensor(x2).reshape(-1)
    _check(x, p)
    _check(x2, p)
    d = (x - x2) / p.length_scales
    return p.output_scale_sq * torch.exp(-0.5 * (d * d).sum())


def kernel_matrix(X, X2, p: KernelParams) -> torch.Tensor:
    """Gram matrix ``K[i, j] = se_ard(X[i], X2[j])``."""
    X, X2 = as_tensor(X), as_tensor(X2)
    if X.ndim == 1:
        X = X.unsqueeze(-1)
    if X2.ndim == 1:
        X2 = X2.unsqueeze(-1)
    _check(X, p)
    _check(X2, p)
    A = X / p.length_scales
    B = X2 / p.length_scales
    # explicit differences keep the diagonal exactly sigma_f^2 and the gram exactly symmetric
    d2 = ((A.unsqueeze(-2) - B.unsqueeze(-3)) ** 2).sum(-1)
    return p.output_scale_sq * torch.exp(-0.5 * d2)


def kernel_diag(X, p: KernelParams) -> torch.Tensor:
    X = as_tensor(X)
    return p.output_scale_sq.expand(X.shape[0]).clone()


def batched_kernel(X: torch.Tensor, X2: torch.Tensor, log_sf2: torch.Tensor,
                   log_ls: torch.Tensor) -> torch.Tensor:
    """Kernel matrices for Q latent GPs at once.

    ``log_sf2`` is (Q,), ``log_ls`` is (Q, D); ``X`` is (N, D) or (Q, N, D),
    ``X2`` is (M, D) or (Q, M, D). Returns (Q, N, M).
    """
    ls = torch.exp(log_ls).unsqueeze(-2)
    A = X / ls
    B = X2 / ls
    d2 = ((A.unsqueeze(-2) - B.unsqueeze(-3)) ** 2).sum(-1)
    return torch.exp(log_sf2)[:, None, None] * torch.exp(-0.5 * d2)
