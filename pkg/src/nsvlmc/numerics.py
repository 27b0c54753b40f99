"""Dense linear algebra, sampling helpers and a finite-difference oracle.

Everything model-side runs on float64 torch tensors so that gradients come
from autograd; the helpers here accept numpy arrays as well and convert them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .errors import NonFiniteFunctionValue, NotPositiveDefinite, DimensionMismatch

DTYPE = torch.float64
LOG_2PI = math.log(2.0 * math.pi)

BASE_JITTER = 1e-6
MAX_ESCALATIONS = 5


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


@dataclass
class CholeskyFactor:
    """Lower Cholesky factor of ``m + jitter_used * I``."""

    lower: torch.Tensor
    jitter_used: float = 0.0

    def solve(self, b: torch.Tensor) -> torch.Tensor:
        return torch.cholesky_solve(b, self.lower)

    def logdet(self) -> torch.Tensor:
        return 2.0 * torch.log(torch.diagonal(self.lower, dim1=-2, dim2=-1)).sum(-1)


def cholesky_with_jitter(m, base_jitter: float = BASE_JITTER,
                         max_escalations: int = MAX_ESCALATIONS) -> CholeskyFactor:
    """Cholesky factorisation, adding diagonal jitter when the plain one fails.

    The jitter is relative to the mean diagonal. It starts at
    ``base_jitter`` (or at zero, then ``1e-6``, when ``base_jitter == 0``)
    and is multiplied by ten on every failure, at most ``max_escalations``
    times. Batched input (``..., n, n``) shares one jitter level.
    """
    m = as_tensor(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {tuple(m.shape)}")
    with torch.no_grad():
        asym = (m - m.transpose(-1, -2)).abs().max()
        mag = m.abs().max()
        if asym > 1e-10 * max(float(mag), 1e-300):
            raise ValueError("matrix is not symmetric")
    n = m.shape[-1]
    # the jitter scale stays in the autograd graph so gradients match the jittered matrix
    scale = torch.diagonal(m, dim1=-2, dim2=-1).mean().abs()
    if not float(scale.detach()) > 0:
        scale = torch.ones((), dtype=m.dtype)
    eye = torch.eye(n, dtype=m.dtype)

    levels = [] if base_jitter > 0 else [0.0]
    start = base_jitter if base_jitter > 0 else BASE_JITTER
    levels += [start * 10.0 ** k for k in range(max_escalations + 1)]
    for rel in levels:
        jitter = rel * scale
        lower, info = torch.linalg.cholesky_ex(m + jitter * eye if rel else m)
        if not bool((info != 0).any()):
            return CholeskyFactor(lower, float(jitter.detach()))
    raise NotPositiveDefinite(
        f"Cholesky failed with jitter up to {levels[-1] * float(scale.detach()):.3g}; "
        "kernel hyperparameters are probably degenerate")


def gaussian_logpdf(y, mu, cov) -> torch.Tensor:
    """log N(y | mu, cov) computed through a Cholesky factor."""
    y, mu, cov = as_tensor(y), as_tensor(mu), as_tensor(cov)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    r = (y - mu).reshape(-1)
    if cov.shape != (r.numel(), r.numel()):
        raise DimensionMismatch(f"cov shape {tuple(cov.shape)} vs {r.numel()} points")
    chol = cholesky_with_jitter(cov, base_jitter=0.0)
    w = torch.linalg.solve_triangular(chol.lower, r.unsqueeze(-1), upper=False).squeeze(-1)
    return -0.5 * (w @ w) - 0.5 * chol.logdet() - 0.5 * r.numel() * LOG_2PI


def reparam_sample(mu, var, eps):
    """``mu + sqrt(var) * eps``; works on numpy arrays and torch tensors alike."""
    if any(isinstance(v, torch.Tensor) for v in (mu, var, eps)):
        mu, var, eps = as_tensor(mu), as_tensor(var), as_tensor(eps)
        return mu + torch.sqrt(var) * eps
    return np.asarray(mu) + np.sqrt(np.asarray(var)) * np.asarray(eps)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5,
                     coords=None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    When ``coords`` is given only those coordinates are differenced and the
    result has ``len(coords)`` entries.
    """
    x = np.array(x, dtype=np.float64)
    idx = range(x.size) if coords is None else coords
    out = []
    for i in idx:
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        fp, fm = float(f(xp)), float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteFunctionValue(f"f is not finite around coordinate {i}")
        out.append((fp - fm) / (2.0 * h))
    return np.asarray(out).reshape(x.shape) if coords is None else np.asarray(out)


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([int(self.seed), int(self.stream_id)])))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def tensor_normal(self, shape) -> torch.Tensor:
        return torch.from_numpy(self._gen.standard_normal(shape))

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices out of ``range(n)``."""
        return self._gen.choice(n, size=size, replace=False)

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)
