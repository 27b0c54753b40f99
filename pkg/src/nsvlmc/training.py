"""Adam ascent on the importance-weighted bound."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import MultiTaskDataset
from .elbo import elbo_from_draws, sample_batch
from .errors import InvalidSpec, NonFiniteGradient, NonFiniteObjective
from .models import LmcState, sample_draws
from .numerics import RngStream

log = logging.getLogger(__name__)

LEARNING_RATE = 5e-3


@dataclass
class TrainConfig:
    learning_rate: float = LEARNING_RATE
    iterations: int = 10000
    minibatch: int | None = 32
    s_train: int = 10
    seed: int = 0
    log_every: int = 100
    variance_term_mode: str = "exact_cross"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be positive")
        if self.iterations < 0:
            raise InvalidSpec("iterations must be >= 0")
        if self.log_every < 1:
            raise InvalidSpec("log_every must be >= 1")


@dataclass
class AdamState:
    first_moment: torch.Tensor
    second_moment: torch.Tensor
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: torch.Tensor) -> "AdamState":
        return cls(torch.zeros_like(params), torch.zeros_like(params))


def adam_step(params: torch.Tensor, grads: torch.Tensor, st: AdamState, lr: float):
    """One bias-corrected Adam update that *ascends* along ``grads``."""
    if params.shape != grads.shape or st.first_moment.shape != params.shape:
        raise ValueError("params, grads and Adam moments must have equal shapes")
    if not bool(torch.isfinite(grads).all()):
        raise NonFiniteGradient("gradient has non-finite entries")
    t = st.step + 1
    m = st.beta1 * st.first_moment + (1 - st.beta1) * grads
    v = st.beta2 * st.second_moment + (1 - st.beta2) * grads * grads
    m_hat = m / (1 - st.beta1 ** t)
    v_hat = v / (1 - st.beta2 ** t)
    new = params + lr * m_hat / (torch.sqrt(v_hat) + st.eps)
    return new, AdamState(m, v, t, st.beta1, st.beta2, st.eps)


@dataclass
class TraceRow:
    step: int
    objective: float
    wall_clock: float


@dataclass
class TrainResult:
    state: LmcState
    trace: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.state, self.trace))


def _diagnose(state: LmcState, flat: torch.Tensor, grad: torch.Tensor | None) -> str:
    bad = []
    for name in state.layout.shapes:
        sl = state.layout.slice(name)
        if not bool(torch.isfinite(flat[sl]).all()) or (
                grad is not None and not bool(torch.isfinite(grad[sl]).all())):
            bad.append(name)
    return ", ".join(bad) or "no parameter is itself non-finite"


def train(state: LmcState, data: MultiTaskDataset, cfg: TrainConfig, callback=None) -> TrainResult:
    """Maximise the importance-weighted bound with Adam.

    Each step draws fresh per-task minibatches, one q(A) draw and
    ``cfg.s_train`` B draws per point from ``RngStream(cfg.seed, 1)``.
    Returns the trained copy of ``state`` and a trace with one row every
    ``cfg.log_every`` steps.
    """
    state = state.copy()
    rng = RngStream(cfg.seed, 1)
    params = state.params.clone()
    adam = AdamState.zeros_like(params)
    trace: list = []
    t0 = time.perf_counter()
    for step in range(1, cfg.iterations + 1):
        batch = sample_batch(data, cfg.minibatch, rng)
        draws = sample_draws(state, batch.n, cfg.s_train, rng, cfg.variance_term_mode)
        flat = params.clone().requires_grad_(True)
        value = elbo_from_draws(state, flat, batch, draws, cfg.variance_term_mode)
        if not bool(torch.isfinite(value)):
            raise NonFiniteObjective(
                f"objective {float(value.detach())} at step {step}; "
                f"suspect: {_diagnose(state, flat, None)}")
        (grad,) = torch.autograd.grad(value, flat)
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteObjective(
                f"non-finite gradient at step {step} in {_diagnose(state, flat, grad)}")
        params, adam = adam_step(params, grad, adam, cfg.learning_rate)
        if step % cfg.log_every == 0 or step == cfg.iterations:
            row = TraceRow(step, float(value.detach()), time.perf_counter() - t0)
            trace.append(row)
            log.debug("step %d objective %.4f", row.step, row.objective)
            if callback is not None:
                callback(row)
    state.params = params.detach()
    return TrainResult(state, trace)


def implemented_gradient(state: LmcState, flat: torch.Tensor, batch, draws,
                         mode: str = "exact_cross") -> np.ndarray:
    flat = flat.detach().clone().requires_grad_(True)
    value = elbo_from_draws(state, flat, batch, draws, mode)
    (grad,) = torch.autograd.grad(value, flat)
    return grad.numpy()


def objective_function(state: LmcState, batch, draws, mode: str = "exact_cross"):
    """The bound as a plain numpy -> float function of the flat vector (frozen draws)."""

    def f(x: np.ndarray) -> float:
        with torch.no_grad():
            flat = torch.from_numpy(np.asarray(x))
            return float(elbo_from_draws(state, flat, batch, draws, mode))

    return f
