"""Monte-Carlo predictive distribution of the outputs and the evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import TestSplit
from .errors import EmptyTestSet, InvalidSpec, NonPositiveVariance
from .models import ACTIVATIONS, LmcState, effective_weights, latent_moments
from .neural import sample_a, sample_b
from .numerics import LOG_2PI, RngStream, as_tensor

DEFAULT_PRED_SAMPLES = 100
CHUNK = 512


@dataclass
class PredictiveSummary:
    """Moments of the (non-Gaussian) predictive mixture.

    ``mean`` and ``var`` are (n, C) for all tasks, or (n,) for one task.
    """

    mean: np.ndarray
    var: np.ndarray
    n_samples: int

    def task(self, c: int) -> "PredictiveSummary":
        return PredictiveSummary(self.mean[:, c], self.var[:, c], self.n_samples)


@dataclass
class Metrics:
    mae: float
    smse: float
    nll: float
    n_test: int

    def record(self, task: str, seed: int) -> dict:
        return {"task": task, "mae": self.mae, "smse": self.smse, "nll": self.nll,
                "n_test": self.n_test, "seed": seed}


def predict_latent(state: LmcState, x_star):
    """Mean and variance of each latent q(f_q) at ``x_star``; arrays shaped (Q, n)."""
    x = as_tensor(x_star)
    x = x.reshape(1, -1) if x.ndim == 1 else x
    with torch.no_grad():
        mom = latent_moments(state, state.unpack(), x, site="predict")
    return mom.mu.numpy(), mom.var.numpy()


def _conditional_moments(state: LmcState, p: dict, x: torch.Tensor, eps_a, eps_b, eps_f):
    """Per-draw conditional output moments, each (S, n, C), noise excluded."""
    mom = latent_moments(state, p, x, site="predict")
    mu, var = mom.mu.T, mom.var.T
    n, C = x.shape[0], state.n_tasks
    v = state.variant
    if v == "nsvlmc":
        prior = state.prior(p)
        qa = state.mixture_a(p)
        B = sample_b(prior, x, eps_b)                              # (S, n, H, Q)
        A = torch.stack([sample_a(qa, e) for e in eps_a])          # (S, C, H)
        w = torch.einsum("sch,snhq->sncq", A, B)
        return (w * mu[None, :, None]).sum(-1), (w * w * var[None, :, None]).sum(-1)
    if v == "nmogp":
        act = ACTIVATIONS[state.spec.activation]
        f = mu + torch.sqrt(var) * eps_f                           # (S, n, Q)
        g = act(f @ p["coreg.b"].T) @ p["coreg.a"].T               # (S, n, C)
        return g, torch.zeros_like(g)
    cols = []
    for c in range(C):
        task = torch.full((n,), c, dtype=torch.long)
        w, _, _ = effective_weights(state, p, x, task, None)
        cols.append(w[0])
    w = torch.stack(cols, 1)                                       # (n, C, Q)
    mean = (w * mu[:, None]).sum(-1)
    cvar = (w * w * var[:, None]).sum(-1)
    return mean[None], cvar[None]


def predict_outputs(state: LmcState, x_star, n_samples: int = DEFAULT_PRED_SAMPLES,
                    rng: RngStream | None = None) -> PredictiveSummary:
    """Moment-matched predictive of every task at ``x_star`` (normalised units).

    Each sample draws A ~ q(A) and B(x) ~ p(B | x) (nsvlmc) or f ~ q(f)
    (nmogp) and takes the Gaussian conditional moments; the mixture mean is
    their average and the mixture variance the average of var + mean^2 minus
    the squared mixture mean. Variants without sampled mixing weights give
    the same draw every time, so their summary is the conditional Gaussian.
    """
    if n_samples < 2:
        raise InvalidSpec("n_samples must be >= 2")
    rng = RngStream(state.seed, 2) if rng is None else rng
    x = as_tensor(x_star)
    x = x.reshape(1, -1) if x.ndim == 1 else x
    n, C, H, Q = x.shape[0], state.n_tasks, state.spec.h, state.spec.q
    v = state.variant
    eps_a = rng.tensor_normal((n_samples, C, H)) if v == "nsvlmc" else None
    p = state.unpack()
    noise = torch.exp(p["noise.log_var"]).detach()
    means, variances = [], []
    with torch.no_grad():
        for lo in range(0, n, CHUNK):
            xc = x[lo:lo + CHUNK]
            k = xc.shape[0]
            eps_b = rng.tensor_normal((n_samples, k, H * Q)) if v == "nsvlmc" else None
            eps_f = rng.tensor_normal((n_samples, k, Q)) if v == "nmogp" else None
            m, cv = _conditional_moments(state, p, xc, eps_a, eps_b, eps_f)
            cv = cv + noise
            mix_mean = m.mean(0)
            mix_var = (cv + m * m).mean(0) - mix_mean * mix_mean
            # guard the subtraction against round-off below the smallest component
            mix_var = torch.maximum(mix_var, cv.min(0).values)
            means.append(mix_mean)
            variances.append(mix_var)
    mean = torch.cat(means).numpy()
    var = torch.cat(variances).numpy()
    if not np.all(var > 0):
        raise NonPositiveVariance("predictive variance must be positive")
    return PredictiveSummary(mean, var, n_samples)


def predict_raw(state: LmcState, x_raw, n_samples: int = DEFAULT_PRED_SAMPLES,
                rng: RngStream | None = None) -> PredictiveSummary:
    """Predict at raw inputs and map the moments back to raw output units."""
    norm = state.norm
    x = np.asarray(x_raw, dtype=np.float64)
    x = x.reshape(len(x), -1)
    if norm is None:
        return predict_outputs(state, x, n_samples, rng)
    pred = predict_outputs(state, norm.inputs(x), n_samples, rng)
    mean = pred.mean * norm.y_std + norm.y_mean
    var = pred.var * norm.y_std ** 2
    return PredictiveSummary(mean, var, n_samples)


def compute_metrics(pred: PredictiveSummary, truth, train_var: float) -> Metrics:
    """MAE, SMSE (normalised by the training-output variance) and Gaussian NLL."""
    mu = np.asarray(pred.mean, dtype=np.float64).reshape(-1)
    var = np.asarray(pred.var, dtype=np.float64).reshape(-1)
    y = np.asarray(truth, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise EmptyTestSet("no test points")
    if mu.shape != y.shape or var.shape != y.shape:
        raise ValueError(f"prediction ({mu.size}) and truth ({y.size}) lengths differ")
    if not train_var > 0:
        raise ValueError("train_var must be positive")
    err = mu - y
    return Metrics(
        mae=float(np.mean(np.abs(err))),
        smse=float(np.mean(err ** 2) / train_var),
        nll=float(np.mean(0.5 * (err ** 2 / var + LOG_2PI + np.log(var)))),
        n_test=int(y.size))


def evaluate(state: LmcState, test: TestSplit, names: list, seed: int,
             n_samples: int = DEFAULT_PRED_SAMPLES) -> tuple[list, dict]:
    """Metrics records for every test task plus the per-task predictions (raw units)."""
    if state.norm is None:
        raise InvalidSpec("evaluation needs the training normalisation")
    rng = RngStream(seed, 2)
    records, preds = [], {}
    for c, x, y in zip(test.tasks, test.X, test.y):
        pred = predict_raw(state, x, n_samples, rng).task(c)
        preds[names[c]] = pred
        m = compute_metrics(pred, y, float(state.norm.y_std[c] ** 2))
        records.append(m.record(names[c], seed))
    return records, preds
