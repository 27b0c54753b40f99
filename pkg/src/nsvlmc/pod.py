"""Proper orthogonal decomposition of snapshot fields and autoregressive forecasting
of the modal coefficients of a data-poor case with help from a data-rich one."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (DimensionMismatch, MissingFile, RankTooLarge, SchemaMismatch,
                     SeriesTooShort)

WINDOW = 10
POD_RANK = 5
SNAPSHOT_MAGIC = b"PODSNAP1"
_HEADER = struct.Struct("<8sQQ")


@dataclass
class SnapshotMatrix:
    """Fields u(., t) stored as columns: ``values`` is (N_m, T)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch("snapshot matrix must be 2-D (mesh nodes x time)")
        if self.values.shape[1] < 2:
            raise SeriesTooShort("need at least two snapshots")
        if not np.all(np.isfinite(self.values)):
            raise SchemaMismatch("snapshot matrix has non-finite entries")

    @property
    def n_mesh(self) -> int:
        return self.values.shape[0]

    @property
    def n_time(self) -> int:
        return self.values.shape[1]


@dataclass
class PodBasis:
    """``modes`` (N_m, R) orthonormal, ``coeffs`` (T, R), singular values descending."""

    modes: np.ndarray
    coeffs: np.ndarray
    singular_values: np.ndarray
    mean: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.modes.shape[1]


def pod_decompose(s: SnapshotMatrix, r: int, center: bool = False) -> PodBasis:
    """Rank-``r`` truncated SVD of the snapshots.

    Each mode is flipped so that its largest-magnitude entry is positive,
    which makes the result deterministic. ``center`` subtracts the temporal
    mean field first (off by default).
    """
    if not 1 <= r <= min(s.n_mesh, s.n_time):
        raise RankTooLarge(f"rank {r} outside [1, {min(s.n_mesh, s.n_time)}]")
    u = s.values
    mean = None
    if center:
        mean = u.mean(axis=1)
        u = u - mean[:, None]
    U, sv, _ = np.linalg.svd(u, full_matrices=False)
    modes = U[:, :r].copy()
    pivot = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[pivot, np.arange(r)])
    signs[signs == 0] = 1.0
    modes *= signs
    return PodBasis(modes, u.T @ modes, sv[:r].copy(), mean)


def pod_reconstruct(basis: PodBasis, coeffs_row) -> np.ndarray:
    """Field sum_k coeffs_row[k] * mode_k (plus the mean field when centred)."""
    c = np.asarray(coeffs_row, dtype=np.float64)
    if c.shape[-1] != basis.rank:
        raise DimensionMismatch(f"{c.shape[-1]} coefficients for a rank-{basis.rank} basis")
    field_ = c @ basis.modes.T
    if basis.mean is not None:
        field_ = field_ + basis.mean
    return field_


def reconstruction_error(s: SnapshotMatrix, basis: PodBasis) -> float:
    """Frobenius norm of the snapshot residual left by the basis."""
    approx = pod_reconstruct(basis, basis.coeffs).T
    return float(np.linalg.norm(s.values - approx))


def ar_windowing(series, window: int = WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """One-step-ahead pairs: inputs[i] = series[i:i+window], targets[i] = series[i+window]."""
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.size <= window:
        raise SeriesTooShort(f"series of length {x.size} needs more than {window} points")
    inputs = np.lib.stride_tricks.sliding_window_view(x, window)[:-1].copy()
    return inputs, x[window:].copy()


def rollout(step: Callable[[np.ndarray], tuple], history, n_steps: int,
            truth=None) -> tuple[np.ndarray, np.ndarray]:
    """Forecast ``n_steps`` values after ``history`` one step at a time.

    ``step`` maps a window (length of ``history``) to a one-step predictive
    (mean, var). Closed loop (``truth is None``) feeds each predicted mean
    back into the window; with ``truth`` the window is teacher-forced with the
    true values instead (open loop). Variances are one-step values and ignore
    uncertainty in the fed-back inputs.
    """
    win = list(np.asarray(history, dtype=np.float64).reshape(-1))
    w = len(win)
    if truth is not None and len(truth) < n_steps:
        raise SeriesTooShort("truth is shorter than the forecast horizon")
    means, variances = np.empty(n_steps), np.empty(n_steps)
    for t in range(n_steps):
        m, v = step(np.asarray(win[len(win) - w:]))
        means[t], variances[t] = m, v
        win.append(float(truth[t]) if truth is not None else float(m))
    return means, variances


# ---------------------------------------------------------------- snapshot files

def read_snapshot_csv(path) -> SnapshotMatrix:
    """Headerless CSV, one row per mesh node and one column per time step."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    return SnapshotMatrix(np.loadtxt(path, delimiter=",", ndmin=2))


def write_snapshot_csv(s: SnapshotMatrix, path) -> None:
    np.savetxt(path, s.values, delimiter=",", fmt="%.17g")


def write_snapshot_bin(s: SnapshotMatrix, path) -> None:
    """Header (magic, N_m, T as little-endian uint64) then column-major float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, s.n_mesh, s.n_time))
        fh.write(np.asarray(s.values, dtype="<f8").tobytes(order="F"))


def read_snapshot_bin(path) -> SnapshotMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise SchemaMismatch(f"{path}: truncated header")
    magic, n_mesh, n_time = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SchemaMismatch(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n_mesh * n_time:
        raise SchemaMismatch(f"{path}: expected {n_mesh * n_time} doubles, found {len(body) // 8}")
    values = np.frombuffer(body, dtype="<f8").reshape((n_mesh, n_time), order="F")
    return SnapshotMatrix(values.astype(np.float64))


def read_snapshots(path) -> SnapshotMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_snapshot_csv(path)
    return read_snapshot_bin(path)


# ---------------------------------------------------------------- synthetic cases

@dataclass
class SyntheticCases:
    case1: SnapshotMatrix
    case2: SnapshotMatrix
    modes: np.ndarray
    coeffs1: np.ndarray
    coeffs2: np.ndarray


def pulse_wave(theta, sharpness: float = 2.0) -> np.ndarray:
    """Periodic pulse exp(k cos theta), shifted and scaled to zero mean and unit RMS."""
    from scipy.special import i0

    k = sharpness
    mean = i0(k)
    # E[exp(2k cos)] = I0(2k)
    rms = np.sqrt(i0(2 * k) - mean ** 2)
    return (np.exp(k * np.cos(theta)) - mean) / rms


def synthetic_two_case(seed: int, n_mesh: int = 200, n_time: int = 80, rank: int = POD_RANK,
                       noise: float = 1e-3, sharpness: float = 2.0) -> SyntheticCases:
    """Two correlated snapshot cases sharing ``rank`` spatial modes.

    The coefficient of mode k is a periodic pulse train (not a sinusoid, so
    its one-step map is nonlinear) completing a whole number of cycles over
    the record. Case 2 has the same cycle counts with its own phase and a
    slightly smaller amplitude, so both cases follow nearly the same
    autoregressive map. Amplitudes fall by a factor 0.6 per mode, which keeps
    the mode order identical in both cases.
    """
    rng = np.random.default_rng(seed)
    cycles_avail = np.arange(2, max(rank + 2, n_time // 8))
    if 2 * cycles_avail[-1] >= n_time:
        raise SeriesTooShort(f"{n_time} steps cannot hold {rank} distinct whole-cycle modes")
    modes, _ = np.linalg.qr(rng.standard_normal((n_mesh, rank)))
    t = np.arange(n_time, dtype=np.float64)
    amp = 10.0 * 0.6 ** np.arange(rank)
    cycles = np.sort(rng.choice(cycles_avail, size=rank, replace=False))
    omega = 2 * np.pi * cycles / n_time
    phase1 = rng.uniform(0, 2 * np.pi, size=rank)
    phase2 = phase1 + rng.uniform(0.5, 1.5, size=rank)
    scale2 = rng.uniform(0.85, 0.95, size=rank)
    a1 = amp * pulse_wave(np.outer(t, omega) + phase1, sharpness)
    a2 = amp * scale2 * pulse_wave(np.outer(t, omega) + phase2, sharpness)
    u1 = modes @ a1.T + noise * rng.standard_normal((n_mesh, n_time))
    u2 = modes @ a2.T + noise * rng.standard_normal((n_mesh, n_time))
    return SyntheticCases(SnapshotMatrix(u1), SnapshotMatrix(u2), modes, a1, a2)


# ---------------------------------------------------------------- two-case pipeline

@dataclass
class ForecastConfig:
    variant: str = "nsvlmc"
    q: int = 2
    h: int = 10
    m_per_latent: int | None = 500
    iterations: int = 10000
    minibatch: int | None = 32
    learning_rate: float = 5e-3
    s_train: int = 10
    n_pred_samples: int = 100
    window: int = WINDOW
    n_observed: int = 20
    rank: int = POD_RANK
    closed_loop: bool = True
    pooled_outputs: bool = True
    extra: dict = field(default_factory=dict)


@dataclass
class ModeForecast:
    mode: int
    truth: np.ndarray
    multi_mean: np.ndarray
    multi_var: np.ndarray
    single_mean: np.ndarray
    single_var: np.ndarray
    train_var: float


def _mode_forecast(k: int, a1: np.ndarray, a2: np.ndarray, cfg: ForecastConfig,
                   seed: int) -> ModeForecast:
    import torch

    from .data import MultiTaskDataset, normalize
    from .gp_exact import fit_gp, gp_predict
    from .models import ModelSpec, build_model
    from .numerics import RngStream
    from .predict import predict_raw
    from .training import TrainConfig, train

    w = cfg.window
    observed = a2[:cfg.n_observed]
    x1, y1 = ar_windowing(a1, w)
    x2, y2 = ar_windowing(observed, w)
    data = normalize(MultiTaskDataset([x1, x2], [y1, y2], names=["case1", "case2"]),
                     pooled_outputs=cfg.pooled_outputs)
    m = cfg.m_per_latent
    if m is not None:
        m = min(m, len(np.unique(data.pooled_inputs(), axis=0)))
    spec = ModelSpec(cfg.variant, q=cfg.q, h=cfg.h, m_per_latent=m, **cfg.extra)
    state = build_model(spec, data, seed)
    tc = TrainConfig(learning_rate=cfg.learning_rate, iterations=cfg.iterations,
                     minibatch=cfg.minibatch, s_train=cfg.s_train, seed=seed,
                     log_every=max(1, cfg.iterations))
    state = train(state, data, tc).state
    rng = RngStream(seed, 3)

    def multi_step(window):
        pred = predict_raw(state, window[None], cfg.n_pred_samples, rng).task(1)
        return float(pred.mean[0]), float(pred.var[0])

    # single-task baseline on the same 10 pairs, in normalised units
    xm, xs = x2.mean(0), x2.std(0)
    xs[xs <= 0] = 1.0
    ym, ys = y2.mean(), y2.std()
    gp = fit_gp((x2 - xm) / xs, (y2 - ym) / ys)

    def single_step(window):
        mu, var = gp_predict(gp, torch.from_numpy((window - xm) / xs))
        return float(mu) * ys + ym, float(var) * ys ** 2

    horizon = len(a2) - cfg.n_observed
    truth = a2[cfg.n_observed:]
    teacher = None if cfg.closed_loop else truth
    mm, mv = rollout(multi_step, observed[-w:], horizon, teacher)
    sm, sv = rollout(single_step, observed[-w:], horizon, teacher)
    return ModeForecast(k, truth, mm, mv, sm, sv, float(np.var(y2)))


def two_case_forecast(case1: SnapshotMatrix, case2: SnapshotMatrix, cfg: ForecastConfig,
                      seed: int, modes: list | None = None) -> list:
    """POD both cases, then forecast the data-poor case's coefficients.

    Case 2 is observed for its first ``cfg.n_observed`` steps only; each of
    the ``cfg.rank`` coefficient pairs gets its own two-task model and a
    single-task GP baseline, both rolled out to the end of the series.
    """
    b1 = pod_decompose(case1, cfg.rank)
    b2 = pod_decompose(case2, cfg.rank)
    if cfg.n_observed <= cfg.window:
        raise SeriesTooShort("case 2 needs more observed steps than the window")
    if case2.n_time <= cfg.n_observed:
        raise SeriesTooShort("nothing left to forecast")
    modes = range(cfg.rank) if modes is None else modes
    return [_mode_forecast(k, b1.coeffs[:, k], b2.coeffs[:, k], cfg, seed) for k in modes]
