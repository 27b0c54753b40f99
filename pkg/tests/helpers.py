"""Shared pieces for the gradient and acceptance checks."""
import numpy as np
import torch

from nsvlmc.data import MultiTaskDataset, load_manifest, write_csv
from nsvlmc.elbo import full_batch
from nsvlmc.models import sample_draws
from nsvlmc.numerics import RngStream, finite_diff_grad
from nsvlmc.training import implemented_gradient, objective_function

# below this magnitude a gradient entry is compared on an absolute scale; central
# differences at h = 1e-5 carry roundoff of order 1e-7 on objectives near 1e3
GRAD_FLOOR = 1e-2


def relative_errors(g, fd) -> np.ndarray:
    g, fd = np.asarray(g), np.asarray(fd)
    return np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), GRAD_FLOOR)


def perturbed(state, seed: int, scale: float = 0.1):
    st = state.copy()
    noise = np.random.default_rng(seed).standard_normal(st.params.numel())
    st.params = st.params + scale * torch.from_numpy(noise)
    return st


def gradient_check(state, data, per_group: int = 20, seed: int = 0, s: int = 3,
                   mode: str = "exact_cross") -> dict:
    """Max relative error per parameter group with all Monte Carlo draws frozen."""
    batch = full_batch(data)
    draws = sample_draws(state, batch.n, s, RngStream(seed, 9), mode)
    g = implemented_gradient(state, state.params, batch, draws, mode)
    f = objective_function(state, batch, draws, mode)
    x = state.params.numpy().copy()
    rng = np.random.default_rng(seed)
    worst = {}
    for group, names in state.layout.groups().items():
        idx = np.concatenate([np.arange(state.layout.slice(n).start, state.layout.slice(n).stop)
                              for n in names])
        pick = idx if len(idx) <= per_group else rng.choice(idx, per_group, replace=False)
        fd = finite_diff_grad(f, x, h=1e-5, coords=pick)
        worst[group] = float(relative_errors(g[pick], fd).max())
    return worst


def write_sarcos(path, n_train=44484, n_test=4449):
    """Integer-valued stand-ins for the Sarcos CSVs with the real row counts."""
    m = load_manifest("sarcos")
    rng = np.random.default_rng(0)
    for key, n in (("train", n_train), ("test", n_test)):
        names = list(m["source_outputs"])
        X = rng.integers(0, 9, (n, 21)).astype(float)
        data = MultiTaskDataset([X] * len(names), [rng.integers(0, 9, n).astype(float)
                                                   for _ in names], names=names)
        write_csv(data, path / m["files"][key])
