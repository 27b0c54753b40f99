"""The five trainable multi-task models as configurations of one parameter layout.

All parameters of a model live in one flat float64 vector; :class:`ParamLayout`
maps names to slices of it. Positive quantities are stored as logs and the
Cholesky factor of S_q keeps its diagonal in log-space, so every point of the
flat vector is a feasible model.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import MultiTaskDataset, Normalization
from .errors import InvalidSpec
from .kernels import DEFAULT_LENGTH_SCALE, batched_kernel
from .neural import (NU0_INIT, MixtureA, NeuralMixturePrior, init_mlp, mlp_forward,
                     prior_b_moments, sample_a, sample_b)
from .numerics import DTYPE, RngStream, cholesky_with_jitter
from .sparse import LatentMoments, batched_moments, init_inducing

VARIANTS = ("svlmc", "nsvlmc", "nmogp", "ngprn", "svlmc-dkl")
ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu, "identity": lambda x: x}
VARIANCE_MODES = ("exact_cross", "paper_literal")
NOISE_INIT = 0.1


def canonical_variant(name: str) -> str:
    name = name.replace("_", "-").lower()
    if name not in VARIANTS:
        raise InvalidSpec(f"unknown variant {name!r}; choose from {VARIANTS}")
    return name


@dataclass
class ModelSpec:
    """Architecture of one model.

    ``h`` is unused by svlmc and svlmc-dkl. ``m_per_latent=None`` means one
    inducing point per distinct training input. For ngprn the weight network
    reuses the NSVLMC trunk shape, so ``h`` sets its width (``q * h``).
    """

    variant: str
    q: int = 2
    h: int = 20
    m_per_latent: int | None = None
    activation: str = "tanh"
    dkl_layers: tuple | None = None
    length_scale: float = DEFAULT_LENGTH_SCALE
    noise_init: float = NOISE_INIT
    nu0_init: float = NU0_INIT

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.q < 1 or self.h < 1:
            raise InvalidSpec("q and h must be >= 1")
        if self.m_per_latent is not None and self.m_per_latent < 1:
            raise InvalidSpec("m_per_latent must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"activation must be one of {sorted(ACTIVATIONS)}")
        if self.dkl_layers is not None:
            self.dkl_layers = tuple(int(s) for s in self.dkl_layers)
        if self.length_scale <= 0 or self.noise_init <= 0 or self.nu0_init <= 0:
            raise InvalidSpec("length_scale, noise_init and nu0_init must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dkl_layers"] = list(self.dkl_layers) if self.dkl_layers else None
        return d


class ParamLayout:
    """Ordered name -> shape map over a flat parameter vector."""

    def __init__(self):
        self.shapes: OrderedDict = OrderedDict()
        self.offsets: dict = {}
        self.size = 0

    def add(self, name: str, shape) -> None:
        shape = tuple(int(s) for s in shape)
        self.shapes[name] = shape
        self.offsets[name] = self.size
        self.size += int(np.prod(shape)) if shape else 1

    def slice(self, name: str) -> slice:
        n = int(np.prod(self.shapes[name])) if self.shapes[name] else 1
        return slice(self.offsets[name], self.offsets[name] + n)

    def unpack(self, flat: torch.Tensor) -> dict:
        return {k: flat[self.slice(k)].reshape(s) for k, s in self.shapes.items()}

    def pack(self, values: dict) -> torch.Tensor:
        flat = torch.zeros(self.size, dtype=DTYPE)
        for k in self.shapes:
            flat[self.slice(k)] = torch.as_tensor(np.asarray(values[k]), dtype=DTYPE).reshape(-1)
        return flat

    def group(self, name: str) -> str:
        return name.split(".")[0]

    def groups(self) -> dict:
        out: dict = OrderedDict()
        for k in self.shapes:
            out.setdefault(self.group(k), []).append(k)
        return out


def s_chol_from_tril(vec: torch.Tensor, m: int) -> torch.Tensor:
    """(..., M(M+1)/2) lower-triangle entries -> (..., M, M) factor, diagonal in log-space."""
    rows, cols = torch.tril_indices(m, m)
    L = vec.new_zeros(*vec.shape[:-1], m, m)
    L[..., rows, cols] = vec
    diag = torch.diagonal(L, dim1=-2, dim2=-1)
    return torch.tril(L, -1) + torch.diag_embed(torch.exp(diag))


def tril_from_s_chol(L: torch.Tensor) -> torch.Tensor:
    m = L.shape[-1]
    raw = torch.tril(L, -1) + torch.diag_embed(torch.log(torch.diagonal(L, dim1=-2, dim2=-1)))
    rows, cols = torch.tril_indices(m, m)
    return raw[..., rows, cols]


@dataclass
class LmcState:
    """A built model: architecture, layout, the current flat parameters and data facts."""

    spec: ModelSpec
    layout: ParamLayout
    params: torch.Tensor
    n_tasks: int
    input_dim: int
    n_inducing: int
    task_sizes: list
    norm: Normalization | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def unpack(self, flat: torch.Tensor | None = None) -> dict:
        return self.layout.unpack(self.params if flat is None else flat)

    def copy(self) -> "LmcState":
        return LmcState(self.spec, self.layout, self.params.clone(), self.n_tasks,
                        self.input_dim, self.n_inducing, list(self.task_sizes), self.norm,
                        self.seed, dict(self.meta))

    @property
    def variant(self) -> str:
        return self.spec.variant

    @property
    def n_mix(self) -> int:
        """Width of the likelihood mixture: H for nsvlmc/nmogp, Q otherwise."""
        return self.spec.h if self.variant in ("nsvlmc", "nmogp") else self.spec.q

    # structured views --------------------------------------------------------
    def s_chol(self, p: dict) -> torch.Tensor:
        return s_chol_from_tril(p["inducing.s_tril"], self.n_inducing)

    def prior(self, p: dict) -> NeuralMixturePrior:
        trunk = [(p[f"prior.trunk{i}.W"], p[f"prior.trunk{i}.b"]) for i in range(3)]
        return NeuralMixturePrior(trunk, (p["prior.mu.W"], p["prior.mu.b"]),
                                  (p["prior.nu.W"], p["prior.nu.b"]),
                                  torch.exp(p["nu0.log"]), self.spec.h, self.spec.q)

    def mixture_a(self, p: dict) -> MixtureA:
        return MixtureA(p["qa.mu"], p["qa.log_nu"])

    def mlp_layers(self, p: dict, prefix: str) -> list:
        n = sum(1 for k in self.layout.shapes if k.startswith(prefix) and k.endswith(".W"))
        return [(p[f"{prefix}{i}.W"], p[f"{prefix}{i}.b"]) for i in range(n)]

    def warp(self, p: dict, X: torch.Tensor) -> torch.Tensor:
        if self.variant != "svlmc-dkl":
            return X
        return mlp_forward(self.mlp_layers(p, "warp.layer"), X)


def _dkl_sizes(spec: ModelSpec, d: int) -> list:
    hidden = list(spec.dkl_layers) if spec.dkl_layers else [max(d, 8)]
    return [d] + hidden + [d]


def _standardised_warp(layers: list, X: np.ndarray) -> list:
    """Rescale the last layer so the warped training inputs have zero mean and unit spread.

    A freshly initialised tanh MLP shrinks (and may fold) the input range,
    leaving K_Z nearly singular at the length-scale chosen for the raw inputs.
    """
    wt = [(torch.from_numpy(W), torch.from_numpy(b)) for W, b in layers]
    with torch.no_grad():
        out = mlp_forward(wt, torch.from_numpy(np.asarray(X, dtype=np.float64))).numpy()
    mean, sd = out.mean(0), out.std(0)
    sd[~(sd > 0)] = 1.0
    W, b = layers[-1]
    return layers[:-1] + [(W / sd, (b - mean) / sd)]


def build_model(spec: ModelSpec, data: MultiTaskDataset, seed: int) -> LmcState:
    """Initialise a model on (normalised) data; equal seeds give identical states."""
    if data.n_tasks < 1 or min(data.sizes) < 1:
        raise InvalidSpec("dataset must contain at least one point per task")
    rng = RngStream(seed, 0).generator
    C, D, Q, H = data.n_tasks, data.input_dim, spec.q, spec.h
    pooled = data.pooled_inputs()
    n_unique = len(np.unique(pooled, axis=0))
    M = n_unique if spec.m_per_latent is None else spec.m_per_latent
    z0 = init_inducing(pooled, M, seed)
    M = len(z0)

    layout = ParamLayout()
    values: dict = {}

    def put(name, value):
        value = np.asarray(value, dtype=np.float64)
        layout.add(name, value.shape)
        values[name] = value

    log_sf2 = np.zeros(Q)
    log_ls = np.full((Q, D), math.log(spec.length_scale))
    put("kernel.log_sf2", log_sf2)
    put("kernel.log_ls", log_ls)
    put("noise.log_var", np.full(C, math.log(spec.noise_init)))
    z = np.repeat(z0[None], Q, axis=0)
    if spec.variant == "svlmc-dkl":
        warp = _standardised_warp(init_mlp(rng, _dkl_sizes(spec, D)), pooled)
    put("inducing.z", z)
    put("inducing.m", np.zeros((Q, M)))

    # S_q starts at the prior covariance K_{Z_q}, so KL[q(u)||p(u)] starts at zero
    zt = torch.from_numpy(z)
    if spec.variant == "svlmc-dkl":
        wt = [(torch.from_numpy(W), torch.from_numpy(b)) for W, b in warp]
        zt = mlp_forward(wt, zt)
    Kzz = batched_kernel(zt, zt, torch.from_numpy(log_sf2), torch.from_numpy(log_ls))
    put("inducing.s_tril", tril_from_s_chol(cholesky_with_jitter(Kzz).lower).numpy())

    if spec.variant == "nsvlmc":
        prior = NeuralMixturePrior.init(D, H, Q, rng, nu0=spec.nu0_init)
        for i, (W, b) in enumerate(prior.trunk):
            put(f"prior.trunk{i}.W", W)
            put(f"prior.trunk{i}.b", b)
        put("prior.mu.W", prior.head_mu[0])
        put("prior.mu.b", prior.head_mu[1])
        put("prior.nu.W", prior.head_nu[0])
        put("prior.nu.b", prior.head_nu[1])
        put("nu0.log", np.log(spec.nu0_init))
        qa = MixtureA.init(C, H, rng)
        put("qa.mu", qa.mu)
        put("qa.log_nu", qa.log_nu)
    elif spec.variant in ("svlmc", "svlmc-dkl"):
        put("coreg.a", rng.normal(size=(C, Q)))
        if spec.variant == "svlmc-dkl":
            for i, (W, b) in enumerate(warp):
                put(f"warp.layer{i}.W", W)
                put(f"warp.layer{i}.b", b)
    elif spec.variant == "nmogp":
        put("coreg.a", rng.normal(0.0, 1.0 / math.sqrt(H), size=(C, H)))
        put("coreg.b", rng.normal(size=(H, Q)))
    elif spec.variant == "ngprn":
        layers = init_mlp(rng, [D] + [Q * H] * 3 + [C * Q])
        for i, (W, b) in enumerate(layers):
            put(f"gprn.layer{i}.W", W)
            put(f"gprn.layer{i}.b", b)

    return LmcState(spec, layout, layout.pack(values), C, D, M, list(data.sizes),
                    data.norm, seed)


def latent_moments(state: LmcState, p: dict, X: torch.Tensor, site: str = "train",
                   L: torch.Tensor | None = None, s_chol: torch.Tensor | None = None
                   ) -> LatentMoments:
    """q(f) marginals at ``X``; ``L`` and ``s_chol`` may be passed in when already computed."""
    Xw = state.warp(p, X)
    z = state.warp(p, p["inducing.z"])
    s_chol = state.s_chol(p) if s_chol is None else s_chol
    return batched_moments(Xw, z, p["inducing.m"], s_chol,
                           p["kernel.log_sf2"], p["kernel.log_ls"], site=site, L=L)


@dataclass
class Draws:
    """Standard-normal noise behind one objective evaluation.

    ``eps_a`` is (C, H); ``eps_f`` is (S, n, Q). ``eps_b`` is (S, n, H*Q) when
    whole B matrices are drawn, or (S, n, Q) when ``collapsed``: then each
    point's row of A B(x) is drawn directly. Given A that row has independent
    Gaussian entries with mean sum_h a_h mu_B[h, q] and variance
    sum_h a_h^2 nu_B[h, q], so both forms sample the same distribution.
    Unused entries are ``None``.
    """

    eps_a: torch.Tensor | None = None
    eps_b: torch.Tensor | None = None
    eps_f: torch.Tensor | None = None
    collapsed: bool = False


def sample_draws(state: LmcState, n: int, s: int, rng: RngStream,
                 mode: str = "exact_cross") -> Draws:
    v, C, H, Q = state.variant, state.n_tasks, state.spec.h, state.spec.q
    if v == "nsvlmc":
        eps_a = rng.tensor_normal((C, H))
        if mode == "exact_cross":
            return Draws(eps_a=eps_a, eps_b=rng.tensor_normal((s, n, Q)), collapsed=True)
        return Draws(eps_a=eps_a, eps_b=rng.tensor_normal((s, n, H * Q)))
    if v == "nmogp":
        return Draws(eps_f=rng.tensor_normal((s, n, Q)))
    return Draws()


def effective_weights(state: LmcState, p: dict, X: torch.Tensor, task: torch.Tensor,
                      draws: Draws):
    """Per-point weights w with f-contribution sum_q w_q f_q(x), shape (S, n, Q).

    Returns ``(w, a_rows, b)`` where ``a_rows``/``b`` are only set for nsvlmc
    (needed by the paper-literal variance term).
    """
    v = state.variant
    if v == "nsvlmc":
        A = sample_a(state.mixture_a(p), draws.eps_a)
        a_rows = A[task]
        prior = state.prior(p)
        if draws.collapsed:
            mu_b, nu_b = prior_b_moments(prior, X)
            mu_b = mu_b.reshape(-1, prior.h, prior.q)
            nu_b = nu_b.reshape(-1, prior.h, prior.q)
            w_mean = torch.einsum("nh,nhq->nq", a_rows, mu_b)
            w_var = torch.einsum("nh,nhq->nq", a_rows * a_rows, nu_b)
            return w_mean + torch.sqrt(w_var) * draws.eps_b, a_rows, None
        B = sample_b(prior, X, draws.eps_b)
        return torch.einsum("nh,snhq->snq", a_rows, B), a_rows, B
    if v in ("svlmc", "svlmc-dkl"):
        return p["coreg.a"][task].unsqueeze(0), None, None
    if v == "ngprn":
        out = mlp_forward(state.mlp_layers(p, "gprn.layer"), X)
        out = out.reshape(X.shape[0], state.n_tasks, state.spec.q)
        return out[torch.arange(X.shape[0]), task].unsqueeze(0), None, None
    raise InvalidSpec(f"{v} has no linear weights")


def likelihood_moments(state: LmcState, p: dict, X: torch.Tensor, task: torch.Tensor,
                       draws: Draws, mode: str = "exact_cross", mom: LatentMoments | None = None):
    """Mean and variance correction of each point's likelihood mean under q(f).

    Both are (S, n). For every variant except nmogp they are closed form given
    the sampled weights; nmogp averages over the f draws in ``draws.eps_f``
    (population variance, which makes the Gaussian expectation exact for the
    empirical distribution of the draws).
    """
    if mode not in VARIANCE_MODES:
        raise InvalidSpec(f"variance mode must be one of {VARIANCE_MODES}")
    if mom is None:
        mom = latent_moments(state, p, X)
    mu, var = mom.mu.T, mom.var.T
    if state.variant == "nmogp":
        act = ACTIVATIONS[state.spec.activation]
        f = mu + torch.sqrt(var) * draws.eps_f
        g = (p["coreg.a"][task] * act(f @ p["coreg.b"].T)).sum(-1)
        return g.mean(0, keepdim=True), g.var(0, unbiased=False, keepdim=True)
    w, a_rows, B = effective_weights(state, p, X, task, draws)
    mean = (w * mu).sum(-1)
    if mode == "paper_literal" and B is not None:
        varcorr = (torch.einsum("nh,snhq->snq", a_rows ** 2, B ** 2) * var).sum(-1)
    else:
        varcorr = (w * w * var).sum(-1)
    return mean, varcorr


def parameter_count(state: LmcState, group: str | None = None) -> int:
    return sum(int(np.prod(s)) if s else 1 for k, s in state.layout.shapes.items()
               if group is None or state.layout.group(k) == group)
