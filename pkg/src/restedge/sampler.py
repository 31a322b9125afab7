"""MCMC for the rest-advantage models.

Two engines share the same target:

* ``BLOCKED_GIBBS`` (default): an exact joint Gaussian draw of every
  location parameter, a truncated-normal draw of gamma, and slice updates
  of the two scales on the log scale.
* ``HMC``: leapfrog Hamiltonian Monte Carlo in unconstrained coordinates,
  with dual-averaging step size and diagonal mass adaptation during burn-in.

Chain ``c`` draws from ``Generator(Philox(SeedSequence(seed).spawn(n)[c]))``
so serial and parallel runs agree bit for bit.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy import linalg, stats
from scipy.linalg import lapack

from .model import (
    SCALE_NAMES,
    Design,
    Layout,
    ModelVariant,
    ParameterVector,
    PriorConfig,
    _value_and_grad,
    log_posterior,
    theta_innovations,
)


class Algorithm(enum.Enum):
    BLOCKED_GIBBS = "gibbs"
    HMC = "hmc"


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 4
    n_iterations: int = 3000
    n_burnin: int = 1000
    seed: int = 20240901
    algorithm: Algorithm = Algorithm.BLOCKED_GIBBS
    slice_width: float = 1.0
    hmc_leapfrog_steps: int = 25
    hmc_initial_step: float = 0.05
    hmc_target_accept: float = 0.8
    hmc_max_energy_error: float = 1000.0
    # post-adaptation step sizes are drawn from step * U(1 - jitter, 1 + jitter)
    hmc_jitter: float = 0.2
    # parameters held at a constant value (subset of gamma / sigma_*)
    fixed: Mapping[str, float] = field(default_factory=dict)
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ValueError("need 0 <= n_burnin < n_iterations")
        if not 0.0 <= self.hmc_jitter < 1.0:
            raise ValueError("hmc_jitter must be in [0, 1)")
        if self.n_chains < 2:
            raise ValueError("at least two chains are required for split R-hat")
        unknown = set(self.fixed) - set(SCALE_NAMES)
        if unknown:
            raise ValueError(f"only {SCALE_NAMES} can be fixed, got {sorted(unknown)}")

    @property
    def n_retained(self):
        return self.n_iterations - self.n_burnin

    def to_dict(self):
        d = asdict(self)
        d["algorithm"] = self.algorithm.value
        d["fixed"] = dict(self.fixed)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["algorithm"] = Algorithm(d["algorithm"])
        return cls(**d)


@dataclass
class PosteriorDraws:
    """Retained draws, shape (chains, iterations, parameters)."""

    draws: np.ndarray
    names: tuple
    config: ChainConfig
    variant: ModelVariant
    layout: Layout
    dataset_digest: str = ""
    divergences: tuple = ()
    accept_rate: tuple = ()

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_draws(self):
        return self.draws.shape[1]

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def get(self, name) -> np.ndarray:
        """Draws of one parameter, shape (chains, iterations)."""
        return self.draws[:, :, self.index(name)]

    def pooled(self, name) -> np.ndarray:
        return self.get(name).ravel()

    def param_vector(self, chain, it) -> ParameterVector:
        return ParameterVector.from_flat(self.draws[chain, it], self.layout, self.variant)

    def metadata(self):
        return {
            "names": list(self.names),
            "config": self.config.to_dict(),
            "model": self.variant.number,
            "teams": list(self.layout.teams),
            "seasons": list(self.layout.seasons),
            "dataset_digest": self.dataset_digest,
            "divergences": list(self.divergences),
            "accept_rate": list(self.accept_rate),
        }


# ---------------------------------------------------------------------------
# Gibbs pieces

def theta_prior_band(layout: Layout, gamma, sigma_ts, priors: PriorConfig):
    """Upper banded storage (rows = bandwidth + 1) of the strength prior precision."""
    T, S = layout.n_teams, layout.n_seasons
    u = T
    band = np.zeros((u + 1, T * S))
    prec = 1.0 / sigma_ts ** 2
    init = prec if priors.theta_init_uses_sigma_teamstrength else 1.0 / priors.theta_init_sd ** 2
    diag = np.full((S, T), prec * (1.0 + gamma ** 2))
    diag[0] = init + (gamma ** 2 * prec if S > 1 else 0.0)
    if S > 1:
        diag[-1] = prec
    band[u] = diag.ravel()
    band[0, T:] = -gamma * prec
    return band


def _tb_solve(U, b, trans):
    """Solve ``U x = b`` (trans="N") or ``U' x = b`` (trans="T") for banded upper ``U``."""
    b = np.asarray(b, dtype=float)
    x, info = lapack.dtbtrs(U, b.reshape(b.shape[0], -1), uplo="U", trans=trans)
    if info != 0:
        raise SamplerError(f"banded triangular solve failed (info={info})")
    return x.reshape(b.shape)


def sample_location(design: Design, gamma, sigma_ts, sigma_game, priors: PriorConfig, rng,
                    return_mean=False):
    """Draw all location parameters from their joint Gaussian conditional.

    The precision is ``X'X / sigma_game^2 + P`` with the strength block
    banded; the alpha block is folded in through a Schur complement.
    """
    nt = design.layout.n_theta
    prec_g = 1.0 / sigma_game ** 2
    ab = design.xtx_band * prec_g + theta_prior_band(design.layout, gamma, sigma_ts, priors)
    try:
        U = linalg.cholesky_banded(ab, lower=False)
    except linalg.LinAlgError as exc:
        raise SamplerError(f"strength-block conditional precision is not positive definite: {exc}") from exc
    B = design.xtx[:nt, nt:] * prec_g
    C = design.xtx[nt:, nt:] * prec_g + np.eye(design.n_alpha) / priors.alpha_sd ** 2
    b = design.xty * prec_g
    W = _tb_solve(U, B, trans="T")
    try:
        L = np.linalg.cholesky(C - W.T @ W)
    except np.linalg.LinAlgError as exc:
        raise SamplerError(f"alpha-block Schur complement is singular: {exc}") from exc
    y_t = _tb_solve(U, b[:nt], trans="T")
    y_a = linalg.solve_triangular(L, b[nt:] - W.T @ y_t, lower=True)

    def back(v_t, v_a):
        x_a = linalg.solve_triangular(L.T, v_a, lower=False)
        x_t = _tb_solve(U, v_t - W @ x_a, trans="N")
        return np.concatenate([x_t, x_a])

    if return_mean:
        return back(y_t, y_a)
    z = rng.standard_normal(nt + design.n_alpha)
    return back(y_t + z[:nt], y_a + z[nt:])


def sample_gamma(theta: np.ndarray, sigma_ts, rng):
    """Truncated-normal full conditional of gamma on [0, 1]."""
    prev, nxt = theta[:, :-1], theta[:, 1:]
    sxx = float(np.sum(prev ** 2))
    if sxx <= 0.0:
        return float(rng.uniform())
    mean = float(np.sum(prev * nxt)) / sxx
    sd = sigma_ts / math.sqrt(sxx)
    a, b = (0.0 - mean) / sd, (1.0 - mean) / sd
    return float(stats.truncnorm.rvs(a, b, loc=mean, scale=sd, random_state=rng))


def slice_sample(logf, x0, rng, width=1.0, max_steps=200):
    """Univariate slice sampler with stepping out and shrinkage."""
    f0 = logf(x0)
    level = f0 + math.log(rng.uniform())
    left = x0 - width * rng.uniform()
    right = left + width
    j = int(rng.integers(max_steps))
    k = max_steps - 1 - j
    while j > 0 and logf(left) > level:
        left -= width
        j -= 1
    while k > 0 and logf(right) > level:
        right += width
        k -= 1
    while True:
        x1 = rng.uniform(left, right)
        if logf(x1) > level:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1


def _log_scale_conditional(n_terms, ssq, hn_sd):
    """log p(u) for u = log(sigma): N-term Gaussian likelihood, half-normal prior, Jacobian."""
    def logf(u):
        s2 = math.exp(2.0 * u)
        return -n_terms * u - 0.5 * ssq / s2 - 0.5 * s2 / hn_sd ** 2 + u
    return logf


@dataclass
class _GibbsState:
    beta: np.ndarray
    gamma: float
    sigma_ts: float
    sigma_g: float


def gibbs_sweep(state: ParameterVector, design: Design, priors: PriorConfig, rng,
                fixed: Mapping[str, float] = None, slice_width=1.0) -> ParameterVector:
    """One sweep: locations | scales, gamma | strengths, then each scale."""
    st = _GibbsState(state.location(design.variant), state.gamma, state.sigma_teamstrength, state.sigma_game)
    st = _sweep(st, design, priors, rng, fixed or {}, slice_width)
    return _to_params(st, design)


def _sweep(st: _GibbsState, design: Design, priors, rng, fixed, slice_width):
    lay = design.layout
    nt = lay.n_theta
    hn = priors.sigma_halfnormal_sd
    st.beta = sample_location(design, st.gamma, st.sigma_ts, st.sigma_g, priors, rng)
    theta = st.beta[:nt].reshape(lay.n_seasons, lay.n_teams).T

    if "gamma" not in fixed:
        st.gamma = sample_gamma(theta, st.sigma_ts, rng)

    if "sigma_teamstrength" not in fixed:
        innov = theta_innovations(theta, st.gamma)
        ssq, n_terms = float(np.sum(innov ** 2)), innov.size
        if priors.theta_init_uses_sigma_teamstrength:
            ssq += float(np.sum(theta[:, 0] ** 2))
            n_terms += theta.shape[0]
        u = slice_sample(_log_scale_conditional(n_terms, ssq, hn), math.log(st.sigma_ts), rng, slice_width)
        st.sigma_ts = math.exp(u)

    if "sigma_game" not in fixed:
        r = design.residuals(st.beta)
        logf = _log_scale_conditional(design.n_games, float(r @ r), hn)
        st.sigma_g = math.exp(slice_sample(logf, math.log(st.sigma_g), rng, slice_width))
    return st


def _to_params(st: _GibbsState, design: Design) -> ParameterVector:
    flat = np.concatenate([st.beta, [st.gamma, st.sigma_ts, st.sigma_g]])
    return ParameterVector.from_flat(flat, design.layout, design.variant)


# ---------------------------------------------------------------------------
# HMC

def leapfrog(x, p, grad, target, step_size, n_steps, inv_mass):
    """Run ``n_steps`` leapfrog steps; returns (x, p, logp, grad)."""
    logp = None
    p = p + 0.5 * step_size * grad
    for i in range(n_steps):
        x = x + step_size * inv_mass * p
        logp, grad = target(x)
        if not np.isfinite(logp):
            return x, p, -np.inf, grad
        if i < n_steps - 1:
            p = p + step_size * grad
    p = p + 0.5 * step_size * grad
    return x, p, logp, grad


@dataclass
class HMCResult:
    x: np.ndarray
    logp: float
    grad: np.ndarray
    accepted: bool
    divergent: bool
    accept_prob: float


def hmc_step(x, target, rng, step_size, n_steps, inv_mass=None, logp=None, grad=None,
             max_energy_error=1000.0) -> HMCResult:
    """One Metropolis-corrected leapfrog trajectory.

    ``target(x)`` returns ``(log density, gradient)``.
    """
    x = np.asarray(x, dtype=float)
    inv_mass = np.ones_like(x) if inv_mass is None else inv_mass
    if logp is None or grad is None:
        logp, grad = target(x)
    p0 = rng.standard_normal(x.shape) / np.sqrt(inv_mass)
    h0 = -logp + 0.5 * float(np.sum(inv_mass * p0 ** 2))
    if n_steps == 0:
        rng.uniform()
        return HMCResult(x, logp, grad, True, False, 1.0)
    x1, p1, logp1, grad1 = leapfrog(x, p0, grad, target, step_size, n_steps, inv_mass)
    h1 = -logp1 + 0.5 * float(np.sum(inv_mass * p1 ** 2)) if np.isfinite(logp1) else np.inf
    energy_error = h1 - h0
    divergent = not np.isfinite(energy_error) or energy_error > max_energy_error
    accept_prob = 0.0 if divergent else min(1.0, math.exp(-energy_error)) if energy_error > 0 else 1.0
    if rng.uniform() < accept_prob:
        return HMCResult(x1, logp1, grad1, True, False, accept_prob)
    return HMCResult(x, logp, grad, False, divergent, accept_prob)


class ModelTarget:
    """Unconstrained log posterior restricted to the free coordinates."""

    def __init__(self, design: Design, priors: PriorConfig, fixed: Mapping[str, float] = None):
        self.design, self.priors = design, priors
        n = design.n_loc + 3
        self.full = np.zeros(n)
        self.free = np.ones(n, dtype=bool)
        for name, value in (fixed or {}).items():
            j = design.n_loc + SCALE_NAMES.index(name)
            self.free[j] = False
            self.full[j] = _unconstrain_scale(name, value)

    def expand(self, z):
        x = self.full.copy()
        x[self.free] = z
        return x

    def __call__(self, z):
        x = self.expand(z)
        try:
            with np.errstate(all="ignore"):
                val, grad = _value_and_grad(x, self.design, self.priors)
        except (ValueError, OverflowError, ZeroDivisionError):
            return -np.inf, np.zeros_like(z)
        if not (np.isfinite(val) and np.all(np.isfinite(grad))):
            return -np.inf, np.zeros_like(z)
        return val, grad[self.free]


def _unconstrain_scale(name, value):
    if name == "gamma":
        return math.log(value) - math.log1p(-value)
    return math.log(value)


def _constrain(x, design):
    out = x.copy()
    out[-3] = 1.0 / (1.0 + math.exp(-x[-3]))
    out[-2:] = np.exp(x[-2:])
    return out


class _DualAveraging:
    def __init__(self, step, target):
        self.mu = math.log(10 * step)
        self.target = target
        self.hbar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_prob):
        self.t += 1
        t0, gamma, kappa = 10.0, 0.05, 0.75
        eta = 1.0 / (self.t + t0)
        self.hbar = (1 - eta) * self.hbar + eta * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(self.t) / gamma * self.hbar
        w = self.t ** -kappa
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


# ---------------------------------------------------------------------------
# driver

def initialize(variant: ModelVariant, layout: Layout, priors: PriorConfig, rng,
               fixed: Mapping[str, float] = None) -> ParameterVector:
    """Strengths at 0, gamma 0.5, scales 3, alphas drawn from 0.1 x prior."""
    fixed = fixed or {}
    alphas = 0.1 * priors.alpha_sd * rng.standard_normal(len(variant.alpha_names))
    return ParameterVector(
        theta=np.zeros((layout.n_teams, layout.n_seasons)),
        gamma=float(fixed.get("gamma", 0.5)),
        sigma_teamstrength=float(fixed.get("sigma_teamstrength", 3.0)),
        sigma_game=float(fixed.get("sigma_game", 3.0)),
        **dict(zip(variant.alpha_names, alphas.tolist())),
    )


def chain_rngs(seed, n_chains):
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _run_gibbs(design, priors, config, rng):
    state = initialize(design.variant, design.layout, priors, rng, config.fixed)
    if not math.isfinite(log_posterior(state, design, design.variant, priors)):
        raise SamplerError("initial state has non-finite log posterior")
    st = _GibbsState(state.location(design.variant), state.gamma, state.sigma_teamstrength, state.sigma_game)
    out = np.empty((config.n_retained, design.n_loc + 3))
    for it in range(config.n_iterations):
        st = _sweep(st, design, priors, rng, config.fixed, config.slice_width)
        if it >= config.n_burnin:
            row = out[it - config.n_burnin]
            row[:design.n_loc] = st.beta
            row[design.n_loc:] = (st.gamma, st.sigma_ts, st.sigma_g)
    return out, 0, 1.0


def _run_hmc(design, priors, config, rng):
    target = ModelTarget(design, priors, config.fixed)
    z = None
    for _ in range(20):
        state = initialize(design.variant, design.layout, priors, rng, config.fixed)
        z = _init_unconstrained(state, design)[target.free]
        logp, grad = target(z)
        if np.isfinite(logp):
            break
    else:
        raise SamplerError("could not find an initial state with finite log posterior")

    step = config.hmc_initial_step
    inv_mass = np.ones_like(z)
    B = config.n_burnin
    mass_start, mass_end = int(0.15 * B), int(0.75 * B)
    da = _DualAveraging(step, config.hmc_target_accept)
    window = []
    out = np.empty((config.n_retained, design.n_loc + 3))
    divergences, accepted = 0, 0
    for it in range(config.n_iterations):
        eps = step
        if it >= B and config.hmc_jitter > 0:
            eps = step * (1.0 + config.hmc_jitter * (2.0 * rng.uniform() - 1.0))
        res = hmc_step(z, target, rng, eps, config.hmc_leapfrog_steps, inv_mass, logp, grad,
                       config.hmc_max_energy_error)
        z, logp, grad = res.x, res.logp, res.grad
        if it < B:
            step = da.update(res.accept_prob)
            if mass_start <= it < mass_end:
                window.append(z)
            if it == mass_end - 1 and len(window) > 10:
                w = np.asarray(window)
                n = len(w)
                inv_mass = (n / (n + 5.0)) * w.var(axis=0) + 1e-3 * 5.0 / (n + 5.0)
                da = _DualAveraging(step, config.hmc_target_accept)
            if it == B - 1:
                step = da.final
        else:
            divergences += res.divergent
            accepted += res.accepted
            out[it - B] = _constrain(target.expand(z), design)
    return out, divergences, accepted / max(config.n_retained, 1)


def _init_unconstrained(state, design):
    x = np.concatenate([state.location(design.variant),
                        [math.log(state.gamma) - math.log1p(-state.gamma),
                         math.log(state.sigma_teamstrength), math.log(state.sigma_game)]])
    return x


def _run_one(args):
    design, priors, config, rng = args
    if config.algorithm is Algorithm.HMC:
        return _run_hmc(design, priors, config, rng)
    return _run_gibbs(design, priors, config, rng)


def run_chains(design: Design, priors: PriorConfig = PriorConfig(),
               config: ChainConfig = ChainConfig()) -> PosteriorDraws:
    """Run ``config.n_chains`` independent chains and keep post-burn-in draws."""
    rngs = chain_rngs(config.seed, config.n_chains)
    jobs = [(design, priors, config, rng) for rng in rngs]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    draws = np.stack([r[0] for r in results])
    return PosteriorDraws(
        draws=draws,
        names=tuple(design.layout.param_names(design.variant)),
        config=config,
        variant=design.variant,
        layout=design.layout,
        dataset_digest=design.digest,
        divergences=tuple(int(r[1]) for r in results),
        accept_rate=tuple(float(r[2]) for r in results),
    )


# ---------------------------------------------------------------------------
# persistence

DRAWS_MAGIC = b"RDRW"
DRAWS_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def write_draws_bin(draws: PosteriorDraws, path):
    """Binary draws plus a JSON sidecar (``<path>.json``) with names and metadata.

    Layout (little-endian): 4-byte magic ``RDRW``, uint32 version, uint32
    chains, uint32 iterations, uint32 parameters, then chains x iterations x
    parameters float64 values in C order.
    """
    path = Path(path)
    c, n, p = draws.draws.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DRAWS_MAGIC, DRAWS_VERSION, c, n, p))
        fh.write(np.ascontiguousarray(draws.draws, dtype="<f8").tobytes())
    Path(str(path) + ".json").write_text(json.dumps(draws.metadata(), indent=1) + "\n")


def read_draws_bin(path) -> PosteriorDraws:
    path = Path(path)
    raw = path.read_bytes()
    magic, version, c, n, p = _HEADER.unpack_from(raw)
    if magic != DRAWS_MAGIC or version != DRAWS_VERSION:
        raise ValueError(f"{path} is not a version-{DRAWS_VERSION} draws file")
    arr = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=c * n * p).reshape(c, n, p).copy()
    meta = json.loads(Path(str(path) + ".json").read_text())
    return _from_metadata(arr, meta)


def _from_metadata(arr, meta):
    return PosteriorDraws(
        draws=arr,
        names=tuple(meta["names"]),
        config=ChainConfig.from_dict(meta["config"]),
        variant=ModelVariant.from_number(meta["model"]),
        layout=Layout(tuple(meta["teams"]), tuple(meta["seasons"])),
        dataset_digest=meta.get("dataset_digest", ""),
        divergences=tuple(meta.get("divergences", ())),
        accept_rate=tuple(meta.get("accept_rate", ())),
    )


def write_draws_csv(draws: PosteriorDraws, path, params=None):
    """Long-format ``chain,iteration,param,value`` CSV (iteration counts retained draws from 0)."""
    import pandas as pd

    names = list(draws.names) if params is None else list(params)
    idx = [draws.index(n) for n in names]
    c, n = draws.n_chains, draws.n_draws
    sub = draws.draws[:, :, idx]
    frame = pd.DataFrame({
        "chain": np.repeat(np.arange(c), n * len(idx)),
        "iteration": np.tile(np.repeat(np.arange(n), len(idx)), c),
        "param": np.tile(np.asarray(names, dtype=object), c * n),
        "value": sub.ravel(),
    })
    frame.to_csv(path, index=False, float_format="%.17g")


def read_draws_csv(path, meta_path) -> PosteriorDraws:
    """Rebuild draws from the long CSV and the binary sidecar metadata."""
    import pandas as pd

    meta = json.loads(Path(meta_path).read_text())
    frame = pd.read_csv(path, float_precision="round_trip")
    names = meta["names"]
    c, n = frame["chain"].max() + 1, frame["iteration"].max() + 1
    arr = np.empty((c, n, len(names)))
    col = {name: i for i, name in enumerate(names)}
    arr[frame["chain"].to_numpy(), frame["iteration"].to_numpy(),
        frame["param"].map(col).to_numpy()] = frame["value"].to_numpy()
    return _from_metadata(arr, meta)
