"""State-space rest-advantage models: parameters, design, densities.

Location parameters (team strengths and every alpha) enter the mean
linearly, so each variant is a Gaussian linear model conditional on the
autoregressive coefficient and the two scales.  Team strengths are stored
season-major in the flat location vector, which keeps the team-strength
block of the posterior precision banded with half-bandwidth ``n_teams``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .schedule import CBA_SEASON, SeasonDataset

SEASON_CENTER = 2012.5
LOG_2PI = math.log(2.0 * math.pi)


class Outcome(enum.Enum):
    POINT_DIFFERENTIAL = "point_differential"
    POINT_SPREAD = "point_spread"


class ByeStructure(enum.Enum):
    CONSTANT = "constant"
    SPLIT_2011 = "split_2011"


@dataclass(frozen=True)
class ModelVariant:
    outcome: Outcome
    bye_structure: ByeStructure

    @classmethod
    def from_number(cls, number: int) -> "ModelVariant":
        try:
            outcome, bye = _MODEL_NUMBERS[int(number)]
        except KeyError:
            raise ValueError(f"model number must be 1-4, got {number}") from None
        return cls(outcome, bye)

    @property
    def number(self) -> int:
        for k, v in _MODEL_NUMBERS.items():
            if v == (self.outcome, self.bye_structure):
                return k
        raise AssertionError("unreachable")

    @property
    def split(self) -> bool:
        return self.bye_structure is ByeStructure.SPLIT_2011

    @property
    def alpha_names(self) -> tuple:
        bye = ("alpha_bye_pre", "alpha_bye_post") if self.split else ("alpha_bye",)
        return ("alpha_ha_trend", "alpha_ha_intercept", "alpha_mnf", "alpha_mini") + bye

    def __str__(self):
        return f"Model {self.number} ({self.outcome.value}, {self.bye_structure.value} bye)"


_MODEL_NUMBERS = {
    1: (Outcome.POINT_DIFFERENTIAL, ByeStructure.CONSTANT),
    2: (Outcome.POINT_DIFFERENTIAL, ByeStructure.SPLIT_2011),
    3: (Outcome.POINT_SPREAD, ByeStructure.CONSTANT),
    4: (Outcome.POINT_SPREAD, ByeStructure.SPLIT_2011),
}

SCALE_NAMES = ("gamma", "sigma_teamstrength", "sigma_game")


@dataclass(frozen=True)
class PriorConfig:
    alpha_sd: float = 5.0
    sigma_halfnormal_sd: float = 5.0
    theta_init_uses_sigma_teamstrength: bool = True
    # first-season strength sd when the flag above is off
    theta_init_sd: float = 5.0

    def __post_init__(self):
        if min(self.alpha_sd, self.sigma_halfnormal_sd, self.theta_init_sd) <= 0:
            raise ValueError("prior scales must be positive")


@dataclass(frozen=True)
class Layout:
    """Teams and (contiguous) seasons indexing the strength matrix."""

    teams: tuple
    seasons: tuple

    def __post_init__(self):
        if list(self.seasons) != list(range(self.seasons[0], self.seasons[0] + len(self.seasons))):
            raise ValueError("seasons must be contiguous")

    @classmethod
    def from_dataset(cls, dataset: SeasonDataset, teams=None, seasons=None) -> "Layout":
        teams = tuple(teams) if teams is not None else tuple(dataset.teams())
        if seasons is None:
            found = dataset.seasons()
            if not found:
                raise ValueError("empty dataset: seasons must be given explicitly")
            seasons = range(found[0], found[-1] + 1)
        return cls(teams, tuple(seasons))

    @property
    def n_teams(self):
        return len(self.teams)

    @property
    def n_seasons(self):
        return len(self.seasons)

    @property
    def n_theta(self):
        return self.n_teams * self.n_seasons

    def team_index(self, team):
        try:
            return self.teams.index(team)
        except ValueError:
            raise KeyError(f"unknown team {team!r}") from None

    def season_index(self, season):
        s = int(season) - self.seasons[0]
        if not 0 <= s < self.n_seasons:
            raise KeyError(f"season {season} outside {self.seasons[0]}-{self.seasons[-1]}")
        return s

    def theta_index(self, season, team):
        return self.season_index(season) * self.n_teams + self.team_index(team)

    def theta_names(self):
        return [f"theta[{t},{s}]" for s in self.seasons for t in self.teams]

    def location_names(self, variant: ModelVariant):
        return self.theta_names() + list(variant.alpha_names)

    def param_names(self, variant: ModelVariant):
        return self.location_names(variant) + list(SCALE_NAMES)


def season_covariate(season):
    return season - SEASON_CENTER


@dataclass
class ParameterVector:
    """Full model state.  ``theta`` is teams x seasons."""

    theta: np.ndarray
    gamma: float
    sigma_teamstrength: float
    sigma_game: float
    alpha_ha_trend: float = 0.0
    alpha_ha_intercept: float = 0.0
    alpha_mnf: float = 0.0
    alpha_mini: float = 0.0
    alpha_bye: Optional[float] = None
    alpha_bye_pre: Optional[float] = None
    alpha_bye_post: Optional[float] = None

    def alphas(self, variant: ModelVariant) -> np.ndarray:
        vals = [getattr(self, n) for n in variant.alpha_names]
        if any(v is None for v in vals):
            raise ValueError(f"parameters lack bye terms required by {variant}")
        return np.asarray(vals, dtype=float)

    def location(self, variant: ModelVariant) -> np.ndarray:
        theta = np.asarray(self.theta, dtype=float)
        return np.concatenate([theta.T.ravel(), self.alphas(variant)])

    def flat(self, variant: ModelVariant) -> np.ndarray:
        return np.concatenate([self.location(variant),
                               [self.gamma, self.sigma_teamstrength, self.sigma_game]])

    @classmethod
    def from_flat(cls, values, layout: Layout, variant: ModelVariant) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        nt = layout.n_theta
        theta = values[:nt].reshape(layout.n_seasons, layout.n_teams).T.copy()
        names = variant.alpha_names
        alphas = dict(zip(names, (float(v) for v in values[nt:nt + len(names)])))
        g, s_ts, s_g = (float(v) for v in values[nt + len(names):nt + len(names) + 3])
        return cls(theta=theta, gamma=g, sigma_teamstrength=s_ts, sigma_game=s_g, **alphas)

    def as_row(self, layout: Layout, variant: ModelVariant) -> dict:
        """Named flat row, suitable for a single-line CSV."""
        return dict(zip(layout.param_names(variant), self.flat(variant).tolist()))

    def in_support(self) -> bool:
        return (0.0 <= self.gamma <= 1.0 and self.sigma_teamstrength > 0 and self.sigma_game > 0
                and np.all(np.isfinite(self.theta)))


@dataclass(frozen=True)
class GameSpec:
    """The per-game inputs to the mean function."""

    season: int
    home: str
    away: str
    neutral: bool
    bye: int = 0
    mini: int = 0
    mnf: int = 0


def expected_outcome(params: ParameterVector, game: GameSpec, variant: ModelVariant,
                     layout: Layout) -> float:
    s = layout.season_index(game.season)
    th = np.asarray(params.theta)
    mean = th[layout.team_index(game.home), s] - th[layout.team_index(game.away), s]
    if not game.neutral:
        mean += params.alpha_ha_trend * season_covariate(game.season) + params.alpha_ha_intercept
    mean += params.alpha_mnf * game.mnf + params.alpha_mini * game.mini
    if variant.split:
        if game.season < CBA_SEASON:
            mean += params.alpha_bye_pre * game.bye
        else:
            mean += params.alpha_bye_post * game.bye
    else:
        mean += params.alpha_bye * game.bye
    return float(mean)


class Design:
    """Sparse design matrix and cached cross-products for one variant.

    Columns follow ``layout.location_names(variant)``.
    """

    def __init__(self, dataset: SeasonDataset, variant: ModelVariant, layout: Layout = None):
        if dataset.indicators is None:
            raise ValueError("dataset indicators must be computed before modeling")
        self.variant = variant
        self.layout = layout or Layout.from_dataset(dataset)
        self.digest = dataset.digest()
        lay = self.layout
        n = len(dataset)
        nt = lay.n_theta
        k = len(variant.alpha_names)
        self.n_games, self.n_loc, self.n_alpha = n, nt + k, k

        home_idx = np.empty(n, dtype=np.int64)
        away_idx = np.empty(n, dtype=np.int64)
        alpha_cols = np.zeros((n, k))
        y = np.empty(n)
        for g, (game, ind) in enumerate(zip(dataset.games, dataset.indicators)):
            home_idx[g] = lay.theta_index(game.season, game.home_team)
            away_idx[g] = lay.theta_index(game.season, game.away_team)
            ha = 0.0 if game.neutral_site else 1.0
            row = [ha * season_covariate(game.season), ha, ind.mnf, ind.mini]
            if variant.split:
                pre = game.season < CBA_SEASON
                row += [ind.bye if pre else 0, 0 if pre else ind.bye]
            else:
                row.append(ind.bye)
            alpha_cols[g] = row
            if variant.outcome is Outcome.POINT_DIFFERENTIAL:
                y[g] = game.home_margin
            else:
                y[g] = game.spread_home_margin
        if not np.all(np.isfinite(y)):
            raise ValueError("outcome column has missing values")
        self.y = y
        self.home_idx, self.away_idx, self.alpha_cols = home_idx, away_idx, alpha_cols

        rows = np.repeat(np.arange(n), 2 + k)
        cols = np.column_stack([home_idx, away_idx, np.tile(np.arange(nt, nt + k), (n, 1))]).ravel()
        vals = np.column_stack([np.ones(n), -np.ones(n), alpha_cols]).ravel()
        self.X = sparse.csr_matrix((vals, (rows, cols)), shape=(n, nt + k))
        xtx = (self.X.T @ self.X).toarray()
        self.xtx = xtx
        self.xty = self.X.T @ y
        # upper banded storage of X'X restricted to strengths: ab[u + i - j, j] = A[i, j]
        u = lay.n_teams
        self.bandwidth = u
        band = np.zeros((u + 1, nt))
        for off in range(u + 1):
            band[u - off, off:] = np.diagonal(xtx[:nt, :nt], offset=off)
        self.xtx_band = band

    def mean(self, location: np.ndarray) -> np.ndarray:
        return self.X @ location

    def residuals(self, location: np.ndarray) -> np.ndarray:
        return self.y - self.X @ location


def _as_design(data, variant, layout=None):
    if isinstance(data, Design):
        if data.variant != variant:
            raise ValueError(f"design built for {data.variant}, not {variant}")
        return data
    return Design(data, variant, layout)


def _normal_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    return -0.5 * LOG_2PI - math.log(sd) - 0.5 * (x / sd) ** 2


def _halfnormal_logpdf(x, sd):
    return math.log(2.0) + float(_normal_logpdf(x, sd))


def pointwise_loglik(params: ParameterVector, data, variant: ModelVariant) -> np.ndarray:
    design = _as_design(data, variant)
    return pointwise_loglik_location(params.location(variant), params.sigma_game, design)


def pointwise_loglik_location(location, sigma_game, design: Design) -> np.ndarray:
    if sigma_game <= 0:
        return np.full(design.n_games, -np.inf)
    r = design.residuals(location)
    return -0.5 * LOG_2PI - math.log(sigma_game) - 0.5 * (r / sigma_game) ** 2


def log_likelihood(params: ParameterVector, data, variant: ModelVariant) -> float:
    if params.sigma_game <= 0:
        return -math.inf
    return float(np.sum(pointwise_loglik(params, data, variant)))


def theta_innovations(theta: np.ndarray, gamma: float) -> np.ndarray:
    """Season-to-season innovations theta[:, s] - gamma * theta[:, s-1]."""
    return theta[:, 1:] - gamma * theta[:, :-1]


def log_prior(params: ParameterVector, variant: ModelVariant, priors: PriorConfig = PriorConfig()) -> float:
    if not (0.0 <= params.gamma <= 1.0) or params.sigma_teamstrength <= 0 or params.sigma_game <= 0:
        return -math.inf
    theta = np.asarray(params.theta, dtype=float)
    s_ts = params.sigma_teamstrength
    init_sd = s_ts if priors.theta_init_uses_sigma_teamstrength else priors.theta_init_sd
    lp = float(np.sum(_normal_logpdf(theta[:, 0], init_sd)))
    lp += float(np.sum(_normal_logpdf(theta_innovations(theta, params.gamma), s_ts)))
    lp += _halfnormal_logpdf(s_ts, priors.sigma_halfnormal_sd)
    lp += _halfnormal_logpdf(params.sigma_game, priors.sigma_halfnormal_sd)
    # Uniform(0, 1) on gamma contributes log(1) = 0
    lp += float(np.sum(_normal_logpdf(params.alphas(variant), priors.alpha_sd)))
    return lp


def log_posterior(params: ParameterVector, data, variant: ModelVariant,
                  priors: PriorConfig = PriorConfig()) -> float:
    lp = log_prior(params, variant, priors)
    if not math.isfinite(lp):
        return -math.inf
    return lp + log_likelihood(params, data, variant)


# ---------------------------------------------------------------------------
# unconstrained coordinates: location, logit(gamma), log(sigma_ts), log(sigma_game)

def _logit(p):
    return math.log(p) - math.log1p(-p)


def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def to_unconstrained(params: ParameterVector, variant: ModelVariant) -> np.ndarray:
    if not (0.0 < params.gamma < 1.0) or params.sigma_teamstrength <= 0 or params.sigma_game <= 0:
        raise ValueError("parameters on or outside the support boundary")
    return np.concatenate([params.location(variant),
                           [_logit(params.gamma), math.log(params.sigma_teamstrength),
                            math.log(params.sigma_game)]])


def from_unconstrained(x, layout: Layout, variant: ModelVariant) -> ParameterVector:
    x = np.asarray(x, dtype=float)
    vals = x.copy()
    vals[-3] = _expit(x[-3])
    vals[-2] = math.exp(x[-2])
    vals[-1] = math.exp(x[-1])
    return ParameterVector.from_flat(vals, layout, variant)


def log_posterior_unconstrained(x, data, variant: ModelVariant, priors: PriorConfig = PriorConfig(),
                                layout: Layout = None) -> float:
    """Log posterior density of the unconstrained coordinates (Jacobian included)."""
    design = _as_design(data, variant, layout)
    params = from_unconstrained(x, design.layout, variant)
    lp = log_posterior(params, design, variant, priors)
    g = params.gamma
    if not (0.0 < g < 1.0):
        return -math.inf
    return lp + math.log(g) + math.log1p(-g) + x[-2] + x[-1]


def grad_log_posterior(params: ParameterVector, data, variant: ModelVariant,
                       priors: PriorConfig = PriorConfig()) -> np.ndarray:
    """Gradient of :func:`log_posterior_unconstrained` at ``params``.

    Raises
    ------
    ValueError
        If ``params`` is on the support boundary.
    """
    design = _as_design(data, variant)
    return _value_and_grad(to_unconstrained(params, variant), design, priors)[1]


def _value_and_grad(x, design: Design, priors: PriorConfig):
    lay = design.layout
    nt, k = lay.n_theta, design.n_alpha
    beta = x[:nt + k]
    gamma = _expit(x[-3])
    s_ts, s_g = math.exp(x[-2]), math.exp(x[-1])
    theta = beta[:nt].reshape(lay.n_seasons, lay.n_teams).T
    alpha = beta[nt:]

    r = design.residuals(beta)
    grad = np.empty_like(x)
    grad[:nt + k] = design.X.T @ r / s_g ** 2

    init_sd = s_ts if priors.theta_init_uses_sigma_teamstrength else priors.theta_init_sd
    innov = theta_innovations(theta, gamma)
    gt = np.zeros_like(theta)
    gt[:, 0] -= theta[:, 0] / init_sd ** 2
    gt[:, 1:] -= innov / s_ts ** 2
    gt[:, :-1] += gamma * innov / s_ts ** 2
    grad[:nt] += gt.T.ravel()
    grad[nt:nt + k] -= alpha / priors.alpha_sd ** 2

    n = design.n_games
    ssr = float(r @ r)
    ssq = float(np.sum(innov ** 2))
    n_ts = innov.size
    if priors.theta_init_uses_sigma_teamstrength:
        ssq += float(np.sum(theta[:, 0] ** 2))
        n_ts += theta.shape[0]
    hn = priors.sigma_halfnormal_sd
    grad[-1] = -n + ssr / s_g ** 2 - s_g ** 2 / hn ** 2 + 1.0
    grad[-2] = -n_ts + ssq / s_ts ** 2 - s_ts ** 2 / hn ** 2 + 1.0
    dgamma = float(np.sum(innov * theta[:, :-1])) / s_ts ** 2
    grad[-3] = dgamma * gamma * (1.0 - gamma) + 1.0 - 2.0 * gamma

    # value
    loglik = -n * (0.5 * LOG_2PI + math.log(s_g)) - 0.5 * ssr / s_g ** 2
    lp = float(np.sum(_normal_logpdf(theta[:, 0], init_sd)))
    lp += float(np.sum(_normal_logpdf(innov, s_ts)))
    lp += _halfnormal_logpdf(s_ts, hn) + _halfnormal_logpdf(s_g, hn)
    lp += float(np.sum(_normal_logpdf(alpha, priors.alpha_sd)))
    jac = math.log(gamma) + math.log1p(-gamma) + x[-2] + x[-1]
    return loglik + lp + jac, grad
