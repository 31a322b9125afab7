"""Synthetic seasons from the generative model, and an exact Gaussian oracle."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    GameSpec,
    Layout,
    ModelVariant,
    ParameterVector,
    PriorConfig,
    ByeStructure,
    Outcome,
    expected_outcome,
)
from .schedule import TABLE1, _sort_key, GameRecord, RestProfile, SeasonDataset, classify_rest
from .teams import FRANCHISES

TrueParams = ParameterVector

# 65 neutral-site games over the 2002-2023 sample
NEUTRAL_RATE_2002_2023 = 65 / 5627


@dataclass(frozen=True)
class ScheduleTemplate:
    n_teams: int = 32
    n_seasons: int = 22
    first_season: int = 2002
    games_per_season: int = 256
    # ((home_rest, away_rest), weight) pairs; default follows the rest table counts
    rest_pairs: tuple = tuple(((r[0], r[1]), r[5]) for r in TABLE1)
    neutral_rate: float = NEUTRAL_RATE_2002_2023

    def __post_init__(self):
        if not 2 <= self.n_teams <= len(FRANCHISES):
            raise ValueError(f"n_teams must be in 2..{len(FRANCHISES)}")
        if self.n_seasons < 1 or self.games_per_season < 0:
            raise ValueError("need at least one season and a non-negative game count")
        if not 0.0 <= self.neutral_rate <= 1.0:
            raise ValueError("neutral_rate must be a probability")
        table_pairs = {(r[0], r[1]) for r in TABLE1}
        for pair, w in self.rest_pairs:
            if tuple(pair) not in table_pairs:
                raise ValueError(f"rest pair {pair} is not in the rest table")
            if w < 0:
                raise ValueError("rest pair weights must be non-negative")

    @property
    def teams(self):
        return FRANCHISES[:self.n_teams]

    @property
    def seasons(self):
        return tuple(range(self.first_season, self.first_season + self.n_seasons))

    def layout(self) -> Layout:
        return Layout(tuple(self.teams), self.seasons)


def simulate_theta(gamma, sigma_ts, n_teams, n_seasons, rng):
    theta = np.empty((n_teams, n_seasons))
    theta[:, 0] = sigma_ts * rng.standard_normal(n_teams)
    for s in range(1, n_seasons):
        theta[:, s] = gamma * theta[:, s - 1] + sigma_ts * rng.standard_normal(n_teams)
    return theta


def _variant_of(truth):
    bye = ByeStructure.CONSTANT if truth.alpha_bye is not None else ByeStructure.SPLIT_2011
    return ModelVariant(Outcome.POINT_DIFFERENTIAL, bye)


def gen_dataset(truth: TrueParams, template: ScheduleTemplate = ScheduleTemplate(), seed=0,
                simulate_strengths=True):
    """Simulate one dataset; returns ``(dataset, realized_truth)``.

    Strength paths follow the autoregressive law unless
    ``simulate_strengths`` is false, in which case ``truth.theta`` is used.
    The simulated outcome is written both as the score margin and as the
    spread, so any of the four models can be fit to it.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    layout = template.layout()
    if simulate_strengths:
        theta = simulate_theta(truth.gamma, truth.sigma_teamstrength, template.n_teams, template.n_seasons, rng)
        truth = dataclasses.replace(truth, theta=theta)
    variant = _variant_of(truth)

    pairs = [tuple(p) for p, _ in template.rest_pairs]
    weights = np.asarray([w for _, w in template.rest_pairs], dtype=float)
    weights = weights / weights.sum()
    per_week = template.n_teams // 2

    games, rests, inds = [], [], []
    for season in template.seasons:
        start = dt.date(season, 9, 7)
        n_left = template.games_per_season
        week = 0
        while n_left > 0:
            week += 1
            order = rng.permutation(template.n_teams)
            for m in range(min(per_week, n_left)):
                home, away = template.teams[order[2 * m]], template.teams[order[2 * m + 1]]
                h_rest, a_rest = pairs[rng.choice(len(pairs), p=weights)]
                ind = classify_rest(h_rest, a_rest)
                neutral = bool(rng.uniform() < template.neutral_rate)
                mean = expected_outcome(
                    truth, GameSpec(season, home, away, neutral, ind.bye, ind.mini, ind.mnf), variant, layout)
                y = mean + truth.sigma_game * rng.standard_normal()
                games.append(GameRecord(
                    season=season, week=week, kickoff_date=start + dt.timedelta(days=7 * (week - 1)),
                    home_team=home, away_team=away,
                    home_score=max(y, 0.0), away_score=max(-y, 0.0), spread_home_margin=y,
                    neutral_site=neutral,
                ))
                rests.append(RestProfile(h_rest, a_rest))
                inds.append(ind)
            n_left -= min(per_week, n_left)
    order = sorted(range(len(games)), key=lambda i: _sort_key(games[i]))
    ds = SeasonDataset(games=tuple(games[i] for i in order), rests=tuple(rests[i] for i in order),
                       indicators=tuple(inds[i] for i in order),
                       provenance=f"simulated:seed={seed}", loaded=len(games))
    return ds, truth


def write_truth(truth: TrueParams, layout: Layout, path):
    variant = _variant_of(truth)
    row = truth.as_row(layout, variant)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "value"])
        for k, v in row.items():
            writer.writerow([k, repr(float(v))])


def _design_by_probing(dataset, variant, layout):
    """Dense design built from the scalar mean function, one unit vector at a time."""
    names = layout.location_names(variant)
    p = len(names)
    nt = layout.n_theta
    X = np.zeros((len(dataset), p))
    specs = [GameSpec(g.season, g.home_team, g.away_team, g.neutral_site, i.bye, i.mini, i.mnf)
             for g, i in zip(dataset.games, dataset.indicators)]
    for j in range(p):
        unit = np.zeros(p + 3)
        unit[j] = 1.0
        unit[p:] = (0.5, 1.0, 1.0)
        params = ParameterVector.from_flat(unit, layout, variant)
        X[:, j] = [expected_outcome(params, s, variant, layout) for s in specs]
    return X, nt


def _prior_precision(layout, variant, gamma, sigma_ts, priors):
    nt = layout.n_theta
    k = len(variant.alpha_names)
    init_sd = sigma_ts if priors.theta_init_uses_sigma_teamstrength else priors.theta_init_sd
    rows = []
    for team in layout.teams:
        r = np.zeros(nt)
        r[layout.theta_index(layout.seasons[0], team)] = 1.0 / init_sd
        rows.append(r)
        for s_prev, s in zip(layout.seasons[:-1], layout.seasons[1:]):
            r = np.zeros(nt)
            r[layout.theta_index(s, team)] = 1.0 / sigma_ts
            r[layout.theta_index(s_prev, team)] = -gamma / sigma_ts
            rows.append(r)
    A = np.asarray(rows)
    P = np.zeros((nt + k, nt + k))
    P[:nt, :nt] = A.T @ A
    P[nt:, nt:] = np.eye(k) / priors.alpha_sd ** 2
    return P


def analytic_posterior(dataset: SeasonDataset, variant: ModelVariant, gamma, sigma_ts, sigma_game,
                       priors: PriorConfig = PriorConfig(), layout: Optional[Layout] = None):
    """Exact Gaussian posterior of the location parameters given fixed scales.

    Returns ``(mean, cov, names)``; meant for small instances (dense solve).
    """
    layout = layout or Layout.from_dataset(dataset)
    names = layout.location_names(variant)
    if len(names) > 400:
        raise ValueError(f"{len(names)} location parameters is too many for a dense oracle")
    X, _ = _design_by_probing(dataset, variant, layout)
    if variant.outcome is Outcome.POINT_DIFFERENTIAL:
        y = np.array([g.home_margin for g in dataset.games], dtype=float)
    else:
        y = np.array([g.spread_home_margin for g in dataset.games], dtype=float)
    P = _prior_precision(layout, variant, gamma, sigma_ts, priors)
    Q = X.T @ X / sigma_game ** 2 + P
    try:
        cov = np.linalg.inv(Q)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"posterior precision is singular: {exc}") from exc
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (X.T @ y) / sigma_game ** 2
    return mean, cov, names
