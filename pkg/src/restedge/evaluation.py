"""Posterior summaries, probability statements and PSIS-LOO model comparison."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import Design, season_covariate

SUMMARY_COLUMNS = ("param", "median", "ci_low", "ci_high", "prob_gt_zero")
K_WARN = 0.7


@dataclass(frozen=True)
class PosteriorSummary:
    param: str
    median: float
    ci_low: float
    ci_high: float
    prob_gt_zero: float

    def as_row(self):
        return {"param": self.param, "median": self.median, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "prob_gt_zero": self.prob_gt_zero}

    def label(self):
        return (f"P(>0) = {self.prob_gt_zero:.3f}\n"
                f"{self.median:+.2f} [{self.ci_low:.2f}, {self.ci_high:.2f}]")


def summarize_values(name, values, level=0.95) -> PosteriorSummary:
    """Median, equal-tailed interval (linear interpolation) and P(value > 0)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError(f"no draws for {name}")
    tail = 100 * (1 - level) / 2
    lo, med, hi = np.percentile(v, [tail, 50.0, 100 - tail])
    return PosteriorSummary(name, float(med), float(lo), float(hi), float(np.mean(v > 0)))


def summarize(draws, param) -> PosteriorSummary:
    """Summary of one named parameter pooled across chains.

    ``draws`` may also be a plain array of values.
    """
    if isinstance(draws, (np.ndarray, list, tuple)):
        return summarize_values(param, draws)
    return summarize_values(param, draws.pooled(param))


def prob_comparison(draws, param_a, param_b, draws_b=None):
    """Drawwise ``(Pr(a < b), Pr(a > b))``; both parameters must come from one fit."""
    if draws_b is not None and draws_b is not draws:
        raise ValueError("probability comparisons need both parameters from the same fit")
    a, b = draws.pooled(param_a), draws.pooled(param_b)
    return float(np.mean(a < b)), float(np.mean(a > b))


def home_advantage_draws(draws, season):
    draws.layout.season_index(season)
    return draws.pooled("alpha_ha_trend") * season_covariate(season) + draws.pooled("alpha_ha_intercept")


def home_advantage_summary(draws, season) -> PosteriorSummary:
    return summarize_values(f"mu_ha[{season}]", home_advantage_draws(draws, season))


def team_strength_path(draws, team) -> np.ndarray:
    """Posterior mean strength of ``team`` in each season of the fit."""
    if team not in draws.layout.teams:
        raise KeyError(f"unknown team {team!r}")
    return np.array([draws.pooled(f"theta[{team},{s}]").mean() for s in draws.layout.seasons])


def write_summaries(summaries, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for s in summaries:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in s.as_row().items()})


# ---------------------------------------------------------------------------
# PSIS-LOO

def gpd_fit_pwm(x):
    """Probability-weighted-moment fit of a generalized Pareto to exceedances ``x``.

    Returns ``(k, sigma)`` with ``k > 0`` meaning a heavy tail.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    p = (np.arange(1, n + 1) - 0.35) / n
    a0 = float(np.mean(x))
    a1 = float(np.mean((1.0 - p) * x))
    denom = a0 - 2.0 * a1
    if denom <= 0 or a0 <= 0:
        return math.inf, math.nan
    kappa = a0 / denom - 2.0
    sigma = 2.0 * a0 * a1 / denom
    return -kappa, sigma


def gpd_quantile(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma / k * ((1.0 - p) ** (-k) - 1.0)


def default_tail_length(n_draws):
    return int(math.ceil(min(0.2 * n_draws, 3.0 * math.sqrt(n_draws))))


def psis_smooth(log_ratios, tail_len=None):
    """Pareto-smooth one vector of log importance ratios.

    Returns ``(log_weights, k_hat)``; ``k_hat`` is NaN when the tail is
    degenerate (fewer than 5 points or all equal) and no smoothing happens.
    """
    lr = np.asarray(log_ratios, dtype=float)
    S = lr.size
    M = default_tail_length(S) if tail_len is None else int(tail_len)
    lw = lr - lr.max()
    if M < 5 or M >= S:
        return lw, math.nan
    order = np.argsort(lw, kind="stable")
    cutoff = lw[order[S - M - 1]]
    tail_idx = order[S - M:]
    tail = lw[tail_idx]
    if np.all(tail == tail[0]) or tail[-1] <= cutoff:
        return lw, math.nan
    exp_cut = math.exp(cutoff)
    k, sigma = gpd_fit_pwm(np.exp(tail) - exp_cut)
    if not (math.isfinite(k) and math.isfinite(sigma) and sigma > 0):
        return lw, k
    probs = (np.arange(1, M + 1) - 0.5) / M
    smoothed = np.log(gpd_quantile(probs, k, sigma) + exp_cut)
    out = lw.copy()
    out[tail_idx] = np.minimum(smoothed, 0.0)
    return out, k


@dataclass
class ElpdReport:
    pointwise: np.ndarray
    pareto_k: np.ndarray
    label: str = ""

    @property
    def n(self):
        return self.pointwise.size

    @property
    def elpd(self):
        return float(np.sum(self.pointwise))

    @property
    def se(self):
        n = self.n
        return float(math.sqrt(n * np.var(self.pointwise, ddof=1))) if n > 1 else 0.0

    def n_bad_k(self, threshold=K_WARN):
        return int(np.sum(self.pareto_k > threshold))


@dataclass(frozen=True)
class ElpdComparison:
    diff: float
    se: float
    num_se: float


def psis_loo(loglik, tail_len=None, label="") -> ElpdReport:
    """PSIS-LOO from a draws x observations log-likelihood matrix."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("log-likelihood must be a 2-d (draws, observations) array")
    S, n = ll.shape
    if S < 100:
        raise ValueError(f"need at least 100 draws, got {S}")
    bad = np.flatnonzero(~np.all(np.isfinite(ll), axis=0))
    if bad.size:
        raise ValueError(f"non-finite log-likelihood for observation(s) {bad[:10].tolist()}")
    elpd = np.empty(n)
    khat = np.empty(n)
    for g in range(n):
        lw, k = psis_smooth(-ll[:, g], tail_len)
        elpd[g] = logsumexp(lw + ll[:, g]) - logsumexp(lw)
        khat[g] = k
    report = ElpdReport(elpd, khat, label)
    n_bad = report.n_bad_k()
    if n_bad:
        warnings.warn(f"{n_bad} observation(s) with Pareto k > {K_WARN}", RuntimeWarning, stacklevel=2)
    return report


def loo_from_draws(draws, design: Design, chunk=256, tail_len=None) -> ElpdReport:
    """PSIS-LOO for a fitted model, building the log-likelihood matrix in game chunks."""
    if draws.variant != design.variant:
        raise ValueError("draws and design are for different models")
    if draws.dataset_digest and draws.dataset_digest != design.digest:
        raise ValueError("draws were fit on a different game set")
    flat = draws.draws.reshape(-1, draws.draws.shape[-1])
    nloc = design.n_loc
    loc = flat[:, :nloc]
    sigma = flat[:, -1]
    pw, kh = [], []
    X = design.X.tocsc()
    for start in range(0, design.n_games, chunk):
        stop = min(start + chunk, design.n_games)
        mean = (X[start:stop] @ loc.T).T
        resid = design.y[start:stop][None, :] - mean
        ll = -0.5 * math.log(2 * math.pi) - np.log(sigma)[:, None] - 0.5 * (resid / sigma[:, None]) ** 2
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = psis_loo(ll, tail_len)
        pw.append(rep.pointwise)
        kh.append(rep.pareto_k)
    report = ElpdReport(np.concatenate(pw) if pw else np.zeros(0),
                        np.concatenate(kh) if kh else np.zeros(0), f"model {draws.variant.number}")
    n_bad = report.n_bad_k()
    if n_bad:
        warnings.warn(f"{n_bad} observation(s) with Pareto k > {K_WARN}", RuntimeWarning, stacklevel=2)
    return report


def elpd_compare(report_a: ElpdReport, report_b: ElpdReport) -> ElpdComparison:
    """ELPD of ``a`` minus ``b`` with the standard error of the paired difference."""
    if report_a.n != report_b.n:
        raise ValueError(f"reports cover different game sets ({report_a.n} vs {report_b.n})")
    d = report_a.pointwise - report_b.pointwise
    diff = float(np.sum(d))
    se = float(math.sqrt(d.size * np.var(d, ddof=1))) if d.size > 1 else 0.0
    num_se = abs(diff) / se if se > 0 else 0.0
    return ElpdComparison(diff, se, num_se)


# ---------------------------------------------------------------------------
# figure data

FIGURE_COLUMNS = ("param", "stat", "bin_left", "bin_right", "value")
BOX_STATS = ("whisker_low", "q1", "median", "q3", "whisker_high")
N_BINS = 100


def boxplot_stats(values):
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = float(v[v >= q1 - 1.5 * iqr].min())
    hi = float(v[v <= q3 + 1.5 * iqr].max())
    return dict(zip(BOX_STATS, (lo, float(q1), float(med), float(q3), hi)))


def figure_rows(values_by_param):
    rows = []
    for name, values in values_by_param.items():
        v = np.asarray(values, dtype=float)
        for stat, val in boxplot_stats(v).items():
            rows.append((name, stat, None, None, val))
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            hi = lo + 1.0
        dens, edges = np.histogram(v, bins=N_BINS, range=(lo, hi), density=True)
        for d, left, right in zip(dens, edges[:-1], edges[1:]):
            rows.append((name, "bin", float(left), float(right), float(d)))
    return rows


def resolve_values(draws, name):
    """Pooled draws of a parameter or of a derived ``mu_ha[season]`` quantity."""
    if name.startswith("mu_ha[") and name.endswith("]"):
        return home_advantage_draws(draws, int(name[6:-1]))
    return draws.pooled(name)


def figure_export(draws, params, path):
    """Boxplot statistics and a 100-bin density histogram per parameter."""
    values = {p: resolve_values(draws, p) for p in params}
    rows = figure_rows(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIGURE_COLUMNS)
        for r in rows:
            w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in r])
    return len(rows)
