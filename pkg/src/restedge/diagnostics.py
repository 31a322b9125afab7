"""Convergence diagnostics: split R-hat, effective sample size, trace export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

RHAT_MAX = 1.01
ESS_MIN = 400.0


def _check_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("need an array of shape (chains >= 2, draws >= 4)")
    return x


def split_chains(x):
    """Split every chain into a first and a last half (odd middle draw dropped)."""
    x = _check_chains(x)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def split_rhat(x) -> float:
    """Classic split-chain potential scale reduction factor.

    Returns NaN (non-computable) when every split sequence is constant.
    """
    seqs = split_chains(x)
    n = seqs.shape[1]
    W = float(np.mean(np.var(seqs, axis=1, ddof=1)))
    if W <= 0.0:
        return math.nan
    B = n * float(np.var(np.mean(seqs, axis=1), ddof=1))
    var_plus = (n - 1) / n * W + B / n
    return math.sqrt(var_plus / W)


def _autocovariance(x):
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conjugate(f), n=size, axis=-1)[..., :n]
    return acov / n


def ess(x) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence.

    Capped at the total number of draws.  NaN for constant input.
    """
    x = _check_chains(x)
    m, n = x.shape
    acov = _autocovariance(x)
    W = float(np.mean(acov[:, 0])) * n / (n - 1)
    if W <= 0.0:
        return math.nan
    var_plus = W * (n - 1) / n + float(np.var(x.mean(axis=1), ddof=1))
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    total = 0.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    if tau <= 0:
        return float(m * n)
    return float(min(m * n / tau, m * n))


@dataclass
class ConvergenceReport:
    rhat: dict
    ess: dict
    divergences: tuple = ()
    rhat_max: float = RHAT_MAX
    ess_min: float = ESS_MIN
    gated: tuple = ()

    def failures(self):
        """Gated parameters that miss a threshold (non-computable counts as a miss)."""
        bad = []
        for name in self.gated:
            r, e = self.rhat[name], self.ess[name]
            if not (r < self.rhat_max) or not (e > self.ess_min):
                bad.append(name)
        return bad

    @property
    def passed(self):
        return not self.failures()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param", "rhat", "ess"])
            for name in self.rhat:
                w.writerow([name, _fmt(self.rhat[name]), _fmt(self.ess[name])])


def _fmt(v):
    return "NON_COMPUTABLE" if not math.isfinite(v) else f"{v:.6g}"


def headline_params(draws):
    return [n for n in draws.names if not n.startswith("theta[")]


def convergence_report(draws, params=None, gated=None, rhat_max=RHAT_MAX, ess_min=ESS_MIN):
    """R-hat and ESS for ``params`` (default: every non-strength parameter).

    ``gated`` defaults to the alpha (rest / home advantage) parameters.
    """
    params = list(params) if params is not None else headline_params(draws)
    if gated is None:
        gated = [p for p in params if p.startswith("alpha_")]
    rh, es = {}, {}
    for name in params:
        chains = draws.get(name)
        rh[name] = split_rhat(chains)
        es[name] = ess(chains)
    return ConvergenceReport(rh, es, tuple(draws.divergences), rhat_max, ess_min, tuple(gated))


def trace_export(draws, params, path):
    """Write ``param,chain,iteration,value`` rows for the requested parameters."""
    params = list(params)
    missing = [p for p in params if p not in draws.names]
    if missing:
        available = headline_params(draws) + ["theta[TEAM,SEASON]"]
        raise KeyError(f"unknown parameters {missing}; available: {', '.join(available)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "chain", "iteration", "value"])
        for name in params:
            chains = draws.get(name)
            for c in range(chains.shape[0]):
                for i, v in enumerate(chains[c]):
                    w.writerow([name, c, i, repr(float(v))])
