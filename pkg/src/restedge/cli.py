"""Command-line pipeline: ingest, fit, diagnose, compare, report, simulate.

Settings come from built-in defaults, then an optional flat ``key = value``
file (``--config``), then command-line flags.  Every command writes the
resolved settings to ``<out>/run_config.txt``.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

from . import diagnostics, evaluation, plotting, schedule, simulate
from .model import Design, Layout, ModelVariant, ParameterVector, PriorConfig
from .sampler import (
    Algorithm,
    ChainConfig,
    SamplerError,
    read_draws_bin,
    run_chains,
    write_draws_bin,
    write_draws_csv,
)
from .teams import AFC_EAST

log = logging.getLogger("restedge")

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    games: str = ""
    drops: str = "builtin"
    out: str = "out"
    model: int = 2
    seed: int = 20240901
    chains: int = 4
    iterations: int = 3000
    burnin: int = 1000
    algorithm: str = "gibbs"
    jobs: int = 1
    csv: bool = True
    allow_unconverged: bool = False
    params: str = ""
    # empty: first and last season of each fit
    seasons: str = ""
    teams: str = ",".join(AFC_EAST)
    # simulate
    sim_teams: int = 32
    sim_seasons: int = 22
    sim_first_season: int = 2002
    sim_games: int = 256
    gamma: float = 0.6
    sigma_teamstrength: float = 4.0
    sigma_game: float = 13.0
    alpha_ha_trend: float = -0.05
    alpha_ha_intercept: float = 2.0
    alpha_mnf: float = 0.2
    alpha_mini: float = 0.4
    alpha_bye: float = 1.1
    alpha_bye_pre: float = 2.2
    alpha_bye_post: float = 0.3

    def update(self, values: dict):
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown setting {key!r}")
            kind = types[key]
            try:
                if kind == "bool":
                    value = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
                elif kind == "int":
                    value = int(raw)
                elif kind == "float":
                    value = float(raw)
                else:
                    value = str(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
            setattr(self, key, value)

    def write(self, path):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    def chain_config(self):
        try:
            return ChainConfig(n_chains=self.chains, n_iterations=self.iterations, n_burnin=self.burnin,
                               seed=self.seed, algorithm=Algorithm(self.algorithm), n_jobs=self.jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def variant(self):
        try:
            return ModelVariant.from_number(self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def param_list(self, default):
        if self.params.strip() == "-":
            return []
        if not self.params.strip():
            return list(default)
        return [p.strip() for p in self.params.split(",") if p.strip()]


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[run]\n" + path.read_text())
    return dict(parser["run"])


# ---------------------------------------------------------------------------
# commands

def _out_dir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    cfg.write(out / "run_config.txt")
    return out


def _drops(cfg):
    value = cfg.drops.strip()
    if value.lower() in ("", "none"):
        return None
    if value.lower() == "builtin":
        return schedule.builtin_drop_list()
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"drops file not found: {path}")
    return schedule.load_drops(path)


def _dataset(cfg):
    if not cfg.games:
        raise ConfigError("no games file given (--games)")
    path = Path(cfg.games)
    if not path.is_file():
        raise ConfigError(f"games file not found: {path}")
    drops = _drops(cfg)
    return schedule.prepare_dataset(path, drops)


def cmd_ingest(cfg):
    out = _out_dir(cfg)
    ds = _dataset(cfg)
    schedule.write_games(ds, out / "games_classified.csv")
    schedule.write_summary_table(schedule.summary_table(ds), out / "summary_table.csv")
    cats = ds.category_counts()
    print(f"loaded: {ds.loaded}, dropped: {ds.dropped}, modeled: {ds.modeled}")
    for name in ("mnf", "mini", "bye"):
        c = cats[name]
        print(f"{name}: home {c['home']}, away {c['away']}, total {c['home'] + c['away']}")
    openers = sum(1 for r in ds.rests or () if schedule.SEASON_OPENER in (r.home_rest, r.away_rest))
    print(f"season openers (no rest indicator): {openers}")
    for w in ds.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def cmd_fit(cfg):
    out = _out_dir(cfg)
    ds = _dataset(cfg)
    variant = cfg.variant()
    config = cfg.chain_config()
    design = Design(ds, variant)
    schedule.write_games(ds, out / "games_modeled.csv")
    print(f"fitting {variant} on {design.n_games} games, {config.n_chains} x {config.n_iterations} "
          f"({config.n_burnin} burn-in), {config.algorithm.value}")
    draws = run_chains(design, PriorConfig(), config)
    write_draws_bin(draws, out / "draws.bin")
    if cfg.csv:
        write_draws_csv(draws, out / "draws.csv")
    report = diagnostics.convergence_report(draws)
    report.write_csv(out / "convergence.csv")
    failures = report.failures()
    for name in report.gated:
        print(f"{name}: rhat {report.rhat[name]:.4f}, ess {report.ess[name]:.0f}")
    if failures:
        print(f"convergence gates failed for: {', '.join(failures)}", file=sys.stderr)
        if not cfg.allow_unconverged:
            return EXIT_COMPUTE
    return EXIT_OK


def _load_fit(path):
    path = Path(path)
    if not (path / "draws.bin").is_file():
        raise ConfigError(f"no draws.bin in {path}")
    return read_draws_bin(path / "draws.bin")


def _fit_design(fit_dir, draws):
    games = Path(fit_dir) / "games_modeled.csv"
    if not games.is_file():
        raise ConfigError(f"no games_modeled.csv in {fit_dir}")
    ds = schedule.load_games(games)
    return Design(ds, draws.variant, draws.layout)


def cmd_diagnose(cfg, fit_dirs):
    out = _out_dir(cfg)
    for fit_dir in fit_dirs:
        draws = _load_fit(fit_dir)
        m = draws.variant.number
        params = cfg.param_list(diagnostics.headline_params(draws))
        report = diagnostics.convergence_report(draws, params)
        report.write_csv(out / f"convergence_model{m}.csv")
        rest = [p for p in params if p.startswith("alpha_")]
        diagnostics.trace_export(draws, rest, out / f"trace_model{m}.csv")
        if rest:
            plotting.plot_traces(draws, rest, out / f"trace_model{m}.png", title=str(draws.variant))
        status = "converged" if report.passed else f"NOT converged ({', '.join(report.failures())})"
        print(f"model {m}: {status}; divergences {sum(draws.divergences)}")
    return EXIT_OK


def cmd_compare(cfg, fit_a, fit_b):
    out = _out_dir(cfg)
    reports = []
    digests = []
    for fit_dir in (fit_a, fit_b):
        draws = _load_fit(fit_dir)
        design = _fit_design(fit_dir, draws)
        digests.append(design.digest)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = evaluation.loo_from_draws(draws, design)
        for w in caught:
            print(f"warning (model {draws.variant.number}): {w.message}", file=sys.stderr)
        reports.append(rep)
    if digests[0] != digests[1]:
        raise ValueError("the two fits were run on different game sets")
    cmp = evaluation.elpd_compare(reports[0], reports[1])
    with open(out / "elpd.csv", "w") as fh:
        fh.write("model,elpd,se\n")
        for rep in reports:
            fh.write(f"{rep.label},{rep.elpd:.6f},{rep.se:.6f}\n")
    with open(out / "elpd_diff.csv", "w") as fh:
        fh.write("diff,se,num_se\n")
        fh.write(f"{cmp.diff:.6f},{cmp.se:.6f},{cmp.num_se:.6f}\n")
    print(f"{reports[0].label} - {reports[1].label}: diff {cmp.diff:.2f}, se {cmp.se:.2f}, #se {cmp.num_se:.2f}")
    return EXIT_OK


def cmd_report(cfg, fit_dirs):
    out = _out_dir(cfg)
    try:
        chosen = [int(s) for s in cfg.seasons.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seasons list {cfg.seasons!r}") from exc
    split_fits = {}
    probs = []
    for fit_dir in fit_dirs:
        draws = _load_fit(fit_dir)
        v = draws.variant
        m = v.number
        seasons = chosen or sorted({draws.layout.seasons[0], draws.layout.seasons[-1]})
        default = list(v.alpha_names) + [f"mu_ha[{s}]" for s in seasons]
        params = cfg.param_list(default)
        try:
            summaries = [evaluation.summarize_values(p, evaluation.resolve_values(draws, p)) for p in params]
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        evaluation.write_summaries(summaries, out / f"summary_model{m}.csv")
        evaluation.figure_export(draws, params, out / f"figure_model{m}.csv")
        if params:
            plotting.plot_posteriors(draws, params, out / f"posterior_model{m}.png", title=str(v))
        for s in summaries:
            print(f"model {m} {s.param}: median {s.median:+.2f} [{s.ci_low:.2f}, {s.ci_high:.2f}] "
                  f"P(>0) {s.prob_gt_zero:.3f}")
        if v.split:
            less, greater = evaluation.prob_comparison(draws, "alpha_bye_post", "alpha_bye_pre")
            probs.append((m, less, greater))
            label = "Point differential" if m == 2 else "Point spread"
            split_fits[label] = draws
        teams = [t for t in cfg.teams.split(",") if t.strip() and t in draws.layout.teams]
        if teams and m in (1, 2):
            with open(out / f"team_strength_model{m}.csv", "w") as fh:
                fh.write("team,season,mean\n")
                for t in teams:
                    for season, val in zip(draws.layout.seasons, evaluation.team_strength_path(draws, t)):
                        fh.write(f"{t},{season},{val:.6f}\n")
            plotting.plot_team_strength(draws, teams, out / f"team_strength_model{m}.png")
    with open(out / "probabilities.csv", "w") as fh:
        fh.write("model,comparison,probability\n")
        for m, less, greater in probs:
            fh.write(f"{m},alpha_bye_post<alpha_bye_pre,{less:.6f}\n")
            fh.write(f"{m},alpha_bye_post>alpha_bye_pre,{greater:.6f}\n")
            print(f"model {m}: Pr(post < pre) = {less:.3f}, Pr(post > pre) = {greater:.3f}")
    if split_fits:
        plotting.plot_bye_boxplot(split_fits, out / "bye_boxplot.png")
    return EXIT_OK


def cmd_simulate(cfg):
    out = _out_dir(cfg)
    try:
        template = simulate.ScheduleTemplate(n_teams=cfg.sim_teams, n_seasons=cfg.sim_seasons,
                                             first_season=cfg.sim_first_season,
                                             games_per_season=cfg.sim_games)
    except ValueError as exc:
        raise ConfigError(f"invalid template: {exc}") from exc
    variant = cfg.variant()
    bye = ({"alpha_bye_pre": cfg.alpha_bye_pre, "alpha_bye_post": cfg.alpha_bye_post} if variant.split
           else {"alpha_bye": cfg.alpha_bye})
    truth = ParameterVector(theta=None, gamma=cfg.gamma, sigma_teamstrength=cfg.sigma_teamstrength,
                            sigma_game=cfg.sigma_game, alpha_ha_trend=cfg.alpha_ha_trend,
                            alpha_ha_intercept=cfg.alpha_ha_intercept, alpha_mnf=cfg.alpha_mnf,
                            alpha_mini=cfg.alpha_mini, **bye)
    ds, truth = simulate.gen_dataset(truth, template, seed=cfg.seed)
    schedule.write_games(ds, out / "games.csv")
    simulate.write_truth(truth, template.layout(), out / "truth.csv")
    print(f"simulated {len(ds)} games over {template.n_seasons} seasons -> {out / 'games.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="restedge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value settings file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--model", type=int, choices=(1, 2, 3, 4))
        return sp

    def data(sp):
        sp.add_argument("--games", help="games CSV")
        sp.add_argument("--drops", help="drops CSV, 'builtin' (2002-2023 list) or 'none'")

    sp = common(sub.add_parser("ingest", help="classify rest and write the summary table"))
    data(sp)

    sp = common(sub.add_parser("fit", help="fit one model by MCMC"))
    data(sp)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burnin", type=int)
    sp.add_argument("--algorithm", choices=[a.value for a in Algorithm])
    sp.add_argument("--jobs", type=int, help="worker processes for chains")
    sp.add_argument("--no-csv", dest="csv", action="store_false", default=None,
                    help="skip the long-format draws CSV")
    sp.add_argument("--allow-unconverged", action="store_true", default=None)

    sp = common(sub.add_parser("diagnose", help="R-hat / ESS and trace exports"))
    sp.add_argument("fits", nargs="+", help="fit output directories")
    sp.add_argument("--params", help="comma-separated parameters ('-' for none)")

    sp = common(sub.add_parser("compare", help="PSIS-LOO ELPD comparison of two fits"))
    sp.add_argument("fit_a")
    sp.add_argument("fit_b")

    sp = common(sub.add_parser("report", help="posterior summaries, probabilities and figures"))
    sp.add_argument("fits", nargs="+")
    sp.add_argument("--params", help="comma-separated parameters ('-' for none)")
    sp.add_argument("--seasons", help="seasons for home-advantage summaries")
    sp.add_argument("--teams", help="teams for strength paths")

    sp = common(sub.add_parser("simulate", help="synthetic dataset from known parameters"))
    for name in ("sim-teams", "sim-seasons", "sim-first-season", "sim-games"):
        sp.add_argument(f"--{name}", type=int)
    for name in ("gamma", "sigma-teamstrength", "sigma-game", "alpha-ha-trend", "alpha-ha-intercept",
                 "alpha-mnf", "alpha-mini", "alpha-bye", "alpha-bye-pre", "alpha-bye-post"):
        sp.add_argument(f"--{name}", type=float)
    return p


_POSITIONAL = ("command", "config", "verbose", "fits", "fit_a", "fit_b")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.update(read_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if k not in _POSITIONAL and v is not None}
    cfg.update(flags)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, args.fits)
        if args.command == "compare":
            return cmd_compare(cfg, args.fit_a, args.fit_b)
        if args.command == "report":
            return cmd_report(cfg, args.fits)
        if args.command == "simulate":
            return cmd_simulate(cfg)
    except (ConfigError, schedule.ScheduleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SamplerError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
