"""Matplotlib renderings of the report outputs (PNG files)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import resolve_values, summarize_values, team_strength_path

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}

# boxplot's `vert` flag gave way to `orientation` in matplotlib 3.10
_MPL = tuple(int(p) for p in matplotlib.__version__.split(".")[:2])
_HORIZONTAL = {"orientation": "horizontal"} if _MPL >= (3, 10) else {"vert": False}

LABELS = {
    "alpha_bye": "Bye",
    "alpha_bye_pre": "Bye, pre-2011",
    "alpha_bye_post": "Bye, post-2011",
    "alpha_mini": "Mini",
    "alpha_mnf": "MNF",
    "alpha_ha_trend": "HA trend",
    "alpha_ha_intercept": "HA intercept",
}


def _label(name):
    if name.startswith("mu_ha["):
        return f"Home advantage {name[6:-1]}"
    return LABELS.get(name, name)


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_posteriors(draws, params, path, title=""):
    """One histogram panel per parameter, labelled with P(>0), median and 95% interval."""
    params = list(params)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(params), 1, figsize=(6, 1.3 * max(len(params), 1)),
                                 sharex=True, squeeze=False)
        for ax, name in zip(axes[:, 0], params):
            v = resolve_values(draws, name)
            s = summarize_values(name, v)
            ax.hist(v, bins=80, color="0.55", density=True)
            ax.axvline(0.0, color="k", lw=0.6, ls=":")
            ax.axvline(s.median, color="C0", lw=1.0)
            ax.set_yticks([])
            ax.set_ylabel(_label(name), rotation=0, ha="right", va="center")
            ax.text(0.99, 0.9, s.label(), transform=ax.transAxes, ha="right", va="top", fontsize=7)
        axes[-1, 0].set_xlabel("Points per game")
        if title:
            axes[0, 0].set_title(title)
        return _save(fig, path)


def plot_traces(draws, params, path, title=""):
    params = list(params)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(params), 1, figsize=(7, 1.2 * max(len(params), 1)),
                                 sharex=True, squeeze=False)
        for ax, name in zip(axes[:, 0], params):
            chains = draws.get(name)
            for c in range(chains.shape[0]):
                ax.plot(chains[c], lw=0.3, alpha=0.7)
            ax.set_ylabel(_label(name), rotation=0, ha="right", va="center")
        axes[-1, 0].set_xlabel("Iteration (post burn-in)")
        if title:
            axes[0, 0].set_title(title)
        return _save(fig, path)


def plot_bye_boxplot(fits, path):
    """Bye-advantage draws pre/post 2011 for each split-bye fit.

    ``fits`` maps a label (e.g. "Point differential") to its draws.
    """
    data, labels, colors = [], [], []
    palette = ("#9ecae1", "0.25", "C2", "C3")
    for i, (label, draws) in enumerate(fits.items()):
        for name in ("alpha_bye_pre", "alpha_bye_post"):
            data.append(draws.pooled(name))
            labels.append(f"{label}\n{_label(name)}")
            colors.append(palette[i % len(palette)])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        if data:
            box = ax.boxplot(data, patch_artist=True, showfliers=False, **_HORIZONTAL)
            for patch, c in zip(box["boxes"], colors):
                patch.set_facecolor(c)
            ax.set_yticks(range(1, len(labels) + 1), labels)
        ax.axvline(0.0, color="k", lw=0.6, ls=":")
        ax.set_xlabel("Bye advantage (points per game)")
        return _save(fig, path)


def plot_team_strength(draws, teams, path):
    seasons = np.asarray(draws.layout.seasons)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        for team in teams:
            ax.plot(seasons, team_strength_path(draws, team), marker="o", ms=2.5, lw=1.0, label=team)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xlabel("Season")
        ax.set_ylabel("Points above average")
        ax.legend(ncol=len(teams))
        return _save(fig, path)
