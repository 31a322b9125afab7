"""Shared fixtures: literal reference tables and tiny hand-built datasets."""

import datetime as dt
import os
from pathlib import Path

import numpy as np
import pytest

from restedge.model import Layout, ModelVariant, ParameterVector
from restedge.schedule import GameRecord, RestIndicators, RestProfile, SeasonDataset

# home rest, away rest, bye, mini, mnf, games (transcribed independently of the package)
REST_TABLE_TEXT = """
4 4 0 0 0 243
5 5 0 0 0 6
6 6 0 0 0 86
7 7 0 0 0 2839
8 8 0 0 0 250
10 10 0 0 0 3
11 11 0 0 0 1
14 14 0 0 0 35
15 15 0 0 0 4
5 6 0 0 -1 2
6 5 0 0 1 2
6 7 0 0 -1 340
7 6 0 0 1 250
7 8 0 0 0 44
8 7 0 0 0 47
8 9 0 0 0 6
9 8 0 0 0 2
10 9 0 0 0 1
13 12 0 0 0 1
13 14 0 0 0 6
14 13 0 0 0 3
6 8 0 0 -1 10
7 9 0 -1 0 6
8 6 0 0 1 3
8 10 0 -1 0 6
9 7 0 1 0 2
10 8 0 1 0 2
6 9 0 -1 -1 5
7 10 0 -1 0 217
8 11 0 -1 0 33
9 6 0 1 1 6
10 7 0 1 0 164
10 13 -1 1 0 4
11 8 0 1 0 21
13 10 1 -1 0 2
6 10 0 -1 -1 23
7 11 0 -1 0 1
10 6 0 1 1 14
10 14 -1 1 0 6
11 7 0 1 0 1
11 15 -1 1 0 4
14 10 1 -1 0 7
15 11 1 -1 0 3
7 13 -1 0 0 22
13 7 1 0 0 22
6 13 -1 0 -1 4
7 14 -1 0 0 206
8 15 -1 0 0 24
13 6 1 0 1 1
14 7 1 0 0 223
15 8 1 0 0 25
6 14 -1 0 -1 26
14 6 1 0 1 14
"""

REST_TABLE = tuple(tuple(int(v) for v in line.split()) for line in REST_TABLE_TEXT.strip().splitlines())

# side, type, era, n, point diff, win pct, expected win pct, cover pct
SUMMARY_REFERENCE = (
    ("Away", "Equivalent Rest", "2002-10", 1671, -2.689, 0.423, 0.432, 0.511),
    ("Away", "Equivalent Rest", "2011-23", 2261, -1.826, 0.447, 0.449, 0.513),
    ("Away", "Equivalent Rest", "All", 3932, -2.193, 0.437, 0.442, 0.512),
    ("Away", "MNF Rest", "2002-10", 158, -4.380, 0.405, 0.380, 0.547),
    ("Away", "MNF Rest", "2011-23", 252, -3.333, 0.421, 0.439, 0.498),
    ("Away", "MNF Rest", "All", 410, -3.737, 0.415, 0.416, 0.517),
    ("Away", "Mini (TNF) Rest", "2002-10", 70, 0.857, 0.529, 0.461, 0.500),
    ("Away", "Mini (TNF) Rest", "2011-23", 233, -2.082, 0.431, 0.451, 0.509),
    ("Away", "Mini (TNF) Rest", "All", 303, -1.403, 0.454, 0.454, 0.507),
    ("Away", "Bye Rest", "2002-10", 109, -0.248, 0.459, 0.441, 0.569),
    ("Away", "Bye Rest", "2011-23", 187, -1.684, 0.473, 0.456, 0.527),
    ("Away", "Bye Rest", "All", 296, -1.155, 0.468, 0.450, 0.542),
    ("Home", "Equivalent Rest", "2002-10", 1671, 2.689, 0.577, 0.568, 0.489),
    ("Home", "Equivalent Rest", "2011-23", 2261, 1.826, 0.553, 0.551, 0.487),
    ("Home", "Equivalent Rest", "All", 3932, 2.193, 0.563, 0.558, 0.488),
    ("Home", "MNF Rest", "2002-10", 126, -0.349, 0.540, 0.528, 0.472),
    ("Home", "MNF Rest", "2011-23", 164, 3.341, 0.561, 0.559, 0.518),
    ("Home", "MNF Rest", "All", 290, 1.738, 0.552, 0.545, 0.498),
    ("Home", "Mini (TNF) Rest", "2002-10", 42, 1.048, 0.452, 0.546, 0.488),
    ("Home", "Mini (TNF) Rest", "2011-23", 181, 3.840, 0.561, 0.578, 0.514),
    ("Home", "Mini (TNF) Rest", "All", 223, 3.314, 0.540, 0.572, 0.509),
    ("Home", "Bye Rest", "2002-10", 139, 4.453, 0.651, 0.576, 0.558),
    ("Home", "Bye Rest", "2011-23", 158, 1.759, 0.589, 0.588, 0.446),
    ("Home", "Bye Rest", "All", 297, 3.020, 0.618, 0.582, 0.498),
)

FULL_GAMES_ENV = "RESTEDGE_GAMES_2002_2023"


def full_games_path():
    """Path to a games CSV for the full 2002-2023 sample, if one was provided."""
    value = os.environ.get(FULL_GAMES_ENV, "")
    return Path(value) if value and Path(value).is_file() else None


def make_game(season, home, away, margin, day=0, week=1, neutral=False, spread=None,
              home_ml=None, away_ml=None):
    home_score = max(margin, 0.0) + 10.0
    away_score = home_score - margin
    return GameRecord(
        season=season, week=week, kickoff_date=dt.date(season, 9, 10) + dt.timedelta(days=day),
        home_team=home, away_team=away, home_score=home_score, away_score=away_score,
        spread_home_margin=margin if spread is None else spread,
        home_moneyline=home_ml, away_moneyline=away_ml, neutral_site=neutral,
    )


def make_dataset(rows):
    """Dataset from ``(season, home, away, margin, bye, mini, mnf, neutral)`` tuples."""
    games, rests, inds = [], [], []
    for i, (season, home, away, margin, bye, mini, mnf, neutral) in enumerate(rows):
        games.append(make_game(season, home, away, margin, day=i, week=i + 1, neutral=neutral))
        rests.append(RestProfile(7, 7))
        inds.append(RestIndicators(bye, mini, mnf))
    return SeasonDataset(games=tuple(games), rests=tuple(rests), indicators=tuple(inds),
                         loaded=len(games))


def random_dataset(rng, teams, seasons, n_games, neutral_rate=0.1):
    rows = []
    for _ in range(n_games):
        season = int(rng.choice(seasons))
        home, away = rng.choice(teams, size=2, replace=False)
        bye, mini, mnf = (int(v) for v in rng.choice([-1, 0, 0, 1], size=3))
        rows.append((season, str(home), str(away), float(rng.normal(2.0, 10.0)),
                     bye, mini, mnf, bool(rng.uniform() < neutral_rate)))
    return make_dataset(rows)


def random_params(rng, layout: Layout, variant: ModelVariant, interior=True):
    alphas = rng.normal(0.0, 2.0, size=len(variant.alpha_names))
    return ParameterVector(
        theta=rng.normal(0.0, 3.0, size=(layout.n_teams, layout.n_seasons)),
        gamma=float(rng.uniform(0.05, 0.95)) if interior else float(rng.uniform()),
        sigma_teamstrength=float(rng.uniform(0.5, 6.0)),
        sigma_game=float(rng.uniform(2.0, 15.0)),
        **dict(zip(variant.alpha_names, alphas.tolist())),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(7)
    return random_dataset(rng, ["BUF", "MIA", "NE", "NYJ"], [2010, 2011], 20)


# ---------------------------------------------------------------------------
# one summary line per acceptance criterion

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not (report.skipped or report.failed)):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": 0, "failed": 0, "skipped": 0, "notes": []})
    if report.skipped:
        entry["skipped"] += 1
        if isinstance(report.longrepr, tuple):
            entry["notes"].append(report.longrepr[2].removeprefix("Skipped: "))
    elif report.failed:
        entry["failed"] += 1
        entry["notes"].append(item.name)
    else:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        if e["failed"]:
            status = "FAIL"
        elif e["passed"]:
            status = "PASS"
        else:
            status = "SKIP"
        checks = f"{e['passed']} passed, {e['failed']} failed, {e['skipped']} skipped"
        notes = sorted(set(e["notes"]))
        line = f"criterion {number:>2} {status}: {e['title']} ({checks})"
        if notes:
            line += " - " + "; ".join(notes)
        terminalreporter.write_line(line)
