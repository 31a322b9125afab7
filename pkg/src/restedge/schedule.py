"""Game ingestion, rest-day bookkeeping and rest-category classification.

The games CSV carries one regular-season game per row::

    season,week,date,home,away,home_score,away_score,spread_home_margin,home_ml,away_ml,neutral

``spread_home_margin`` is the market's expected home margin (positive when
the home side is favored).  Moneylines are American odds and may be blank.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import io
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .teams import canonical_team

log = logging.getLogger(__name__)

FIRST_SEASON = 2002
LAST_SEASON = 2023
CBA_SEASON = 2011

# Rest value assigned to a team's first game of a season.
SEASON_OPENER = 0

GAMES_COLUMNS = (
    "season", "week", "date", "home", "away", "home_score", "away_score",
    "spread_home_margin", "home_ml", "away_ml", "neutral",
)
CLASSIFIED_COLUMNS = GAMES_COLUMNS + ("home_rest", "away_rest", "bye", "mini", "mnf", "unclassified")
DROPS_COLUMNS = ("season", "week", "home", "away", "reason")
DROP_REASONS = ("Rescheduled", "GameAfterRescheduled", "Cancelled", "GameAfterCancelled")

# (home rest, away rest, bye, mini, mnf, games in the 2002-2023 sample)
TABLE1 = (
    (4, 4, 0, 0, 0, 243), (5, 5, 0, 0, 0, 6), (6, 6, 0, 0, 0, 86),
    (7, 7, 0, 0, 0, 2839), (8, 8, 0, 0, 0, 250), (10, 10, 0, 0, 0, 3),
    (11, 11, 0, 0, 0, 1), (14, 14, 0, 0, 0, 35), (15, 15, 0, 0, 0, 4),
    (5, 6, 0, 0, -1, 2), (6, 5, 0, 0, 1, 2), (6, 7, 0, 0, -1, 340),
    (7, 6, 0, 0, 1, 250), (7, 8, 0, 0, 0, 44), (8, 7, 0, 0, 0, 47),
    (8, 9, 0, 0, 0, 6), (9, 8, 0, 0, 0, 2), (10, 9, 0, 0, 0, 1),
    (13, 12, 0, 0, 0, 1), (13, 14, 0, 0, 0, 6), (14, 13, 0, 0, 0, 3),
    (6, 8, 0, 0, -1, 10), (7, 9, 0, -1, 0, 6), (8, 6, 0, 0, 1, 3),
    (8, 10, 0, -1, 0, 6), (9, 7, 0, 1, 0, 2), (10, 8, 0, 1, 0, 2),
    (6, 9, 0, -1, -1, 5), (7, 10, 0, -1, 0, 217), (8, 11, 0, -1, 0, 33),
    (9, 6, 0, 1, 1, 6), (10, 7, 0, 1, 0, 164), (10, 13, -1, 1, 0, 4),
    (11, 8, 0, 1, 0, 21), (13, 10, 1, -1, 0, 2), (6, 10, 0, -1, -1, 23),
    (7, 11, 0, -1, 0, 1), (10, 6, 0, 1, 1, 14), (10, 14, -1, 1, 0, 6),
    (11, 7, 0, 1, 0, 1), (11, 15, -1, 1, 0, 4), (14, 10, 1, -1, 0, 7),
    (15, 11, 1, -1, 0, 3), (7, 13, -1, 0, 0, 22), (13, 7, 1, 0, 0, 22),
    (6, 13, -1, 0, -1, 4), (7, 14, -1, 0, 0, 206), (8, 15, -1, 0, 0, 24),
    (13, 6, 1, 0, 1, 1), (14, 7, 1, 0, 0, 223), (15, 8, 1, 0, 0, 25),
    (6, 14, -1, 0, -1, 26), (14, 6, 1, 0, 1, 14),
)
TABLE1_PAIRS = frozenset((row[0], row[1]) for row in TABLE1)

MINI_REST_DAYS = (9, 10, 11)
BYE_REST_DAYS = 12


class ScheduleError(ValueError):
    """Raised for malformed or inconsistent schedule input."""


@dataclass(frozen=True)
class GameRecord:
    season: int
    week: int
    kickoff_date: dt.date
    home_team: str
    away_team: str
    home_score: float
    away_score: float
    spread_home_margin: float
    home_moneyline: Optional[int] = None
    away_moneyline: Optional[int] = None
    neutral_site: bool = False

    def __post_init__(self):
        if self.home_team == self.away_team:
            raise ScheduleError(f"home and away team are both {self.home_team}")
        if not FIRST_SEASON <= self.season <= LAST_SEASON:
            raise ScheduleError(f"season {self.season} outside {FIRST_SEASON}-{LAST_SEASON}")
        if self.week < 1:
            raise ScheduleError(f"week must be positive, got {self.week}")
        if self.home_score < 0 or self.away_score < 0:
            raise ScheduleError("scores must be non-negative")
        for line in (self.home_moneyline, self.away_moneyline):
            if line is not None and abs(line) < 100:
                raise ScheduleError(f"moneyline {line} has magnitude below 100")

    @property
    def key(self):
        return (self.season, self.week, self.home_team, self.away_team)

    @property
    def home_margin(self):
        return self.home_score - self.away_score


@dataclass(frozen=True)
class RestProfile:
    home_rest: int
    away_rest: int


@dataclass(frozen=True)
class RestIndicators:
    """Signed rest-advantage indicators; +1 favors the home side."""

    bye: int = 0
    mini: int = 0
    mnf: int = 0
    unclassified: bool = False

    def as_tuple(self):
        return (self.bye, self.mini, self.mnf)

    def __neg__(self):
        return RestIndicators(-self.bye, -self.mini, -self.mnf, self.unclassified)

    @property
    def equivalent(self):
        return self.bye == 0 and self.mini == 0 and self.mnf == 0


@dataclass(frozen=True)
class DropEntry:
    season: int
    week: int
    home_team: str
    away_team: str
    reason: str

    @property
    def key(self):
        return (self.season, self.week, self.home_team, self.away_team)


@dataclass(frozen=True)
class SeasonDataset:
    """Ordered games with optional rest profiles and indicators.

    ``rests`` and ``indicators`` are parallel to ``games`` once filled.
    """

    games: tuple = ()
    rests: Optional[tuple] = None
    indicators: Optional[tuple] = None
    provenance: str = ""
    loaded: int = 0
    dropped: int = 0
    warnings: tuple = ()

    @property
    def modeled(self):
        return len(self.games)

    @property
    def counts(self):
        return {"loaded": self.loaded, "dropped": self.dropped, "modeled": self.modeled}

    def __len__(self):
        return len(self.games)

    def rows(self):
        rests = self.rests if self.rests is not None else (None,) * len(self.games)
        inds = self.indicators if self.indicators is not None else (None,) * len(self.games)
        return zip(self.games, rests, inds)

    def unclassified(self):
        """Keys of games whose rest pair falls outside the classified domain."""
        if self.indicators is None:
            return []
        return [g.key for g, ind in zip(self.games, self.indicators) if ind.unclassified]

    def category_counts(self):
        """Advantage counts per category and side, e.g. ``{"mnf": {"home": 290, "away": 410}}``."""
        out = {name: {"home": 0, "away": 0} for name in ("bye", "mini", "mnf")}
        for ind in self.indicators or ():
            for name in out:
                v = getattr(ind, name)
                if v > 0:
                    out[name]["home"] += 1
                elif v < 0:
                    out[name]["away"] += 1
        return out

    def digest(self):
        """SHA-256 of the canonical classified-CSV rendering."""
        buf = io.StringIO()
        _write_rows(buf, self)
        return hashlib.sha256(buf.getvalue().encode()).hexdigest()

    def seasons(self):
        return sorted({g.season for g in self.games})

    def teams(self):
        return sorted({t for g in self.games for t in (g.home_team, g.away_team)})


def _sort_key(game):
    return (game.kickoff_date, game.season, game.week, game.home_team, game.away_team)


def _parse_number(text):
    value = float(text)
    return int(value) if value.is_integer() else value


def _parse_moneyline(text):
    text = text.strip()
    if not text:
        return None
    return int(round(float(text)))


def _parse_row(row):
    return GameRecord(
        season=int(row["season"]),
        week=int(row["week"]),
        kickoff_date=dt.date.fromisoformat(row["date"].strip()),
        home_team=canonical_team(row["home"]),
        away_team=canonical_team(row["away"]),
        home_score=_parse_number(row["home_score"]),
        away_score=_parse_number(row["away_score"]),
        spread_home_margin=float(row["spread_home_margin"]),
        home_moneyline=_parse_moneyline(row["home_ml"]),
        away_moneyline=_parse_moneyline(row["away_ml"]),
        neutral_site=_parse_flag(row["neutral"]),
    )


def _parse_flag(text):
    text = text.strip()
    if text not in ("0", "1"):
        raise ValueError(f"neutral must be 0 or 1, got {text!r}")
    return text == "1"


def _read_csv(path, required):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScheduleError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in required if c not in (reader.fieldnames or ())]
    if missing:
        raise ScheduleError(f"{path}: missing columns {missing}")
    return text, reader


def load_games(path) -> SeasonDataset:
    """Read a games CSV into a dataset ordered by kickoff date.

    If the file also carries the classified columns (``home_rest`` ...
    ``mnf``), those are loaded as well and take precedence over recomputing
    rest from dates.
    """
    text, reader = _read_csv(path, GAMES_COLUMNS)
    classified = all(c in reader.fieldnames for c in CLASSIFIED_COLUMNS[len(GAMES_COLUMNS):-1])
    games, rests, inds, seen = [], [], [], {}
    for row in reader:
        line = reader.line_num
        try:
            game = _parse_row(row)
            if classified:
                rests.append(RestProfile(int(row["home_rest"]), int(row["away_rest"])))
                inds.append(RestIndicators(
                    int(row["bye"]), int(row["mini"]), int(row["mnf"]),
                    row.get("unclassified", "0").strip() == "1",
                ))
        except (ValueError, KeyError, TypeError) as exc:
            raise ScheduleError(f"{path}, line {line}: {exc}") from exc
        if game.key in seen:
            raise ScheduleError(f"{path}, line {line}: duplicate game {game.key} (first on line {seen[game.key]})")
        seen[game.key] = line
        games.append(game)

    order = sorted(range(len(games)), key=lambda i: _sort_key(games[i]))
    digest = hashlib.sha256(text.encode()).hexdigest()
    return SeasonDataset(
        games=tuple(games[i] for i in order),
        rests=tuple(rests[i] for i in order) if classified else None,
        indicators=tuple(inds[i] for i in order) if classified else None,
        provenance=digest,
        loaded=len(games),
    )


def load_drops(path) -> tuple:
    _, reader = _read_csv(path, DROPS_COLUMNS)
    entries, keys = [], set()
    for row in reader:
        try:
            reason = row["reason"].replace(" ", "")
            if reason not in DROP_REASONS:
                raise ValueError(f"unknown drop reason {row['reason']!r}")
            entry = DropEntry(int(row["season"]), int(row["week"]),
                              canonical_team(row["home"]), canonical_team(row["away"]), reason)
        except (ValueError, KeyError) as exc:
            raise ScheduleError(f"{path}, line {reader.line_num}: {exc}") from exc
        if entry.key in keys:
            raise ScheduleError(f"{path}, line {reader.line_num}: duplicate drop entry {entry.key}")
        keys.add(entry.key)
        entries.append(entry)
    return tuple(entries)


def builtin_drop_list() -> tuple:
    """The 52 games excluded from the 2002-2023 analysis."""
    with resources.as_file(resources.files("restedge") / "data" / "drops_2002_2023.csv") as p:
        return load_drops(p)


def compute_rest(dataset: SeasonDataset) -> SeasonDataset:
    """Fill in days since each team's previous kickoff within the season."""
    last = {}
    rests = []
    for game in dataset.games:
        pair = []
        for team in (game.home_team, game.away_team):
            prev = last.get((game.season, team))
            if prev is None:
                pair.append(SEASON_OPENER)
            else:
                days = (game.kickoff_date - prev).days
                if days <= 0:
                    raise ScheduleError(
                        f"{team} has two games on or before {game.kickoff_date} in season {game.season}")
                pair.append(days)
            last[(game.season, team)] = game.kickoff_date
        rests.append(RestProfile(*pair))
    return dataclasses.replace(dataset, rests=tuple(rests))


def _sign(x):
    return (x > 0) - (x < 0)


def classify_rest(home_rest: int, away_rest: int) -> RestIndicators:
    """Map a (home, away) rest pair onto bye / mini-bye / MNF indicators.

    Pairs outside the enumerated rest table (or outside 4-15 days) still get
    rule-based indicators but carry ``unclassified=True``.
    """
    if home_rest == SEASON_OPENER or away_rest == SEASON_OPENER:
        return RestIndicators(0, 0, 0)
    diff = home_rest - away_rest
    mnf = _sign(diff) if abs(diff) >= 1 and min(home_rest, away_rest) <= 6 else 0
    home_mini = home_rest in MINI_REST_DAYS
    away_mini = away_rest in MINI_REST_DAYS
    mini = 0
    if home_mini != away_mini and abs(diff) >= 2:
        mini = 1 if home_mini else -1
    bye = int(home_rest >= BYE_REST_DAYS) - int(away_rest >= BYE_REST_DAYS)
    in_range = 4 <= home_rest <= 15 and 4 <= away_rest <= 15
    unclassified = not in_range or (home_rest, away_rest) not in TABLE1_PAIRS
    return RestIndicators(bye, mini, mnf, unclassified)


def classify_dataset(dataset: SeasonDataset) -> SeasonDataset:
    if dataset.rests is None:
        dataset = compute_rest(dataset)
    inds = tuple(classify_rest(r.home_rest, r.away_rest) for r in dataset.rests)
    return dataclasses.replace(dataset, indicators=inds)


def apply_drops(dataset: SeasonDataset, drops: Iterable[DropEntry]) -> SeasonDataset:
    """Remove listed games; unmatched entries become warnings."""
    drop_keys = {d.key: d for d in drops}
    present = {g.key for g in dataset.games}
    warnings = list(dataset.warnings)
    for key in drop_keys:
        if key not in present:
            warnings.append(f"drop entry {key} matches no loaded game")
    keep = [i for i, g in enumerate(dataset.games) if g.key not in drop_keys]
    removed = len(dataset.games) - len(keep)

    def pick(seq):
        return None if seq is None else tuple(seq[i] for i in keep)

    out = dataclasses.replace(
        dataset,
        games=pick(dataset.games),
        rests=pick(dataset.rests),
        indicators=pick(dataset.indicators),
        dropped=dataset.dropped + removed,
    )
    leftover = out.unclassified()
    for key in leftover:
        warnings.append(f"game {key} has an unclassified rest pair and is not on the drop list")
    for w in warnings[len(dataset.warnings):]:
        log.warning(w)
    return dataclasses.replace(out, warnings=tuple(warnings))


def prepare_dataset(games_path, drops=None) -> SeasonDataset:
    """load -> rest -> classify -> drop."""
    ds = load_games(games_path)
    if ds.indicators is None:
        ds = classify_dataset(ds)
    if drops is not None:
        ds = apply_drops(ds, drops)
    return ds


def _raw_implied(line):
    if line > 0:
        return 100.0 / (line + 100.0)
    return -line / (-line + 100.0)


def implied_win_prob(home_moneyline, away_moneyline):
    """Vig-free win probabilities from a pair of American moneylines.

    Returns ``None`` when either line is missing.

    >>> implied_win_prob(-110, -110)
    (0.5, 0.5)
    """
    if home_moneyline is None or away_moneyline is None:
        return None
    for line in (home_moneyline, away_moneyline):
        if abs(line) < 100:
            raise ValueError(f"moneyline {line} has magnitude below 100")
    qh, qa = _raw_implied(home_moneyline), _raw_implied(away_moneyline)
    total = qh + qa
    return qh / total, qa / total


ERAS = (("2002-10", FIRST_SEASON, CBA_SEASON - 1),
        ("2011-23", CBA_SEASON, LAST_SEASON),
        ("All", FIRST_SEASON, LAST_SEASON))
REST_TYPES = (("Equivalent Rest", None), ("MNF Rest", "mnf"),
              ("Mini (TNF) Rest", "mini"), ("Bye Rest", "bye"))
SUMMARY_COLUMNS = ("side", "type", "era", "n", "point_diff", "win_pct", "exp_win_pct", "cover_pct")


def _mean(values):
    return sum(values) / len(values) if values else None


def summary_table(dataset: SeasonDataset) -> list:
    """Side x rest-type x era performance summary.

    For a rest-type row the side is the team holding that advantage, and
    every statistic is from that team's perspective.  Equivalent-rest rows
    hold games with all three indicators at zero, so their home and away
    rows describe the same games.
    """
    if dataset.indicators is None:
        raise ScheduleError("indicators have not been computed")
    rows = []
    for side, sign in (("Away", -1), ("Home", 1)):
        for type_name, attr in REST_TYPES:
            for era, lo, hi in ERAS:
                diffs, wins, exp, covers = [], [], [], []
                for game, ind in zip(dataset.games, dataset.indicators):
                    if not lo <= game.season <= hi:
                        continue
                    if attr is None:
                        if not ind.equivalent:
                            continue
                    elif getattr(ind, attr) != sign:
                        continue
                    margin = sign * game.home_margin
                    diffs.append(margin)
                    wins.append(1.0 if margin > 0 else 0.5 if margin == 0 else 0.0)
                    against = sign * (game.home_margin - game.spread_home_margin)
                    covers.append(1.0 if against > 0 else 0.5 if against == 0 else 0.0)
                    probs = implied_win_prob(game.home_moneyline, game.away_moneyline)
                    if probs is not None:
                        exp.append(probs[0] if sign > 0 else probs[1])
                rows.append({
                    "side": side, "type": type_name, "era": era, "n": len(diffs),
                    "point_diff": _mean(diffs), "win_pct": _mean(wins),
                    "exp_win_pct": _mean(exp), "cover_pct": _mean(covers),
                })
    return rows


def write_summary_table(rows: Sequence[dict], path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        # integral floats print like ints so a reload renders identically
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


def _game_fields(g):
    return [g.season, g.week, g.kickoff_date.isoformat(), g.home_team, g.away_team,
            g.home_score, g.away_score, g.spread_home_margin,
            g.home_moneyline, g.away_moneyline, g.neutral_site]


def _write_rows(fh, dataset):
    writer = csv.writer(fh, lineterminator="\n")
    classified = dataset.indicators is not None and dataset.rests is not None
    writer.writerow(CLASSIFIED_COLUMNS if classified else GAMES_COLUMNS)
    for game, rest, ind in dataset.rows():
        fields = _game_fields(game)
        if classified:
            fields += [rest.home_rest, rest.away_rest, ind.bye, ind.mini, ind.mnf, ind.unclassified]
        writer.writerow([_fmt(v) for v in fields])


def write_games(dataset: SeasonDataset, path):
    """Write games (with classified columns when available)."""
    with open(path, "w", newline="") as fh:
        _write_rows(fh, dataset)


def convert_nflverse(path, out_path):
    """Convert an nflverse ``games.csv`` into this package's games schema.

    Keeps regular-season games from 2002-2023; ``spread_line`` in that
    source is already the expected home margin.
    """
    import pandas as pd

    df = pd.read_csv(path)
    df = df[(df["game_type"] == "REG") & df["season"].between(FIRST_SEASON, LAST_SEASON)]
    df = df.dropna(subset=["home_score", "away_score"])
    out = pd.DataFrame({
        "season": df["season"].astype(int),
        "week": df["week"].astype(int),
        "date": df["gameday"],
        "home": df["home_team"].map(canonical_team),
        "away": df["away_team"].map(canonical_team),
        "home_score": df["home_score"].astype(int),
        "away_score": df["away_score"].astype(int),
        "spread_home_margin": df["spread_line"],
        "home_ml": df["home_moneyline"].astype("Int64"),
        "away_ml": df["away_moneyline"].astype("Int64"),
        "neutral": (df["location"] == "Neutral").astype(int),
    })
    out.to_csv(out_path, index=False)
    return len(out)
