"""Franchise codes and relocation aliases."""

FRANCHISES = (
    "ARI", "ATL", "BAL", "BUF", "CAR", "CHI", "CIN", "CLE",
    "DAL", "DEN", "DET", "GB", "HOU", "IND", "JAX", "KC",
    "LA", "LAC", "LV", "MIA", "MIN", "NE", "NO", "NYG",
    "NYJ", "PHI", "PIT", "SEA", "SF", "TB", "TEN", "WAS",
)

# historical / alternate codes -> current franchise code
ALIASES = {
    "OAK": "LV",
    "SD": "LAC",
    "STL": "LA",
    "LAR": "LA",
    "JAC": "JAX",
    "WSH": "WAS",
    "ARZ": "ARI",
    "BLT": "BAL",
    "CLV": "CLE",
    "HST": "HOU",
}

AFC_EAST = ("NE", "BUF", "MIA", "NYJ")


def canonical_team(code):
    """Map a team code onto its current franchise code.

    Raises
    ------
    ValueError
        If the code is neither a current franchise nor a known alias.
    """
    key = str(code).strip().upper()
    key = ALIASES.get(key, key)
    if key not in FRANCHISES:
        raise ValueError(f"unknown team code {code!r}")
    return key
