"""Rest-differential effects in NFL point differentials and point spreads."""

from .model import (
    ByeStructure,
    Design,
    Layout,
    ModelVariant,
    Outcome,
    ParameterVector,
    PriorConfig,
)
from .schedule import (
    SeasonDataset,
    apply_drops,
    classify_rest,
    compute_rest,
    implied_win_prob,
    load_games,
    builtin_drop_list,
    prepare_dataset,
    summary_table,
)

__version__ = "0.1.0"
