"""Wide multiple baseline two-view matching."""
__version__ = "0.1.0"

from .geometry import Laf, ModelKind, TwoViewModel
from .pipeline import MatchReport, MatcherConfig, match_pair

__all__ = ["Laf", "MatchReport", "MatcherConfig", "ModelKind", "TwoViewModel", "__version__", "match_pair"]
