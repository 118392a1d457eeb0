"""Does one set of portfolios span another under Markowitz stochastic dominance?

Exact optimisation of the spanning statistic over simplicial-complex
portfolio sets, subsampling critical values with bias correction, the
combinatorial character bound on admissible significance levels, a GARCH
Monte Carlo harness and backtest analytics.
"""

from msdspan.character import CharacterReport, character, effective_extreme_points, validate_alpha
from msdspan.core import (
    PortfolioSet,
    PortfolioWeights,
    ReturnPanel,
    SpanningConfig,
    load_panel,
    load_portfolio_set,
    standard_simplex,
    sub_simplex,
)
from msdspan.resampling import SpanningResult, run_spanning_test
from msdspan.statistic import ZGrid, build_z_grid, xi_T

__version__ = "0.1.0"

__all__ = [
    "CharacterReport",
    "PortfolioSet",
    "PortfolioWeights",
    "ReturnPanel",
    "SpanningConfig",
    "SpanningResult",
    "ZGrid",
    "build_z_grid",
    "character",
    "effective_extreme_points",
    "load_panel",
    "load_portfolio_set",
    "run_spanning_test",
    "standard_simplex",
    "sub_simplex",
    "validate_alpha",
    "xi_T",
]
