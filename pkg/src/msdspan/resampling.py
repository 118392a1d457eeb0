"""Subsampling critical values, bias correction and the test decision.

The statistic is recomputed on every contiguous window of length ``b``
(scaled by ``sqrt(b)``), the ``1 - alpha`` quantile of those values is the
critical value for that ``b``, and with several window sizes the quantiles
are regressed on ``1/b`` and extrapolated to ``b = T``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from msdspan.character import CharacterError, CharacterReport, character, validate_alpha
from msdspan.core import PortfolioSet, ReturnPanel, SpanningConfig
from msdspan.statistic import FaceTable, StatisticResult, ZGrid, grid_for, xi_T

ACCEPT = "accept"
REJECT = "reject"
_QUANTILE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class SubsampleDistribution:
    b: int
    stats: np.ndarray

    def __post_init__(self):
        stats = np.array(self.stats, dtype=float)
        if not np.all(np.isfinite(stats)):
            raise ValueError("subsample statistics must be finite")
        stats.setflags(write=False)
        object.__setattr__(self, "stats", stats)


@dataclass(frozen=True)
class BiasCorrection:
    gamma0: float
    gamma1: float
    corrected_quantile: float
    inputs: tuple[tuple[int, float], ...]

    def to_json(self) -> dict:
        return {
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "corrected_quantile": self.corrected_quantile,
            "inputs": [list(p) for p in self.inputs],
        }


def _values(panel) -> np.ndarray:
    return panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)


def _window_block(args) -> np.ndarray:
    """Statistics for a run of window offsets; one row per offset, one column per K."""
    Y, L, Ks, b, offsets, config, grid = args
    out = np.empty((len(offsets), len(Ks)))
    for r, t in enumerate(offsets):
        Yw = Y[t : t + b]
        g = grid if grid is not None else grid_for(Yw, L, Ks[0] if len(Ks) == 1 else PortfolioSet.union(*Ks), config, strict=False)
        ft = FaceTable(Yw, g, config.lp_tol, config.mip_method)
        for c, K in enumerate(Ks):
            out[r, c] = xi_T(Yw, L, K, g, config.lp_tol, config.mip_method, table=ft).xi
    return out


def _chunks(n: int, parts: int) -> list[range]:
    size = max(1, math.ceil(n / parts))
    return [range(s, min(s + size, n)) for s in range(0, n, size)]


def subsample_stats_many(
    panel,
    L: PortfolioSet,
    Ks: list[PortfolioSet],
    b: int,
    config: SpanningConfig = SpanningConfig(),
    threads: int | None = None,
    global_grid: ZGrid | None = None,
) -> list[SubsampleDistribution]:
    """Window statistics for several K on the same windows.

    Under ``grid_policy="window"`` each window's grid pools the vertex
    returns of L and of every K, so the K share one grid.
    """
    Y = _values(panel)
    T = Y.shape[0]
    if not 1 <= b <= T:
        raise ValueError(f"subsample size b={b} outside [1, T={T}]")
    grid = None
    if config.grid_policy == "global":
        grid = global_grid if global_grid is not None else grid_for(
            Y, L, Ks[0] if len(Ks) == 1 else PortfolioSet.union(*Ks), config
        )
    nwin = T - b + 1
    threads = config.threads if threads is None else threads
    blocks = [(Y, L, list(Ks), b, list(rg), config, grid) for rg in _chunks(nwin, max(1, threads) * 4)]
    if threads > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_window_block, blocks))
    else:
        parts = [_window_block(blk) for blk in blocks]
    table = np.vstack(parts)
    return [SubsampleDistribution(b, table[:, c]) for c in range(len(Ks))]


def subsample_stats(
    panel,
    L: PortfolioSet,
    K: PortfolioSet,
    b: int,
    config: SpanningConfig = SpanningConfig(),
    threads: int | None = None,
    global_grid: ZGrid | None = None,
) -> SubsampleDistribution:
    """Statistics on the ``T - b + 1`` overlapping windows of length ``b``, in window order."""
    return subsample_stats_many(panel, L, [K], b, config, threads, global_grid)[0]


def empirical_quantile(stats, p: float) -> float:
    """Smallest order statistic ``y`` with ``#{x <= y} / N >= p``."""
    x = np.sort(np.asarray(stats, dtype=float))
    if x.size == 0:
        raise ValueError("empirical quantile of an empty sample")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    k = math.ceil(p * x.size - _QUANTILE_SLACK)
    return float(x[min(max(k, 1), x.size) - 1])


def bias_correct(pairs, T: int) -> BiasCorrection:
    """OLS of the quantiles on ``1/b`` with intercept, evaluated at ``b = T``.

    The slope is computed on centred ``x = T/b`` (so ``x = 1`` at ``b = T``),
    which keeps the fit accurate to a few ulps of the quantiles.
    """
    pairs = tuple((int(b), float(q)) for b, q in pairs)
    bs = np.array([b for b, _ in pairs], dtype=float)
    if np.unique(bs).size < 2:
        raise ValueError("bias correction needs at least two distinct subsample sizes (singular design)")
    x = T / bs
    q = np.array([v for _, v in pairs])
    dx = x - x.mean()
    slope = float(dx @ (q - q.mean()) / (dx @ dx))
    g0 = float(q.mean() - slope * x.mean())
    return BiasCorrection(g0, slope * T, float(q.mean() + slope * (1.0 - x.mean())), pairs)


def decide(xi: float, critical: float) -> str:
    if not (math.isfinite(xi) and not math.isnan(critical)):
        raise ValueError("decision needs a finite statistic and a critical value")
    return REJECT if xi > critical else ACCEPT


@dataclass(frozen=True, eq=False)
class SpanningResult:
    statistic: StatisticResult
    grid: ZGrid
    distributions: tuple[SubsampleDistribution, ...]
    quantiles: tuple[tuple[int, float], ...]
    bias_correction: BiasCorrection | None
    critical_value: float
    decision: str
    config: SpanningConfig
    character: CharacterReport | None = None
    alpha_check: str | None = None
    warnings: tuple[str, ...] = field(default=())

    @property
    def xi(self) -> float:
        return self.statistic.xi

    def to_json(self) -> dict:
        st = self.statistic
        return {
            "xi": st.xi,
            "best_i": st.best_i,
            "best_z": st.best_z,
            "optimal_lambda": st.optimal_lambda.tolist(),
            "T": st.T,
            "grid_size": {"negative": int(self.grid.negatives.size), "positive": int(self.grid.positives.size)},
            "quantiles": [{"b": b, "quantile": q} for b, q in self.quantiles],
            "bias_correction": None if self.bias_correction is None else self.bias_correction.to_json(),
            "critical_value": self.critical_value,
            "decision": self.decision,
            "character": None if self.character is None else self.character.to_json(),
            "alpha_check": self.alpha_check,
            "warnings": list(self.warnings),
            "subsample_stats": {str(d.b): d.stats.tolist() for d in self.distributions},
        }


def critical_value(quantiles, T: int, use_bias_correction: bool):
    """Bias-corrected quantile when possible, else the quantile of the largest ``b``."""
    distinct = {b for b, _ in quantiles}
    if use_bias_correction and len(distinct) >= 2:
        bc = bias_correct(quantiles, T)
        return bc.corrected_quantile, bc
    return max(quantiles)[1], None


def run_spanning_test(
    panel: ReturnPanel,
    L: PortfolioSet,
    K: PortfolioSet,
    config: SpanningConfig = SpanningConfig(),
    check_character: bool = True,
) -> SpanningResult:
    """End-to-end test of whether K Markowitz-spans L.

    Steps: alpha check against the character of K in L, full-sample
    statistic, subsample quantiles per ``b``, bias correction, decision.
    """
    Y = _values(panel)
    T = Y.shape[0]
    config.check_sizes(T)
    notes = []
    report = alpha_check = None
    if check_character:
        try:
            report = character(L, K, config.tie_tol)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                alpha_check = validate_alpha(config.alpha, report)
            notes.extend(str(w.message) for w in caught)
        except CharacterError as exc:
            notes.append(f"character not computed: {exc}")

    grid = grid_for(Y, L, K, config)
    stat = xi_T(Y, L, K, grid, config.lp_tol, config.mip_method)
    dists = tuple(
        subsample_stats(Y, L, K, b, config, global_grid=grid) for b in config.subsample_sizes
    )
    quantiles = tuple((d.b, empirical_quantile(d.stats, 1.0 - config.alpha)) for d in dists)
    crit, bc = critical_value(quantiles, T, config.bias_correction)
    if config.bias_correction and bc is None:
        notes.append("bias correction skipped: fewer than two distinct subsample sizes")
    return SpanningResult(
        statistic=stat,
        grid=grid,
        distributions=dists,
        quantiles=quantiles,
        bias_correction=bc,
        critical_value=crit,
        decision=decide(stat.xi, crit),
        config=config,
        character=report,
        alpha_check=alpha_check,
        warnings=tuple(notes),
    )
