"""Rolling-window backtest of the optimal portfolios and out-of-sample performance measures.

Wealth net of proportional costs follows

    NW_{t+1} = NW_t (1 + R_{t+1}) (1 - trc * sum_i |w_{i,t+1} - w~_{i,t}|)

where ``w~`` are the previous weights after drifting with realised returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from msdspan.core import PortfolioSet, ReturnPanel, SpanningConfig
from msdspan.statistic import grid_for, xi_T

DEFAULT_UTILITY_GRID = ((2.0, 2.0, 2.25), (3.0, 3.0, 2.25), (4.0, 4.0, 2.25))
THETA_TOL = 1e-10


class WealthRuinError(ValueError):
    pass


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 360
    step: int = 1
    trc: float = 0.0035
    benchmark: str | None = None
    riskfree: str | None = None

    def __post_init__(self):
        if self.window < 1 or self.step < 1:
            raise ValueError("window and step must be positive")
        if self.trc < 0:
            raise ValueError("transaction cost must be nonnegative")

    def check(self, T: int) -> None:
        if self.window + 1 > T:
            raise ValueError(f"window {self.window} leaves no out-of-sample period in T={T}")

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "step": self.step,
            "trc": self.trc,
            "benchmark": self.benchmark,
            "riskfree": self.riskfree,
        }


@dataclass(frozen=True, eq=False)
class BacktestRecord:
    period: int
    """Row index of the realisation period."""
    fit_start: int
    fit_stop: int
    """Rows ``fit_start:fit_stop`` were used to choose the weights."""
    weights: np.ndarray
    gross_return: float
    turnover: float
    net_return: float
    gross_wealth: float
    net_wealth: float


def net_wealth_step(nw: float, r: float, trc: float, turnover: float) -> tuple[float, float]:
    """``(NW', RTC)`` for one period; raises on ruin."""
    if nw <= 0:
        raise ValueError("wealth must be positive")
    out = nw * (1.0 + r) * (1.0 - trc * turnover)
    if out <= 0:
        raise WealthRuinError(f"wealth ruined: {out}")
    return out, out / nw - 1.0


def _drift(w: np.ndarray, r: np.ndarray) -> np.ndarray:
    grown = w * (1.0 + r)
    total = grown.sum()
    return grown / total if total > 0 else w


def optimal_weights(Y: np.ndarray, L: PortfolioSet, K: PortfolioSet, config: SpanningConfig) -> np.ndarray:
    grid = grid_for(Y, L, K, config, strict=False)
    return xi_T(Y, L, K, grid, config.lp_tol, config.mip_method).optimal_lambda.w


def run_backtest(
    panel: ReturnPanel,
    L: PortfolioSet,
    K: PortfolioSet,
    config: BacktestConfig = BacktestConfig(),
    spanning: SpanningConfig = SpanningConfig(),
) -> list[BacktestRecord]:
    """Re-fit the optimal portfolio on each rolling window and hold it out of sample.

    Weights chosen at a rebalancing date use rows strictly before it and are
    held (drifting) for ``step`` periods.  The first purchase counts as full
    turnover from cash.
    """
    Y = panel.values
    T = Y.shape[0]
    config.check(T)
    records = []
    w_prev = np.zeros(panel.n)
    gross = net = 1.0
    for start in range(config.window, T, config.step):
        lo = start - config.window
        w_new = optimal_weights(Y[lo:start], L, K, spanning)
        turnover = float(np.abs(w_new - w_prev).sum())
        w = w_new
        for t in range(start, min(start + config.step, T)):
            r = float(w @ Y[t])
            net, rtc = net_wealth_step(net, r, config.trc, turnover)
            gross *= 1.0 + r
            records.append(BacktestRecord(t, lo, start, w.copy(), r, turnover, rtc, gross, net))
            w = _drift(w, Y[t])
            turnover = 0.0
        w_prev = w
    return records


def utility(R, a: float, b: float, c: float):
    """Reverse-S utility: ``R**a`` for gains, ``-c (-R)**b`` for losses."""
    R = np.asarray(R, dtype=float)
    out = np.where(R >= 0, np.abs(R) ** a, -c * np.abs(R) ** b)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class OpportunityCost:
    theta: float
    residual: float
    bracket: tuple[float, float]
    widened: bool


def opportunity_cost(r_msd, r_m, a: float, b: float, c: float = 2.25, full_output: bool = False):
    """Return ``theta`` with ``E U(1 + R_M + theta) = E U(1 + R_MSD)``, found by bisection.

    The bracket starts at [-1, 1] and is doubled until it holds a sign
    change; ``full_output=True`` reports the bracket and the final residual.
    """
    r_msd = np.asarray(r_msd, dtype=float)
    r_m = np.asarray(r_m, dtype=float)
    if r_msd.shape != r_m.shape:
        raise ValueError("series must be aligned")
    target = float(np.mean(utility(1.0 + r_msd, a, b, c)))

    def f(theta):
        return float(np.mean(utility(1.0 + r_m + theta, a, b, c))) - target

    lo, hi = -1.0, 1.0
    widened = False
    while f(lo) > 0 or f(hi) < 0:
        lo, hi = 2 * lo, 2 * hi
        widened = True
        if hi > 1e6:
            raise ValueError("no sign change in the opportunity-cost bracket")
    bracket = (lo, hi)
    mid, fm = 0.5 * (lo + hi), f(0.5 * (lo + hi))
    for _ in range(200):
        if fm == 0.0 or (hi - lo < THETA_TOL and abs(fm) < THETA_TOL):
            break
        if fm > 0:
            hi = mid
        else:
            lo = mid
        mid = 0.5 * (lo + hi)
        fm = f(mid)
    if full_output:
        return OpportunityCost(mid, abs(fm), bracket, widened)
    return mid


@dataclass(frozen=True)
class PerfReport:
    mean: float
    stdev: float
    skewness: float | None
    excess_kurtosis: float | None
    var5: float
    sharpe: float | None
    downside_sharpe: float | None
    return_loss: float | None
    opportunity_cost: dict = field(default_factory=dict)
    cumulative_multiple: float = 1.0
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "stdev": self.stdev,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "var5": self.var5,
            "sharpe": self.sharpe,
            "downside_sharpe": self.downside_sharpe,
            "downside_sharpe_convention": "mean excess / (sqrt(2) * semi-deviation below the mean)",
            "return_loss": self.return_loss,
            "opportunity_cost": dict(self.opportunity_cost),
            "cumulative_multiple": self.cumulative_multiple,
            "flags": list(self.flags),
        }


def left_quantile(x, p: float) -> float:
    x = np.sort(np.asarray(x, dtype=float))
    k = math.ceil(p * x.size - 1e-9)
    return float(x[min(max(k, 1), x.size) - 1])


def return_loss(mu_msd: float, sd_msd: float, mu_m: float, sd_m: float) -> float:
    """Extra return the benchmark needs to match the strategy's Sharpe ratio."""
    return mu_msd / sd_msd * sd_m - mu_m


def perf_report(returns, benchmark=None, riskfree=None, utility_grid=DEFAULT_UTILITY_GRID) -> PerfReport:
    """Moments, tail risk and relative-performance measures of a return series.

    Skewness and kurtosis use 1/T moments; ``stdev`` uses T - 1.  Without a
    risk-free series the ratios use raw returns and a flag says so.
    """
    r = np.asarray(returns, dtype=float)
    T = r.size
    if T < 2:
        raise ValueError("need at least two returns")
    flags = []
    rf = np.zeros(T) if riskfree is None else np.asarray(riskfree, dtype=float)
    if riskfree is None:
        flags.append("no risk-free series: ratios use raw returns")
    if rf.shape != r.shape:
        raise ValueError("risk-free series must align with returns")
    # a constant series gets exact zeros instead of rounding noise from the mean
    mean = float(r[0]) if np.ptp(r) == 0 else float(r.mean())
    dev = r - mean
    sd = float(np.sqrt(np.sum(dev**2) / (T - 1)))
    m2 = float(np.mean(dev**2))
    if m2 > 0:
        skew = float(np.mean(dev**3) / m2**1.5)
        kurt = float(np.mean(dev**4) / m2**2 - 3.0)
    else:
        skew = kurt = None
        flags.append("constant series: skewness and kurtosis undefined")
    ex = r - rf
    ex_mean = float(ex[0]) if np.ptp(ex) == 0 else float(ex.mean())
    ex_sd = float(np.sqrt(np.sum((ex - ex_mean) ** 2) / (T - 1)))
    sharpe = ex_mean / ex_sd if ex_sd > 0 else None
    below = ex[ex < ex_mean]
    sd_down = math.sqrt(float(np.sum((below - ex_mean) ** 2)) / (T - 1))
    dsharpe = ex_mean / (math.sqrt(2.0) * sd_down) if sd_down > 0 else None
    if sharpe is None:
        flags.append("zero standard deviation: Sharpe ratio undefined")

    rloss = None
    oc = {}
    if benchmark is not None:
        bm = np.asarray(benchmark, dtype=float)
        if bm.shape != r.shape:
            raise ValueError("benchmark must align with returns")
        sd_bm = float(bm.std(ddof=1))
        if sd > 0:
            rloss = return_loss(mean, sd, float(bm.mean()), sd_bm)
        for a, b, c in utility_grid:
            oc[f"a={a:g},b={b:g},c={c:g}"] = opportunity_cost(r, bm, a, b, c)
    return PerfReport(
        mean=mean,
        stdev=sd,
        skewness=skew,
        excess_kurtosis=kurt,
        var5=-left_quantile(r, 0.05),
        sharpe=sharpe,
        downside_sharpe=dsharpe,
        return_loss=rloss,
        opportunity_cost=oc,
        cumulative_multiple=float(np.prod(1.0 + r)),
        flags=tuple(flags),
    )


@dataclass(frozen=True, eq=False)
class FactorModelFit:
    names: tuple[str, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r2: float
    adj_r2: float
    f_stat: float
    f_pvalue: float
    residuals: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "coefficients": dict(zip(self.names, self.coefficients.tolist())),
            "std_errors": dict(zip(self.names, self.std_errors.tolist())),
            "t_stats": dict(zip(self.names, self.t_stats.tolist())),
            "p_values": dict(zip(self.names, self.p_values.tolist())),
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "f_stat": self.f_stat,
            "f_pvalue": self.f_pvalue,
        }


def ols_fit(y, X, names=None) -> FactorModelFit:
    """OLS by normal equations with classical standard errors.

    ``X`` must already contain the intercept column.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be a matrix with one row per observation")
    n, k = X.shape
    if n <= k:
        raise ValueError("need more observations than regressors")
    if np.linalg.matrix_rank(X) < k:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(k))
    XtX = X.T @ X
    beta = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ beta
    dof = n - k
    s2 = float(resid @ resid) / dof
    se = np.sqrt(s2 * np.diag(np.linalg.inv(XtX)))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    p = 2 * stats.t.sf(np.abs(t), dof)
    tss = float(np.sum((y - y.mean()) ** 2))
    rss = float(resid @ resid)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    if k == 1:
        f = math.nan
    elif r2 >= 1.0:
        f = math.inf
    else:
        f = (r2 / (k - 1)) / ((1.0 - r2) / dof)
    fp = float(stats.f.sf(f, k - 1, dof)) if k > 1 else math.nan
    return FactorModelFit(names, beta, se, t, p, r2, adj, float(f), fp, resid)
