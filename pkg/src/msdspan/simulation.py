"""Vector GARCH(1,1) panels with a known spanning structure, and the size/power harness.

Assets ``1..K-1`` share one innovation ``z_t``::

    y_i,t = mu_i + z_t sqrt(h_i,t)
    h_i,t = omega_i + (a_i z_{t-1}^2 + beta_i) h_i,t-1

and asset ``K`` is a kinked transform of asset ``K-1``'s shock,
``v1 (x)_+ + v2 (x)_-`` with ``x = z_t sqrt(h_K-1,t)``.  With zero means,
``v1`` large and ``v2`` small, the last asset is super-efficient, which
gives sets with and without the spanning property.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from msdspan.core import PortfolioSet, ReturnPanel, SpanningConfig
from msdspan.resampling import (
    bias_correct,
    decide,
    empirical_quantile,
    subsample_stats_many,
)
from msdspan.statistic import FaceTable, grid_for, xi_T

BURN_IN = 500
INNOVATIONS = ("student", "gaussian")

# sample sizes and subsample sizes of the reference experiment
REFERENCE_B_LISTS = {300: (50, 100, 150, 200), 500: (100, 200, 300, 400), 1000: (120, 240, 360, 480)}


@dataclass(frozen=True, eq=False)
class GarchSpec:
    K: int
    mu: np.ndarray
    omega: np.ndarray
    a: np.ndarray
    beta: np.ndarray
    v1: float
    v2: float
    innovation: str = "student"
    df: float = 5.0
    burn_in: int = BURN_IN

    def __post_init__(self):
        if self.K < 3:
            raise ValueError("K must be at least 3")
        for name in ("mu", "omega", "a", "beta"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            if arr.shape != (self.K - 1,):
                raise ValueError(f"{name} must have K-1 = {self.K - 1} entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.omega <= 0) or np.any(self.a < 0) or np.any(self.beta < 0):
            raise ValueError("omega must be positive and a, beta nonnegative")
        if self.innovation not in INNOVATIONS:
            raise ValueError(f"innovation must be one of {INNOVATIONS}")
        if self.innovation == "student" and self.df <= 2:
            raise ValueError("Student innovations need df > 2 to standardise the variance")
        if self.innovation == "gaussian" and np.any(self.a + self.beta >= 1):
            raise ValueError("a + beta must be below 1 for Gaussian innovations")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    @classmethod
    def panel_a(cls, innovation: str = "student") -> "GarchSpec":
        return cls(
            K=4,
            mu=np.zeros(3),
            omega=np.full(3, 0.5),
            a=np.array([0.4, 0.45, 0.5]),
            beta=np.array([0.5, 0.45, 0.4]),
            v1=1.5,
            v2=0.5,
            innovation=innovation,
        )

    @classmethod
    def panel_b(cls, innovation: str = "student") -> "GarchSpec":
        i = np.arange(11)
        return cls(
            K=12,
            mu=np.zeros(11),
            omega=np.full(11, 0.5),
            a=np.round(0.4 + 0.01 * i, 12),
            beta=np.round(0.5 - 0.01 * i, 12),
            v1=1.5,
            v2=0.5,
            innovation=innovation,
        )

    def stationarity(self) -> dict:
        """Moment diagnostics: ``E[a z^2 + beta] = a + beta`` and the second moment."""
        kurt = 3.0 if self.innovation == "gaussian" else (
            3.0 * (self.df - 2) / (self.df - 4) if self.df > 4 else math.inf
        )
        first = self.a + self.beta
        second = self.a**2 * kurt + 2 * self.a * self.beta + self.beta**2
        return {
            "first_moment": first.tolist(),
            "first_moment_below_one": bool(np.all(first < 1)),
            "second_moment": second.tolist(),
            "innovation_kurtosis": kurt,
        }

    def spanning_conditions(self) -> bool:
        """Sufficient conditions on ``v1, v2`` for the last asset to be super-efficient."""
        pars = np.concatenate([self.omega, self.a, self.beta])
        if pars.min() <= 0:
            return False
        ratio = pars.max() / pars.min()
        return bool(np.all(self.mu == 0) and abs(self.v1) > math.sqrt(ratio) and abs(self.v2) < math.sqrt(1 / ratio))

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "mu": self.mu.tolist(),
            "omega": self.omega.tolist(),
            "a": self.a.tolist(),
            "beta": self.beta.tolist(),
            "v1": self.v1,
            "v2": self.v2,
            "innovation": self.innovation,
            "df": self.df,
            "burn_in": self.burn_in,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GarchSpec":
        preset = obj.get("preset")
        if preset is not None:
            base = {"panel_a": cls.panel_a, "panel_b": cls.panel_b}.get(preset)
            if base is None:
                raise ValueError(f"unknown preset {preset!r}")
            spec = base(obj.get("innovation", "student")).to_json()
            spec.update({k: v for k, v in obj.items() if k not in ("preset",)})
            obj = spec
        return cls(**{k: obj[k] for k in obj if k in cls.__dataclass_fields__})


def _innovations(spec: GarchSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if spec.innovation == "gaussian":
        return rng.standard_normal(n)
    return rng.standard_t(spec.df, n) / math.sqrt(spec.df / (spec.df - 2))


def simulate_variances(spec: GarchSpec, z: np.ndarray) -> np.ndarray:
    """Conditional variances ``h`` (len(z) x K-1) driven by the innovations ``z``."""
    persist = spec.a + spec.beta
    h = np.where(persist < 1, spec.omega / np.where(persist < 1, 1 - persist, 1.0), spec.omega)
    out = np.empty((z.size, spec.K - 1))
    prev_z2 = 1.0  # the start is the long-run level, so use E z^2
    for t in range(z.size):
        h = spec.omega + (spec.a * prev_z2 + spec.beta) * h
        out[t] = h
        prev_z2 = z[t] * z[t]
    return out


def simulate_returns(spec: GarchSpec, T: int, seed=None) -> np.ndarray:
    """``T x K`` returns after a burn-in; bitwise reproducible for a given seed."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = _innovations(spec, rng, T + spec.burn_in)
    h = simulate_variances(spec, z)[spec.burn_in :]
    z = z[spec.burn_in :]
    Y = np.empty((T, spec.K))
    Y[:, :-1] = spec.mu + z[:, None] * np.sqrt(h)
    x = z * np.sqrt(h[:, -1])
    Y[:, -1] = spec.v1 * np.maximum(x, 0.0) + spec.v2 * np.minimum(x, 0.0)
    return Y


def simulate_panel(spec: GarchSpec, T: int, seed=None) -> ReturnPanel:
    """:func:`simulate_returns` wrapped as a panel (which needs ``T >= 2``)."""
    return ReturnPanel(simulate_returns(spec, T, seed), [f"y{i + 1}" for i in range(spec.K)])


def spanning_scenario(spec: GarchSpec, M: int) -> tuple[PortfolioSet, PortfolioSet, PortfolioSet]:
    """``(L, K_size, K_power)`` for M spanning base assets.

    L is the simplex on the first ``K-2`` assets plus the singletons
    ``tau = e_{K-1}`` and ``tau* = e_K``; K_size keeps the simplex on the
    first M assets and ``tau*``; K_power drops ``tau*``.
    """
    K = spec.K
    if not 1 <= M <= K - 2:
        raise ValueError(f"M must lie in [1, K-2 = {K - 2}]")
    if not spec.spanning_conditions():
        warnings.warn("v1, v2 do not satisfy the sufficient spanning conditions", stacklevel=2)
    eye = np.eye(K)
    L = PortfolioSet(eye, (tuple(range(K - 2)), (K - 2,), (K - 1,)))
    base = eye[:M]
    K_size = PortfolioSet(np.vstack([base, eye[K - 1]]), (tuple(range(M)), (M,)))
    K_power = PortfolioSet(base, (tuple(range(M)),))
    return L, K_size, K_power


@dataclass(frozen=True)
class McResult:
    replications: int
    rejections: int
    T: int
    b_list: tuple[int, ...]
    alpha: float
    bias_correction: bool
    per_b_rejections: tuple[int, ...] = field(default=())

    @property
    def rate(self) -> float:
        return self.rejections / self.replications

    @property
    def std_error(self) -> float:
        p = self.rate
        return math.sqrt(p * (1 - p) / self.replications)

    @property
    def per_b_rates(self) -> tuple[float, ...]:
        return tuple(r / self.replications for r in self.per_b_rejections)

    def to_json(self) -> dict:
        return {
            "replications": self.replications,
            "rejections": self.rejections,
            "rate": self.rate,
            "std_error": self.std_error,
            "T": self.T,
            "b_list": list(self.b_list),
            "alpha": self.alpha,
            "bias_correction": self.bias_correction,
            "per_b_rejections": list(self.per_b_rejections),
            "per_b_rates": list(self.per_b_rates),
        }


def replication_seed(seed: int, rep: int) -> np.random.SeedSequence:
    """Independent stream for one replication, derived from the master seed."""
    return np.random.SeedSequence([int(seed), int(rep)])


def _one_replication(args):
    """Decisions for every K on one simulated panel.

    Returns an int array (len(Ks), 1 + len(b_list)): the bias-corrected
    decision (or the largest-b decision when correction is off) followed by
    one decision per subsample size.
    """
    spec, L, Ks, T, config, seed, rep, force_accept = args
    Y = simulate_returns(spec, T, np.random.default_rng(replication_seed(seed, rep)))
    union = PortfolioSet.union(*Ks)
    grid = grid_for(Y, L, union, config)
    ft = FaceTable(Y, grid, config.lp_tol, config.mip_method)
    xis = [xi_T(Y, L, K, grid, config.lp_tol, config.mip_method, table=ft).xi for K in Ks]
    qs = [[] for _ in Ks]
    for b in config.subsample_sizes:
        dists = subsample_stats_many(Y, L, Ks, b, config, threads=1, global_grid=grid)
        for c, d in enumerate(dists):
            qs[c].append((b, empirical_quantile(d.stats, 1 - config.alpha)))
    out = np.zeros((len(Ks), 1 + len(config.subsample_sizes)), dtype=int)
    for c, xi in enumerate(xis):
        per_b = [math.inf if force_accept else q for _, q in qs[c]]
        if force_accept:
            crit = math.inf
        elif config.bias_correction and len({b for b, _ in qs[c]}) >= 2:
            crit = bias_correct(qs[c], T).corrected_quantile
        else:
            crit = max(qs[c])[1]
        out[c, 0] = decide(xi, crit) == "reject"
        out[c, 1:] = [decide(xi, q) == "reject" for q in per_b]
    return out


def run_mc_many(
    spec: GarchSpec,
    L: PortfolioSet,
    Ks: list[PortfolioSet],
    T: int,
    reps: int,
    config: SpanningConfig,
    seed: int = 0,
    threads: int = 1,
    force_accept: bool = False,
    progress=None,
) -> list[McResult]:
    """Rejection counts for several K on shared simulated panels.

    Replication ``r`` draws its panel from ``replication_seed(seed, r)``, so
    results do not depend on ``threads``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    config.check_sizes(T)
    jobs = [(spec, L, list(Ks), T, config, seed, r, force_accept) for r in range(reps)]
    totals = np.zeros((len(Ks), 1 + len(config.subsample_sizes)), dtype=int)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, out in enumerate(pool.map(_one_replication, jobs)):
                totals += out
                if progress:
                    progress(i + 1, reps)
    else:
        for i, job in enumerate(jobs):
            totals += _one_replication(job)
            if progress:
                progress(i + 1, reps)
    return [
        McResult(
            replications=reps,
            rejections=int(row[0]),
            T=T,
            b_list=config.subsample_sizes,
            alpha=config.alpha,
            bias_correction=config.bias_correction,
            per_b_rejections=tuple(int(x) for x in row[1:]),
        )
        for row in totals
    ]


def run_mc(spec, scenario, T, reps, config, seed=0, threads=1, force_accept=False) -> McResult:
    """Rejection rate of the test of ``scenario = (L, K)`` over ``reps`` panels."""
    L, K = scenario
    return run_mc_many(spec, L, [K], T, reps, config, seed, threads, force_accept)[0]


def run_size_power(spec: GarchSpec, M: int, T: int, reps: int, config: SpanningConfig, seed=0, threads=1, progress=None):
    """``(size, power)`` results; both experiments see the same panels."""
    L, K_size, K_power = spanning_scenario(spec, M)
    size, power = run_mc_many(spec, L, [K_size, K_power], T, reps, config, seed, threads, progress=progress)
    return size, power


def table_rows(results: dict) -> list[dict]:
    """Flatten ``{(panel, T, kind): McResult}`` into rows shaped like the reference table."""
    rows = []
    for (panel, T, kind), res in sorted(results.items()):
        rows.append({
            "panel": panel,
            "T": T,
            "kind": kind,
            "rate_uncorrected": res.per_b_rates[-1] if res.per_b_rates else None,
            "rate_corrected": res.rate if res.bias_correction else None,
            "std_error": res.std_error,
            "replications": res.replications,
        })
    return rows
