"""Domain types: return panels, portfolio sets and run configuration.

Portfolio sets are simplicial complexes inside the standard simplex, stored
extensionally as a vertex list plus faces (tuples of vertex indices).  All
types are immutable after construction.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from msdspan._projection import project_onto_hull

VERTEX_SUM_TOL = 1e-12
MEMBERSHIP_TOL = 1e-8
WEIGHT_SUM_TOL = 1e-9

Z_GRID_MODES = ("sample-values", "fixed-grid")
GRID_POLICIES = ("window", "global")
MIP_METHODS = ("vertex", "bnb")


class PanelParseError(ValueError):
    """Malformed returns file. ``row`` and ``col`` are 1-based file positions."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None, path: str | None = None):
        where = ""
        if row is not None:
            where = f" (line {row}" + (f", column {col})" if col is not None else ")")
        super().__init__((f"{path}: " if path else "") + message + where)
        self.message = message
        self.row = row
        self.col = col
        self.path = path


class PortfolioSetError(ValueError):
    pass


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """T x n matrix of periodic simple returns (0.01 = 1%).

    Rows are periods, columns are base assets.  The empirical distribution
    of the panel is the uniform distribution on its rows.
    """

    values: np.ndarray
    asset_names: tuple[str, ...]
    dates: tuple[str, ...] | None = None

    def __post_init__(self):
        vals = _frozen_array(self.values, 2)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "asset_names", tuple(str(a) for a in self.asset_names))
        if self.dates is not None:
            object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))
        T, n = vals.shape
        if T < 2 or n < 1:
            raise ValueError(f"panel needs T >= 2 and n >= 1, got T={T}, n={n}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("panel contains non-finite entries")
        if len(self.asset_names) != n:
            raise ValueError("asset_names length does not match column count")
        if len(set(self.asset_names)) != n:
            raise ValueError("asset names must be distinct")
        if self.dates is not None and len(self.dates) != T:
            raise ValueError("dates length does not match row count")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "ReturnPanel":
        """Rows ``start:stop`` as a new panel (at least two rows)."""
        dates = None if self.dates is None else self.dates[start:stop]
        return ReturnPanel(self.values[start:stop], self.asset_names, dates)

    @classmethod
    def from_array(cls, values, asset_names: Sequence[str] | None = None) -> "ReturnPanel":
        values = np.asarray(values, dtype=float)
        if asset_names is None:
            asset_names = [f"a{i + 1}" for i in range(values.shape[1])]
        return cls(values, tuple(asset_names))


def load_panel(source: str | Path | TextIO, date_column: str | None = "auto") -> ReturnPanel:
    """Parse a returns CSV: header of asset names, one row of decimal returns per period.

    A leading column named ``date`` (any case) is read as period identifiers
    when ``date_column="auto"``.  No transformation is applied to the returns.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            text = fh.read()
        try:
            return _parse_panel(text, date_column)
        except PanelParseError as exc:
            raise PanelParseError(exc.message, exc.row, exc.col, str(source)) from None
    return _parse_panel(source.read(), date_column)


def _parse_panel(text: str, date_column: str | None) -> ReturnPanel:
    reader = csv.reader(io.StringIO(text))
    # keep the physical line number of every non-blank row for error messages
    numbered = [(reader.line_num, r) for r in reader if any(cell.strip() for cell in r)]
    if not numbered:
        raise PanelParseError("empty returns file")
    header_line, first = numbered[0]
    header = [h.strip() for h in first]
    date_idx = None
    if date_column == "auto":
        if header and header[0].lower() == "date":
            date_idx = 0
    elif date_column is not None:
        if date_column not in header:
            raise PanelParseError(f"date column {date_column!r} not in header", row=header_line)
        date_idx = header.index(date_column)
    names = [h for i, h in enumerate(header) if i != date_idx]
    if any(not h for h in names):
        raise PanelParseError("empty asset name in header", row=header_line)
    seen = set()
    for j, h in enumerate(header):
        if j == date_idx:
            continue
        if h in seen:
            raise PanelParseError(f"duplicate asset name {h!r}", row=header_line, col=j + 1)
        seen.add(h)

    values, dates = [], []
    for i, row in numbered[1:]:
        if len(row) != len(header):
            raise PanelParseError(
                f"expected {len(header)} cells, found {len(row)}", row=i
            )
        out = []
        for j, cell in enumerate(row):
            if j == date_idx:
                dates.append(cell.strip())
                continue
            try:
                x = float(cell)
            except ValueError:
                raise PanelParseError(f"non-numeric cell {cell!r}", row=i, col=j + 1) from None
            if not math.isfinite(x):
                raise PanelParseError(f"non-finite cell {cell!r}", row=i, col=j + 1)
            out.append(x)
        values.append(out)
    if len(values) < 2:
        raise PanelParseError("returns file needs at least two data rows")
    return ReturnPanel(np.array(values), tuple(names), tuple(dates) if date_idx is not None else None)


@dataclass(frozen=True, eq=False)
class PortfolioWeights:
    """Long-only weight vector summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.w, 1)
        if np.any(w < -WEIGHT_SUM_TOL):
            raise ValueError(f"negative weight {w.min():.3g}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum():.12g}, not 1")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.size

    def tolist(self) -> list[float]:
        return [float(x) for x in self.w]


def clean_weights(w: np.ndarray) -> PortfolioWeights:
    """Clip round-off negatives and renormalise solver output into weights."""
    w = np.clip(np.asarray(w, dtype=float), 0.0, None)
    return PortfolioWeights(w / w.sum())


@dataclass(frozen=True, eq=False)
class PortfolioSet:
    """Simplicial complex in the standard simplex: vertices plus faces.

    Each face is the convex hull of its vertices; the set is the union of
    the faces.  Faces need not be maximal, but their vertices must be
    affinely independent.
    """

    vertices: np.ndarray
    faces: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        V = _frozen_array(self.vertices, 2)
        faces = tuple(tuple(int(i) for i in f) for f in self.faces)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "faces", faces)
        if V.shape[0] == 0:
            raise PortfolioSetError("portfolio set has no vertices")
        if np.any(V < -VERTEX_SUM_TOL) or np.any(np.abs(V.sum(axis=1) - 1.0) > VERTEX_SUM_TOL):
            raise PortfolioSetError("every vertex must lie on the standard simplex")
        if not faces:
            raise PortfolioSetError("portfolio set has no faces")
        for f in faces:
            if not f:
                raise PortfolioSetError("empty face")
            if len(set(f)) != len(f):
                raise PortfolioSetError(f"face {f} repeats a vertex")
            if min(f) < 0 or max(f) >= V.shape[0]:
                raise PortfolioSetError(f"face {f} references a missing vertex")
            if len(f) > 1:
                diffs = V[list(f[1:])] - V[f[0]]
                if np.linalg.matrix_rank(diffs, tol=1e-10) != len(f) - 1:
                    raise PortfolioSetError(f"face {f} is not affinely independent")

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    def face_vertices(self, k: int) -> np.ndarray:
        return self.vertices[list(self.faces[k])]

    def face_keys(self) -> list[tuple]:
        """Hashable geometric identity of each face (sorted vertex coordinates)."""
        return [
            tuple(sorted(tuple(float(x) for x in self.vertices[i]) for i in f))
            for f in self.faces
        ]

    def used_vertices(self) -> np.ndarray:
        idx = sorted({i for f in self.faces for i in f})
        return self.vertices[idx]

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist(), "faces": [list(f) for f in self.faces]}

    @classmethod
    def from_json(cls, obj: dict) -> "PortfolioSet":
        try:
            return cls(np.array(obj["vertices"], dtype=float), tuple(tuple(f) for f in obj["faces"]))
        except KeyError as exc:
            raise PortfolioSetError(f"portfolio-set JSON missing key {exc}") from None

    @classmethod
    def union(cls, *sets: "PortfolioSet") -> "PortfolioSet":
        verts, faces = [], []
        for s in sets:
            off = len(verts)
            verts.extend(s.vertices.tolist())
            faces.extend(tuple(i + off for i in f) for f in s.faces)
        return cls(np.array(verts), tuple(faces))


def load_portfolio_set(path: str | Path) -> PortfolioSet:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PortfolioSetError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return PortfolioSet.from_json(obj)


def standard_simplex(n: int) -> PortfolioSet:
    if n < 1:
        raise ValueError("n must be at least 1")
    return PortfolioSet(np.eye(n), (tuple(range(n)),))


def sub_simplex(n: int, assets: Iterable[int]) -> PortfolioSet:
    """The face of the n-asset simplex spanned by the given (0-based) assets."""
    assets = list(assets)
    return PortfolioSet(np.eye(n)[assets], (tuple(range(len(assets))),))


def portfolio_returns(panel: ReturnPanel, w: PortfolioWeights | np.ndarray) -> np.ndarray:
    w = w.w if isinstance(w, PortfolioWeights) else np.asarray(w, dtype=float)
    if w.shape != (panel.n,):
        raise ValueError(f"weights have dimension {w.shape}, panel has n={panel.n}")
    return panel.values @ w


def membership_residual(pset: PortfolioSet, w: PortfolioWeights | np.ndarray) -> float:
    """Distance from ``w`` to the nearest face of the complex."""
    w = w.w if isinstance(w, PortfolioWeights) else np.asarray(w, dtype=float)
    if w.shape != (pset.n,):
        raise ValueError("dimension mismatch between weights and portfolio set")
    return min(project_onto_hull(pset.face_vertices(k), w)[0] for k in range(len(pset.faces)))


@dataclass(frozen=True)
class SpanningConfig:
    """Resolved settings for one spanning test.

    ``fixed_grid`` is ``((neg_lo, neg_hi, neg_step), (pos_lo, pos_hi, pos_step))``
    and is only read in ``fixed-grid`` mode.  ``grid_max_points`` thins a
    sample-values grid to at most that many points.
    """

    alpha: float = 0.05
    subsample_sizes: tuple[int, ...] = (120, 240, 360, 480)
    z_grid_mode: str = "sample-values"
    fixed_grid: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None
    grid_max_points: int | None = None
    grid_policy: str = "window"
    lp_tol: float = 1e-9
    tie_tol: float = 1e-9
    mip_epsilon: float = 0.0
    mip_method: str = "vertex"
    rng_seed: int = 0
    bias_correction: bool = True
    threads: int = field(default=1, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "subsample_sizes", tuple(int(b) for b in self.subsample_sizes))
        if self.fixed_grid is not None:
            object.__setattr__(
                self, "fixed_grid", tuple(tuple(float(x) for x in part) for part in self.fixed_grid)
            )
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.subsample_sizes or min(self.subsample_sizes) < 1:
            raise ValueError("subsample sizes must be positive integers")
        if self.z_grid_mode not in Z_GRID_MODES:
            raise ValueError(f"z_grid_mode must be one of {Z_GRID_MODES}")
        if self.z_grid_mode == "fixed-grid" and self.fixed_grid is None:
            raise ValueError("fixed-grid mode requires fixed_grid")
        if self.grid_policy not in GRID_POLICIES:
            raise ValueError(f"grid_policy must be one of {GRID_POLICIES}")
        if self.mip_method not in MIP_METHODS:
            raise ValueError(f"mip_method must be one of {MIP_METHODS}")
        if self.grid_max_points is not None and self.grid_max_points < 2:
            raise ValueError("grid_max_points must be at least 2")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def check_sizes(self, T: int) -> None:
        bad = [b for b in self.subsample_sizes if not 1 <= b <= T]
        if bad:
            raise ValueError(f"subsample sizes {bad} outside [1, T={T}]")

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "subsample_sizes": list(self.subsample_sizes),
            "z_grid_mode": self.z_grid_mode,
            "fixed_grid": None if self.fixed_grid is None else [list(p) for p in self.fixed_grid],
            "grid_max_points": self.grid_max_points,
            "grid_policy": self.grid_policy,
            "lp_tol": self.lp_tol,
            "tie_tol": self.tie_tol,
            "mip_epsilon": self.mip_epsilon,
            "mip_method": self.mip_method,
            "rng_seed": self.rng_seed,
            "bias_correction": self.bias_correction,
        }

    @classmethod
    def from_json(cls, obj: dict, **overrides) -> "SpanningConfig":
        """Inverse of :meth:`to_json`; unknown keys are rejected."""
        known = {f for f in cls.__dataclass_fields__ if f != "threads"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown configuration keys: {sorted(extra)}")
        kw = dict(obj)
        if kw.get("subsample_sizes") is not None:
            kw["subsample_sizes"] = tuple(kw["subsample_sizes"])
        kw.update(overrides)
        return cls(**kw)
