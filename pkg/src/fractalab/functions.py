"""Function data on discretizations and the shared test corpus.

VertexFunction carries values on a LevelGraph's vertices, CellFunction one
value per measure atom (cell).  FunctionSpec is a small closed family of
evaluable definitions; every verifier in the package consumes the corpus
produced here so all quantitative checks run against one set of functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import FamilyMismatchError, LevelMismatchError
from .geometry import (
    DiscreteMeasure,
    Family,
    IfsSpec,
    LevelGraph,
    Word,
    build_level_graph,
)


@dataclass(frozen=True)
class VertexFunction:
    level: int
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("vertex values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class CellFunction:
    level: int
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("cell values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


# ---------------------------------------------------------------------------
# Function specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float

    def label(self) -> str:
        return f"constant({self.value:g})"


@dataclass(frozen=True)
class Coordinate:
    axis: int  # 0 = x, 1 = y

    def label(self) -> str:
        return "coord_" + ("x" if self.axis == 0 else "y")


@dataclass(frozen=True)
class DistancePower:
    """d(x, q_corner)^gamma in the Euclidean frame metric, gamma > 0."""

    corner: int
    gamma: float

    def label(self) -> str:
        return f"distpow_{self.gamma:g}"


@dataclass(frozen=True)
class PiecewiseAffineVicsek:
    """Vicsek-only: vertex data on V_n extended linearly along the skeleton."""

    level: int
    values: tuple[float, ...]

    def label(self) -> str:
        return f"affine_n{self.level}"


@dataclass(frozen=True)
class HarmonicExtensionGasket:
    """Gasket-only: p-harmonic extension of corner boundary data."""

    p: float
    boundary: tuple[float, float, float]

    def label(self) -> str:
        return f"harmonic_p{self.p:g}"


@dataclass(frozen=True)
class IndicatorCell:
    """Metric ramp onto the cell K_w: 1 on the cell, decaying linearly
    over `smoothing` outside (clipped to [0, 1])."""

    word: tuple[int, ...]
    smoothing: float

    def label(self) -> str:
        return "indicator"


FunctionSpec = Union[
    Constant, Coordinate, DistancePower,
    PiecewiseAffineVicsek, HarmonicExtensionGasket, IndicatorCell,
]


def _check_family(fspec: FunctionSpec, spec: IfsSpec) -> None:
    if isinstance(fspec, PiecewiseAffineVicsek) and spec.family is not Family.VICSEK:
        raise FamilyMismatchError("piecewise-affine data requires the Vicsek set")
    if isinstance(fspec, HarmonicExtensionGasket) and spec.family is not Family.GASKET:
        raise FamilyMismatchError("p-harmonic boundary data requires the gasket")


def _cell_member_points(spec: IfsSpec, geom: LevelGraph | DiscreteMeasure,
                        word: tuple[int, ...]) -> np.ndarray:
    """Points of `geom` lying in the cell addressed by `word` (closed cell)."""
    w = Word(tuple(word))
    if w.level > geom.level:
        raise LevelMismatchError("indicator cell is deeper than the geometry")
    m = spec.branch_count
    block = m ** (geom.level - w.level)
    start = w.index(m) * block
    if isinstance(geom, DiscreteMeasure):
        return geom.atoms[start:start + block]
    ids = np.unique(geom.cells[start:start + block])
    return geom.coords[ids]


def _pointwise(fspec: FunctionSpec, spec: IfsSpec,
               geom: LevelGraph | DiscreteMeasure, pts: np.ndarray) -> np.ndarray:
    if isinstance(fspec, Constant):
        return np.full(pts.shape[0], float(fspec.value))
    if isinstance(fspec, Coordinate):
        return pts[:, fspec.axis].copy()
    if isinstance(fspec, DistancePower):
        base = spec.corner_points()[fspec.corner]
        d = np.hypot(pts[:, 0] - base[0], pts[:, 1] - base[1])
        return d ** fspec.gamma
    if isinstance(fspec, IndicatorCell):
        inside = _cell_member_points(spec, geom, fspec.word)
        d = cdist(pts, inside).min(axis=1)
        return np.clip(1.0 - d / fspec.smoothing, 0.0, 1.0)
    raise TypeError(f"not a pointwise spec: {fspec!r}")


def evaluate(fspec: FunctionSpec, spec: IfsSpec,
             geom: LevelGraph | DiscreteMeasure) -> VertexFunction | CellFunction:
    """Evaluate a function spec on a graph (vertex values) or measure (atoms).

    Extension-based specs are computed exactly on the vertex hierarchy; on a
    measure the gasket harmonic value at an atom is the mean of its cell's
    corner values, the Vicsek affine value is the center-vertex value (the
    barycenter of a Vicsek cell is its center vertex, so that one is exact).
    """
    _check_family(fspec, spec)
    if isinstance(fspec, (PiecewiseAffineVicsek, HarmonicExtensionGasket)):
        from . import harmonic  # deferred: harmonic builds on this module

        if isinstance(fspec, PiecewiseAffineVicsek):
            f_coarse = VertexFunction(fspec.level, np.asarray(fspec.values))
            if geom.level < fspec.level:
                raise LevelMismatchError("geometry is coarser than the affine data")
            extend = lambda target: harmonic.extend_vicsek(spec, f_coarse, target)
        else:
            f_coarse = VertexFunction(0, np.asarray(fspec.boundary))
            extend = lambda target: harmonic.extend_gasket(spec, f_coarse, target, fspec.p)

        if isinstance(geom, LevelGraph):
            return extend(geom.level)
        fine = extend(geom.level)
        graph = build_level_graph(spec, geom.level)
        cell_vals = fine.values[graph.cells]
        if spec.family is Family.VICSEK:
            vals = cell_vals[:, 4]  # center vertex == atom
        else:
            vals = cell_vals.mean(axis=1)
        return CellFunction(geom.level, vals)

    pts = geom.coords if isinstance(geom, LevelGraph) else geom.atoms
    vals = _pointwise(fspec, spec, geom, pts)
    if isinstance(geom, LevelGraph):
        return VertexFunction(geom.level, vals)
    return CellFunction(geom.level, vals)


def restrict(f: CellFunction, spec: IfsSpec, n: int,
             graph_fine: LevelGraph | None = None) -> VertexFunction:
    """Vertex averages over the union of (n+1)-cells containing each vertex.

    The value at v in V_n is the mean of f over all level-N atoms whose word
    has a prefix among the (n+1)-cells incident to v; cells carry equal mass,
    so this is the measure average over K*_{n+1}(v).
    """
    if n + 1 > f.level:
        raise LevelMismatchError(f"need n+1 <= {f.level}, got n={n}")
    m = spec.branch_count
    if graph_fine is None or graph_fine.level != n + 1:
        graph_fine = build_level_graph(spec, n + 1)
    block = m ** (f.level - (n + 1))
    cell_means = f.values.reshape(-1, block).mean(axis=1)  # one mean per (n+1)-cell

    coarse = build_level_graph(spec, n)
    ratio = spec.inv_ratio
    sums = np.zeros(coarse.vertex_count)
    counts = np.zeros(coarse.vertex_count)
    fine_ids = np.full(coarse.vertex_count, -1, dtype=np.int64)
    for vid, (a, b) in enumerate(coarse.keys):
        fine_ids[vid] = graph_fine.vertex_id((int(a) * ratio, int(b) * ratio))
    # Incidence: scan the fine cells once, crediting their coarse corner owners.
    lookup = {int(fid): i for i, fid in enumerate(fine_ids)}
    for cell_idx, corner_ids in enumerate(graph_fine.cells):
        for fid in corner_ids:
            owner = lookup.get(int(fid))
            if owner is not None:
                sums[owner] += cell_means[cell_idx]
                counts[owner] += 1
    return VertexFunction(n, sums / counts)


def incident_cell_counts(spec: IfsSpec, n: int) -> np.ndarray:
    """Number of (n+1)-cells containing each vertex of V_n (1 or 2 here)."""
    graph_fine = build_level_graph(spec, n + 1)
    coarse = build_level_graph(spec, n)
    ratio = spec.inv_ratio
    counts = np.zeros(coarse.vertex_count, dtype=np.int64)
    lookup = {}
    for vid, (a, b) in enumerate(coarse.keys):
        lookup[graph_fine.vertex_id((int(a) * ratio, int(b) * ratio))] = vid
    for corner_ids in graph_fine.cells:
        for fid in corner_ids:
            owner = lookup.get(int(fid))
            if owner is not None:
                counts[owner] += 1
    return counts


def corpus(spec: IfsSpec, p: float) -> list[FunctionSpec]:
    """Deterministic corpus shared by every verifier.

    Contains a constant (excluded by scanners, exercises the zero paths),
    both coordinates, three distance powers, the family's energy-critical
    member (piecewise affine / p-harmonic) and a sharp indicator ramp.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    members: list[FunctionSpec] = [
        Constant(1.0),
        Coordinate(0),
        Coordinate(1),
        DistancePower(0, 0.5),
        DistancePower(0, 1.0),
        DistancePower(0, 2.0),
    ]
    if spec.family is Family.VICSEK:
        members.append(PiecewiseAffineVicsek(0, (1.0, 0.0, 0.0, 0.0, 0.25)))
    else:
        members.append(HarmonicExtensionGasket(p, (1.0, 0.0, 0.0)))
    members.append(IndicatorCell((0,), smoothing=0.02))
    return members


def label(fspec: FunctionSpec) -> str:
    return fspec.label()
