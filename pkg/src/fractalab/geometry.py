"""Exact discretizations of the Vicsek set and the Sierpinski gasket.

Both families are built from their iterated function systems on integer
lattice keys, so vertex identification across cells is exact and float-free.
A vertex at level n has key (a, b) and planar coordinates

    x = a / S_n,      y = b * y_unit / S_n,      S_n = base_scale / rho^n,

with y_unit = 1 for the Vicsek set (unit square frame) and y_unit = sqrt(3)
for the gasket (corners (0,0), (2,0), (1, sqrt3)).  Two metrics are exposed:
the Euclidean metric of the frame and the graph geodesic metric in which
every level-n edge has length rho^n (this normalizes the Vicsek skeleton
diameter to 2 and the gasket side to 1; the two metrics are bi-Lipschitz
equivalent, so every exponent computed downstream is metric-independent).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from scipy.spatial.distance import cdist

from .errors import ResolutionError, ResourceLimitError

SQRT3 = math.sqrt(3.0)

#: Discrete balls of radius below RESOLUTION_FACTOR * rho^N degenerate; all
#: ball queries enforce r >= RESOLUTION_FACTOR * rho^N.
RESOLUTION_FACTOR = 4.0


class Family(str, Enum):
    VICSEK = "vicsek"
    GASKET = "gasket"


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    GEODESIC = "geodesic"


#: Hard level caps keep dense pairwise work and vertex arrays desk-sized.
MAX_LEVEL = {Family.VICSEK: 6, Family.GASKET: 9}

# Per-cell edges as corner-index pairs. Vicsek cells are crosses (center to
# each of the four square corners), gasket cells are triangles.
_EDGE_PAIRS = {
    Family.VICSEK: ((4, 0), (4, 1), (4, 2), (4, 3)),
    Family.GASKET: ((0, 1), (1, 2), (2, 0)),
}


@dataclass(frozen=True)
class IfsSpec:
    """Immutable description of one self-similar family.

    corner_keys are the integer lattice keys of the contraction fixed points
    at the base scale.  walk_dim is derived, not assumed: for the gasket it
    comes from alpha_2 = d_w/2 with r_2 = 3/5 (d_w = log5/log2), for the
    Vicsek set from alpha_2 = 1 + (d_h-1)/2 = d_w/2 (d_w = log15/log3).
    """

    family: Family
    branch_count: int
    contraction_ratio: Fraction
    corner_keys: tuple[tuple[int, int], ...]
    base_scale: int
    y_unit: float
    hausdorff_dim: float
    walk_dim: float

    @property
    def inv_ratio(self) -> int:
        return int(1 / self.contraction_ratio)

    def key_scale(self, level: int) -> int:
        """Denominator S_n turning level-n keys into frame coordinates."""
        return self.base_scale * self.inv_ratio**level

    @property
    def time_scale_factor(self) -> int:
        """Walk-time refinement per level: rho^{-d_w} (15 Vicsek, 5 gasket)."""
        return round(self.inv_ratio**self.walk_dim)

    @property
    def corner_count(self) -> int:
        return len(self.corner_keys)

    def corner_points(self) -> np.ndarray:
        keys = np.asarray(self.corner_keys, dtype=np.int64)
        return _keys_to_coords(self, keys, 0)

    def diameter(self, metric: Metric) -> float:
        if metric is Metric.GEODESIC:
            # Edge lengths rho^n: skeleton diameter 2 (Vicsek), side 1 (gasket).
            return 2.0 if self.family is Family.VICSEK else 1.0
        return math.sqrt(2.0) if self.family is Family.VICSEK else 2.0

    def resolution_floor(self, level: int) -> float:
        return RESOLUTION_FACTOR * float(self.contraction_ratio) ** level


def make_spec(family: Family | str) -> IfsSpec:
    family = Family(family)
    if family is Family.VICSEK:
        return IfsSpec(
            family=family,
            branch_count=5,
            contraction_ratio=Fraction(1, 3),
            corner_keys=((0, 0), (2, 0), (2, 2), (0, 2), (1, 1)),
            base_scale=2,
            y_unit=1.0,
            hausdorff_dim=math.log(5) / math.log(3),
            walk_dim=math.log(15) / math.log(3),
        )
    return IfsSpec(
        family=family,
        branch_count=3,
        contraction_ratio=Fraction(1, 2),
        corner_keys=((0, 0), (2, 0), (1, 1)),
        base_scale=1,
        y_unit=SQRT3,
        hausdorff_dim=math.log(3) / math.log(2),
        walk_dim=math.log(5) / math.log(2),
    )


@dataclass(frozen=True)
class Word:
    """Address of an n-cell: the contraction indices applied outermost first."""

    digits: tuple[int, ...]

    @property
    def level(self) -> int:
        return len(self.digits)

    def index(self, branch_count: int) -> int:
        idx = 0
        for d in self.digits:
            idx = idx * branch_count + d
        return idx


def _keys_to_coords(spec: IfsSpec, keys: np.ndarray, level: int) -> np.ndarray:
    scale = float(spec.key_scale(level))
    coords = keys.astype(np.float64)
    coords[..., 0] /= scale
    coords[..., 1] *= spec.y_unit / scale
    return coords


def _word_digits(branch_count: int, level: int) -> np.ndarray:
    """All words of the given level as digit rows, lexicographic order."""
    count = branch_count**level
    idx = np.arange(count, dtype=np.int64)
    powers = branch_count ** np.arange(level - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % branch_count


def _cell_offsets(spec: IfsSpec, digits: np.ndarray) -> np.ndarray:
    """Integer key offset of each cell: sum_k c1 * inv^(n-1-k) * corner[digit_k]."""
    level = digits.shape[1]
    corners = np.asarray(spec.corner_keys, dtype=np.int64)
    c1 = spec.inv_ratio - 1  # (1-rho)/rho: 2 for Vicsek, 1 for gasket
    shifts = c1 * spec.inv_ratio ** np.arange(level - 1, -1, -1, dtype=np.int64)
    offsets = np.zeros((digits.shape[0], 2), dtype=np.int64)
    for k in range(level):
        offsets += shifts[k] * corners[digits[:, k]]
    return offsets


def _check_level(spec: IfsSpec, level: int) -> None:
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    if level > MAX_LEVEL[spec.family]:
        estimate = spec.branch_count**level
        raise ResourceLimitError(
            f"level {level} exceeds the {spec.family.value} cap "
            f"{MAX_LEVEL[spec.family]} (would allocate ~{estimate} cells)",
            estimated_size=estimate,
        )


@dataclass(frozen=True)
class LevelGraph:
    """Deduplicated level-n vertex set with cell-structured adjacency.

    Vertices are sorted by lexicographic lattice key, so ids are deterministic.
    cells[w] holds the vertex ids of the w-th cell's corner images in the
    corner order of the spec; edges enumerate each unordered cell edge once.
    """

    spec: IfsSpec
    level: int
    keys: np.ndarray        # (V, 2) int64, lex-sorted
    coords: np.ndarray      # (V, 2) float64
    cells: np.ndarray       # (m^n, corner_count) vertex ids
    edges_u: np.ndarray     # (E,) vertex ids
    edges_v: np.ndarray     # (E,)
    edge_word: np.ndarray   # (E,) owning cell index
    _vertex_index: dict = field(repr=False, compare=False)

    @property
    def vertex_count(self) -> int:
        return self.keys.shape[0]

    @property
    def edge_count(self) -> int:
        return self.edges_u.shape[0]

    @property
    def edge_length(self) -> float:
        return float(self.spec.contraction_ratio) ** self.level

    def vertex_id(self, key: tuple[int, int]) -> int:
        return self._vertex_index[key]

    def has_key(self, key: tuple[int, int]) -> bool:
        return key in self._vertex_index

    def adjacency(self) -> csr_matrix:
        ones = np.ones(2 * self.edge_count)
        rows = np.concatenate([self.edges_u, self.edges_v])
        cols = np.concatenate([self.edges_v, self.edges_u])
        n = self.vertex_count
        return csr_matrix((ones, (rows, cols)), shape=(n, n))

    def hop_distances(self, sources: np.ndarray | None = None) -> np.ndarray:
        """Unweighted shortest-path hop counts from the given source vertices."""
        adj = self.adjacency()
        if sources is None:
            sources = np.arange(self.vertex_count)
        hops = shortest_path(adj, method="D", unweighted=True, indices=sources)
        return hops


def build_level_graph(spec: IfsSpec, level: int) -> LevelGraph:
    """Construct the level-n graph by exact lattice-key deduplication."""
    _check_level(spec, level)
    digits = _word_digits(spec.branch_count, level)
    offsets = _cell_offsets(spec, digits)
    corners = np.asarray(spec.corner_keys, dtype=np.int64)
    cell_keys = offsets[:, None, :] + corners[None, :, :]  # (cells, nc, 2)

    flat = cell_keys.reshape(-1, 2)
    keys, inverse = np.unique(flat, axis=0, return_inverse=True)
    cells = inverse.reshape(cell_keys.shape[0], cell_keys.shape[1]).astype(np.int64)

    pairs = _EDGE_PAIRS[spec.family]
    edges_u = np.concatenate([cells[:, i] for i, _ in pairs])
    edges_v = np.concatenate([cells[:, j] for _, j in pairs])
    edge_word = np.tile(np.arange(cells.shape[0], dtype=np.int64), len(pairs))
    # Reorder so edges group by owning word, matching per-cell enumeration.
    order = np.lexsort((edges_v, edges_u, edge_word))
    edges_u, edges_v, edge_word = edges_u[order], edges_v[order], edge_word[order]

    coords = _keys_to_coords(spec, keys.copy(), level)
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(keys)}
    for arr in (keys, coords, cells, edges_u, edges_v, edge_word):
        arr.flags.writeable = False
    return LevelGraph(
        spec=spec, level=level, keys=keys, coords=coords, cells=cells,
        edges_u=edges_u, edges_v=edges_v, edge_word=edge_word,
        _vertex_index=index,
    )


@lru_cache(maxsize=64)
def cached_graph(spec: IfsSpec, level: int) -> LevelGraph:
    """Memoized build_level_graph; safe because graphs are immutable."""
    return build_level_graph(spec, level)


def geodesic_distance(g: LevelGraph, u: int, v: int) -> float:
    """Graph geodesic between vertex ids: BFS hop count times rho^n."""
    if u == v:
        return 0.0
    adj = g.adjacency()
    indptr, indices = adj.indptr, adj.indices
    seen = np.full(g.vertex_count, -1, dtype=np.int64)
    seen[u] = 0
    queue = deque([u])
    while queue:
        x = queue.popleft()
        for y in indices[indptr[x]:indptr[x + 1]]:
            if seen[y] < 0:
                seen[y] = seen[x] + 1
                if y == v:
                    return float(seen[y]) * g.edge_length
                queue.append(y)
    raise RuntimeError("graph is connected by construction")  # pragma: no cover


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.hypot(*(a - b)))


@dataclass(frozen=True)
class DiscreteMeasure:
    """Level-N atomic approximation of the normalized Hausdorff measure.

    One atom per word of W_N, placed at the cell barycenter, uniform weight
    m^-N.  Atoms are enumerated in lexicographic word order so the atoms below
    any prefix word form a contiguous block.
    """

    spec: IfsSpec
    level: int
    words: np.ndarray   # (M, N) uint8 digit rows
    atoms: np.ndarray   # (M, 2) float64 coordinates
    weight: float

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[0]

    @property
    def resolution_floor(self) -> float:
        return self.spec.resolution_floor(self.level)

    def prefix_block(self, word: Word) -> slice:
        """Index range of the atoms lying in the cell addressed by `word`."""
        if word.level > self.level:
            raise ValueError("prefix word deeper than the measure level")
        m = self.spec.branch_count
        block = m ** (self.level - word.level)
        start = word.index(m) * block
        return slice(start, start + block)

    def word_of(self, i: int) -> Word:
        return Word(tuple(int(d) for d in self.words[i]))


def build_measure(spec: IfsSpec, level: int) -> DiscreteMeasure:
    _check_level(spec, level)
    digits = _word_digits(spec.branch_count, level)
    offsets = _cell_offsets(spec, digits)
    corners = np.asarray(spec.corner_keys, dtype=np.int64)
    bary_key = offsets.astype(np.float64) + corners.mean(axis=0)[None, :]
    scale = float(spec.key_scale(level))
    atoms = np.empty_like(bary_key)
    atoms[:, 0] = bary_key[:, 0] / scale
    atoms[:, 1] = bary_key[:, 1] * spec.y_unit / scale
    words = digits.astype(np.uint8)
    for arr in (words, atoms):
        arr.flags.writeable = False
    return DiscreteMeasure(
        spec=spec, level=level, words=words, atoms=atoms,
        weight=float(spec.branch_count) ** (-level),
    )


class DistanceOracle:
    """Pairwise distance oracle over measure atoms with a cached full matrix."""

    def __init__(self, metric: Metric, matrix: np.ndarray):
        matrix.flags.writeable = False
        self.metric = metric
        self._matrix = matrix

    def matrix(self) -> np.ndarray:
        return self._matrix

    def pair(self, i: int, j: int) -> float:
        return float(self._matrix[i, j])


def euclidean_oracle(mu: DiscreteMeasure) -> DistanceOracle:
    return DistanceOracle(Metric.EUCLIDEAN, cdist(mu.atoms, mu.atoms))


# Representative corner used to pull cell geodesics from the level graph. The
# Vicsek barycenter *is* the cell center vertex, so its geodesics are exact;
# gasket representatives sit at corner 0, an O(rho^N) perturbation below the
# resolution floor.
_GEO_REP_CORNER = {Family.VICSEK: 4, Family.GASKET: 0}


def geodesic_oracle(mu: DiscreteMeasure, graph: LevelGraph | None = None,
                    chunk: int = 512) -> DistanceOracle:
    spec = mu.spec
    if graph is None:
        graph = build_level_graph(spec, mu.level)
    if graph.level != mu.level:
        raise ValueError("graph level must match the measure level")
    reps = graph.cells[:, _GEO_REP_CORNER[spec.family]]
    adj = graph.adjacency()
    blocks = []
    for start in range(0, reps.shape[0], chunk):
        src = reps[start:start + chunk]
        hops = shortest_path(adj, method="D", unweighted=True, indices=src)
        blocks.append(hops[:, reps])
    matrix = np.vstack(blocks) * graph.edge_length
    return DistanceOracle(Metric.GEODESIC, matrix)


def measure_oracle(mu: DiscreteMeasure, metric: Metric | str,
                   graph: LevelGraph | None = None) -> DistanceOracle:
    metric = Metric(metric)
    if metric is Metric.EUCLIDEAN:
        return euclidean_oracle(mu)
    return geodesic_oracle(mu, graph=graph)


def _check_radius(mu: DiscreteMeasure, r: float) -> None:
    floor = mu.resolution_floor
    if r < floor:
        raise ResolutionError(
            f"radius {r:.6g} is below the resolution floor {floor:.6g} "
            f"at level {mu.level}"
        )


def ball_measure(mu: DiscreteMeasure, oracle: DistanceOracle, x: int, r: float) -> float:
    """Mass of the open discrete ball B(x, r): sum of weights with d(x,y) < r."""
    _check_radius(mu, r)
    row = oracle.matrix()[x]
    return float(np.count_nonzero(row < r)) * mu.weight


def sample_point(spec: IfsSpec, level: int, rng: np.random.Generator) -> Word:
    """Uniform word of W_N: exact sampling of the self-similar measure."""
    digits = rng.integers(0, spec.branch_count, size=level)
    return Word(tuple(int(d) for d in digits))


@dataclass(frozen=True)
class EpsNet:
    """Greedy maximal eps-separated subset of the atoms with covering map."""

    eps: float
    centers: np.ndarray      # atom ids, in greedy (ascending) order
    assignment: np.ndarray   # atom id -> position in centers
    overlap: dict            # dilation factor k -> max multiplicity of B(a, k*eps)


def build_eps_net(mu: DiscreteMeasure, oracle: DistanceOracle, eps: float,
                  overlap_factors: tuple[int, ...] = (2, 5)) -> EpsNet:
    _check_radius(mu, eps)
    dist = oracle.matrix()
    n = mu.atom_count
    centers: list[int] = []
    min_dist = np.full(n, np.inf)
    for i in range(n):
        if min_dist[i] >= eps:
            centers.append(i)
            min_dist = np.minimum(min_dist, dist[i])
    centers_arr = np.asarray(centers, dtype=np.int64)
    to_centers = dist[:, centers_arr]
    assignment = np.argmin(to_centers, axis=1).astype(np.int64)
    if not np.all(np.min(to_centers, axis=1) < eps):
        raise RuntimeError("greedy maximal separated set failed to cover")  # pragma: no cover
    overlap = {
        int(k): int(np.max(np.count_nonzero(to_centers < k * eps, axis=1)))
        for k in overlap_factors
    }
    return EpsNet(eps=eps, centers=centers_arr, assignment=assignment, overlap=overlap)
