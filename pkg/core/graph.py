"""
Plot Graph
Spatial and genotypic edge construction and the undirected plot graph used for message passing
"""
import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist
from sklearn.metrics.pairwise import haversine_distances

from core.errors import ConfigError, GraphError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8

Edge = Tuple[int, int]
EdgeSet = FrozenSet[Edge]


class EdgeMode(str, Enum):
    GLOBAL = "global"
    PER_NODE = "per-node"


class DistanceMetric(str, Enum):
    EUCLIDEAN = "euclidean"
    HAVERSINE = "haversine"


class EdgeProvenance(NamedTuple):
    spatial: bool
    genotypic: bool


@dataclass(frozen=True)
class GraphConfig:
    mode: str = EdgeMode.GLOBAL.value
    percentile: float = 3.0
    closed: bool = False
    metric: str = DistanceMetric.EUCLIDEAN.value

    def __post_init__(self):
        if self.mode not in {m.value for m in EdgeMode}:
            raise ConfigError(f"Unknown edge mode '{self.mode}' (expected global or per-node)")
        if self.metric not in {m.value for m in DistanceMetric}:
            raise ConfigError(f"Unknown distance metric '{self.metric}'")
        _check_percentile(self.percentile)


def _check_percentile(percentile: float):
    if not 0.0 < percentile <= 100.0:
        raise ConfigError(f"Percentile {percentile} outside (0, 100]")


def _normalize_edge(i: int, j: int) -> Edge:
    return (int(i), int(j)) if i < j else (int(j), int(i))


class AgriGraph:
    """Undirected simple graph over plots with per-edge provenance"""

    def __init__(self, node_count: int, provenance: Dict[Edge, EdgeProvenance]):
        self.node_count = int(node_count)
        self.provenance: Dict[Edge, EdgeProvenance] = dict(provenance)
        self.edges: EdgeSet = frozenset(self.provenance)

        lists: List[List[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            lists[i].append(j)
            lists[j].append(i)
        self.adjacency: Tuple[Tuple[int, ...], ...] = tuple(tuple(sorted(n)) for n in lists)
        self._adjacency_matrix: Optional[sparse.csr_matrix] = None

    def __repr__(self) -> str:
        return f"AgriGraph(nodes={self.node_count}, edges={len(self.edges)})"

    def neighbors(self, i: int) -> Tuple[int, ...]:
        if not 0 <= i < self.node_count:
            raise GraphError(f"Node {i} out of range for {self.node_count} nodes")
        return self.adjacency[i]

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=np.float64)

    @property
    def adjacency_matrix(self) -> sparse.csr_matrix:
        """Symmetric 0/1 CSR adjacency, built once"""
        if self._adjacency_matrix is None:
            if self.edges:
                pairs = np.array(sorted(self.edges), dtype=np.int64)
                rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
                cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
            else:
                rows = cols = np.empty(0, dtype=np.int64)
            data = np.ones(rows.size, dtype=np.float64)
            matrix = sparse.csr_matrix((data, (rows, cols)), shape=(self.node_count, self.node_count))
            matrix.sort_indices()
            self._adjacency_matrix = matrix
        return self._adjacency_matrix

    @classmethod
    def from_edge_lists(cls, node_count: int, spatial: EdgeSet = frozenset(),
                        genotypic: EdgeSet = frozenset()) -> "AgriGraph":
        return union_graph(spatial, genotypic, node_count)


def neighbors(g: AgriGraph, i: int) -> Tuple[int, ...]:
    return g.neighbors(i)


# ======================================================
# === Distances and thresholds ===
# ======================================================
def pairwise_distances(coords, metric: str = DistanceMetric.EUCLIDEAN.value) -> np.ndarray:
    """Symmetric n x n distance matrix with a zero diagonal"""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] < 1:
        raise GraphError(f"Coordinates must be an n x 2 array with n >= 1, got shape {coords.shape}")
    bad = np.flatnonzero(~np.isfinite(coords).all(axis=1))
    if bad.size:
        raise GraphError(f"Node {int(bad[0])} has a non-finite coordinate")

    if metric == DistanceMetric.EUCLIDEAN.value:
        d = cdist(coords, coords, metric='euclidean')
    elif metric == DistanceMetric.HAVERSINE.value:
        d = haversine_distances(np.radians(coords)) * EARTH_RADIUS_M
        d = (d + d.T) / 2.0
    else:
        raise ConfigError(f"Unknown distance metric '{metric}'")
    np.fill_diagonal(d, 0.0)
    return d


def _nearest_rank(percentile: float, count: int) -> int:
    return min(max(1, math.ceil(percentile * count / 100.0)), count)


def spatial_threshold(d: np.ndarray, percentile: float = 3.0) -> float:
    """Nearest-rank percentile of the distinct-pair distances that are non-zero"""
    _check_percentile(percentile)
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    values = d[np.triu_indices(n, k=1)]
    values = values[values > 0]
    if values.size == 0:
        raise GraphError("No pair of plots has a non-zero distance")
    rank = _nearest_rank(percentile, values.size)
    return float(np.partition(values, rank - 1)[rank - 1])


def _upper_edges(mask: np.ndarray) -> EdgeSet:
    rows, cols = np.nonzero(np.triu(mask, k=1))
    return frozenset(zip(rows.tolist(), cols.tolist()))


def build_spatial_edges(d: np.ndarray, mode: str = EdgeMode.GLOBAL.value,
                        percentile: float = 3.0, closed: bool = False) -> EdgeSet:
    """Connect plots closer than the percentile threshold; co-located plots never connect"""
    d = np.asarray(d, dtype=np.float64)
    threshold = spatial_threshold(d, percentile)
    positive = d > 0

    if mode == EdgeMode.GLOBAL.value:
        within = d <= threshold if closed else d < threshold
        edges = _upper_edges(positive & within)
        logger.info(f"Spatial threshold {threshold:.6g} ({percentile}th percentile) -> {len(edges)} edges")
        return edges

    if mode != EdgeMode.PER_NODE.value:
        raise ConfigError(f"Unknown edge mode '{mode}'")

    counts = positive.sum(axis=1)
    ordered = np.sort(np.where(positive, d, np.inf), axis=1)
    thresholds = np.full(d.shape[0], -np.inf)
    for i, m in enumerate(counts):
        if m:
            thresholds[i] = ordered[i, _nearest_rank(percentile, int(m)) - 1]
    within = d <= thresholds[:, None] if closed else d < thresholds[:, None]
    candidates = positive & within
    edges = _upper_edges(candidates | candidates.T)
    logger.info(f"Per-node spatial thresholds ({percentile}th percentile) -> {len(edges)} edges")
    return edges


def build_genotype_edges(populations: Sequence[Optional[str]]) -> EdgeSet:
    """Clique over every group of plots sharing a population label"""
    groups: Dict[str, List[int]] = {}
    for i, label in enumerate(populations):
        if label:
            groups.setdefault(label, []).append(i)
    edges = frozenset(
        pair for members in groups.values() for pair in itertools.combinations(members, 2)
    )
    logger.info(f"{len(groups)} populations -> {len(edges)} genotypic edges")
    return edges


def union_graph(spatial: EdgeSet, genotypic: EdgeSet, n: int) -> AgriGraph:
    """Merge both edge sets, keeping which source contributed each edge"""
    provenance: Dict[Edge, EdgeProvenance] = {}
    for source, edges in (('spatial', spatial), ('genotypic', genotypic)):
        for i, j in edges:
            if i == j:
                raise GraphError(f"Self-loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"Edge ({i}, {j}) references a node outside 0..{n - 1}")
            key = _normalize_edge(i, j)
            old = provenance.get(key, EdgeProvenance(False, False))
            provenance[key] = old._replace(**{source: True})
    return AgriGraph(n, provenance)


def build_graph(ds, config: GraphConfig = GraphConfig()) -> AgriGraph:
    """Spatial edges from plot coordinates plus genotypic cliques"""
    d = pairwise_distances(ds.coordinates, config.metric)
    spatial = build_spatial_edges(d, config.mode, config.percentile, config.closed)
    genotypic = build_genotype_edges(ds.populations)
    g = union_graph(spatial, genotypic, len(ds))
    logger.info(f"Built {g}")
    return g


# ======================================================
# === Reporting ===
# ======================================================
def graph_summary(g: AgriGraph) -> Dict[str, int]:
    spatial_only = sum(1 for p in g.provenance.values() if p.spatial and not p.genotypic)
    genotypic_only = sum(1 for p in g.provenance.values() if p.genotypic and not p.spatial)
    both = sum(1 for p in g.provenance.values() if p.spatial and p.genotypic)
    components, _ = connected_components(g.adjacency_matrix, directed=False)
    return {
        'nodes': g.node_count,
        'edges': len(g.edges),
        'spatial_only': spatial_only,
        'genotypic_only': genotypic_only,
        'both': both,
        'isolated_nodes': int(np.sum(g.degrees == 0)),
        'connected_components': int(components),
    }


def write_edges_csv(g: AgriGraph, path: str):
    rows = [
        (i, j, int(g.provenance[(i, j)].spatial), int(g.provenance[(i, j)].genotypic))
        for i, j in sorted(g.edges)
    ]
    frame = pd.DataFrame(rows, columns=['src', 'dst', 'spatial', 'genotypic'])
    frame.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote {len(rows)} edges to {path}")
