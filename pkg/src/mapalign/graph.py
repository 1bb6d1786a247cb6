"""Road-network graph model and per-node/per-edge geometric features.

A map is an undirected simple graph whose nodes carry WGS84 coordinates and
whose roads are ordered node sequences riding on the edge set.  All types are
immutable after construction and safe to share across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geo import great_circle_distance


class GraphValidationError(ValueError):
    """Raised when graph parts violate the structural invariants."""


Edge = tuple[str, str]


def canonical_edge(u: str, v: str) -> Edge:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class GeoNode:
    node_id: str
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise GraphValidationError(f"node {self.node_id}: latitude {self.lat} out of range")
        if not (-180.0 <= self.lon <= 180.0):
            raise GraphValidationError(f"node {self.node_id}: longitude {self.lon} out of range")


@dataclass(frozen=True)
class Road:
    road_id: str
    nodes: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.nodes) < 2:
            raise GraphValidationError(f"road {self.road_id}: needs at least 2 nodes")


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if self.lat_min > self.lat_max or self.lon_min > self.lon_max:
            raise GraphValidationError("bounding box min exceeds max")

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            lat_min=min(self.lat_min, other.lat_min),
            lat_max=max(self.lat_max, other.lat_max),
            lon_min=min(self.lon_min, other.lon_min),
            lon_max=max(self.lon_max, other.lon_max),
        )


class RoadGraph:
    """Undirected simple graph with geographic nodes and roads.

    Node iteration order is the insertion order of `nodes`, which fixes the
    row order of every matrix derived from the graph.
    """

    def __init__(self, nodes: list[GeoNode], edges: list[Edge], roads: list[Road]):
        self._nodes: dict[str, GeoNode] = {}
        for node in nodes:
            if node.node_id in self._nodes:
                raise GraphValidationError(f"duplicate node id {node.node_id!r}")
            self._nodes[node.node_id] = node

        self._edges: dict[Edge, None] = {}
        self._adjacency: dict[str, set[str]] = {nid: set() for nid in self._nodes}
        for u, v in edges:
            if u == v:
                raise GraphValidationError(f"self-loop at node {u!r}")
            if u not in self._nodes or v not in self._nodes:
                raise GraphValidationError(f"edge ({u!r}, {v!r}) references a missing node")
            key = canonical_edge(u, v)
            if key in self._edges:
                continue  # multi-edges collapse
            self._edges[key] = None
            self._adjacency[u].add(v)
            self._adjacency[v].add(u)

        self._roads: dict[str, Road] = {}
        self._node_to_roads: dict[str, set[str]] = {nid: set() for nid in self._nodes}
        for road in roads:
            if road.road_id in self._roads:
                raise GraphValidationError(f"duplicate road id {road.road_id!r}")
            for a, b in zip(road.nodes, road.nodes[1:]):
                if canonical_edge(a, b) not in self._edges:
                    raise GraphValidationError(
                        f"road {road.road_id!r}: consecutive pair ({a!r}, {b!r}) is not an edge"
                    )
            self._roads[road.road_id] = road
            for nid in road.nodes:
                self._node_to_roads[nid].add(road.road_id)

    # -- accessors ---------------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    @property
    def road_count(self) -> int:
        return len(self._roads)

    def node(self, node_id: str) -> GeoNode:
        return self._nodes[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def node_order(self) -> tuple[str, ...]:
        return tuple(self._nodes)

    def iter_nodes(self) -> tuple[GeoNode, ...]:
        return tuple(self._nodes.values())

    def iter_edges(self) -> tuple[Edge, ...]:
        return tuple(self._edges)

    def iter_roads(self) -> tuple[Road, ...]:
        return tuple(self._roads.values())

    def road(self, road_id: str) -> Road:
        return self._roads[road_id]

    def has_road(self, road_id: str) -> bool:
        return road_id in self._roads

    def neighbors(self, node_id: str) -> frozenset[str]:
        if node_id not in self._adjacency:
            raise KeyError(f"unknown node id {node_id!r}")
        return frozenset(self._adjacency[node_id])

    def degree(self, node_id: str) -> int:
        if node_id not in self._adjacency:
            raise KeyError(f"unknown node id {node_id!r}")
        return len(self._adjacency[node_id])

    def roads_of(self, node_id: str) -> frozenset[str]:
        if node_id not in self._node_to_roads:
            raise KeyError(f"unknown node id {node_id!r}")
        return frozenset(self._node_to_roads[node_id])

    def bounding_box(self) -> BoundingBox:
        if not self._nodes:
            raise GraphValidationError("empty graph has no bounding box")
        lats = [n.lat for n in self._nodes.values()]
        lons = [n.lon for n in self._nodes.values()]
        return BoundingBox(min(lats), max(lats), min(lons), max(lons))

    def coordinate_matrix(self) -> np.ndarray:
        """Raw (lat, lon) rows in node order."""
        return np.array([[n.lat, n.lon] for n in self._nodes.values()], dtype=np.float64).reshape(-1, 2)

    def subgraph(self, node_ids: set[str]) -> "RoadGraph":
        """Induced subgraph on `node_ids`, preserving node order; roads are
        dropped (tile-level training only consumes nodes and edges)."""
        nodes = [n for n in self._nodes.values() if n.node_id in node_ids]
        edges = [(u, v) for (u, v) in self._edges if u in node_ids and v in node_ids]
        return RoadGraph(nodes, edges, [])


@dataclass(frozen=True)
class PseudoCoordinates:
    """Per-map min-max normalised node positions in [0, 1]^2."""

    coords: np.ndarray
    source_bbox: BoundingBox
    node_order: tuple[str, ...]

    def row_of(self, node_id: str) -> np.ndarray:
        return self.coords[self.node_order.index(node_id)]


def build_pseudo_coordinates(graph: RoadGraph, bbox: BoundingBox | None = None) -> PseudoCoordinates:
    """Normalise raw coordinates to [0, 1]^2 within `bbox` (default: the
    graph's own bounding box).

    A degenerate axis (zero extent) maps to 0.5 for every node.
    """
    if graph.node_count == 0:
        raise GraphValidationError("cannot build pseudo coordinates for an empty graph")
    if bbox is None:
        bbox = graph.bounding_box()
    raw = graph.coordinate_matrix()
    out = np.empty_like(raw)
    for axis, (lo, hi) in enumerate(((bbox.lat_min, bbox.lat_max), (bbox.lon_min, bbox.lon_max))):
        span = hi - lo
        if span == 0.0:
            out[:, axis] = 0.5
        else:
            out[:, axis] = (raw[:, axis] - lo) / span
    return PseudoCoordinates(coords=out, source_bbox=bbox, node_order=graph.node_order())


@dataclass(frozen=True)
class EdgeFeatures:
    """Great-circle edge lengths in metres plus the graph-level scale used to
    normalise them before they enter the encoder."""

    lengths: dict[Edge, float]
    scale: float = field(default=1.0)

    def normalized(self, u: str, v: str) -> float:
        return self.lengths[canonical_edge(u, v)] / self.scale


def edge_features(graph: RoadGraph) -> EdgeFeatures:
    lengths: dict[Edge, float] = {}
    for u, v in graph.iter_edges():
        a = graph.node(u)
        b = graph.node(v)
        lengths[(u, v)] = great_circle_distance(a.lat, a.lon, b.lat, b.lon)
    scale = max(lengths.values()) if lengths else 0.0
    if scale <= 0.0:
        scale = 1.0
    return EdgeFeatures(lengths=lengths, scale=scale)


def normalized_degree(graph: RoadGraph, node_id: str) -> float:
    """One-hop-averaged degree: mean of degree(v) over v in N(u) plus u itself."""
    neigh = graph.neighbors(node_id)
    total = graph.degree(node_id) + sum(graph.degree(v) for v in neigh)
    return total / (len(neigh) + 1)


def normalized_degree_vector(graph: RoadGraph) -> np.ndarray:
    """normalized_degree for every node, in node order."""
    return np.array([normalized_degree(graph, nid) for nid in graph.node_order()], dtype=np.float64)
