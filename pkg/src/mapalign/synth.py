"""Synthetic benchmark construction: calibrated Gaussian GPS noise and
ground-truth-preserving node shuffles."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import meters_to_degrees
from .graph import GeoNode, Road, RoadGraph

# Standard deviation of GPS error in metres; levels scale it.
BASE_SIGMA_METERS = 4.07

NOISE_LEVELS = {"low": 1.0, "medium": 5.0, "high": 10.0}


@dataclass(frozen=True)
class NoiseConfig:
    sigma_meters: float = BASE_SIGMA_METERS
    level: str | float = "low"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_meters < 0.0:
            raise ValueError("sigma_meters must be nonnegative")
        if isinstance(self.level, str) and self.level not in NOISE_LEVELS:
            raise ValueError(f"level must be one of {sorted(NOISE_LEVELS)} or a multiplier")

    @property
    def effective_sigma(self) -> float:
        mult = NOISE_LEVELS[self.level] if isinstance(self.level, str) else float(self.level)
        return self.sigma_meters * mult


@dataclass(frozen=True)
class ShuffleRecord:
    """Bijection old node id -> new node id, with the implied ground truth."""

    permutation: dict[str, str]

    def node_pairs(self) -> set[tuple[str, str]]:
        return set(self.permutation.items())

    def inverse(self) -> dict[str, str]:
        return {new: old for old, new in self.permutation.items()}


def perturb(graph: RoadGraph, cfg: NoiseConfig) -> RoadGraph:
    """Independent Gaussian offsets (metres, per axis) applied to every node;
    topology, identifiers, and roads are untouched.  Deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    sigma = cfg.effective_sigma
    nodes = []
    order = sorted(graph.node_order())
    offsets = {nid: rng.normal(0.0, sigma, size=2) for nid in order}
    for node in graph.iter_nodes():
        north_m, east_m = offsets[node.node_id]
        if sigma == 0.0:
            nodes.append(node)
            continue
        dlat, dlon = meters_to_degrees(north_m, east_m, node.lat)
        nodes.append(GeoNode(node.node_id, node.lat + dlat, node.lon + dlon))
    return RoadGraph(nodes, list(graph.iter_edges()), list(graph.iter_roads()))


def shuffle_nodes(graph: RoadGraph, seed: int) -> tuple[RoadGraph, ShuffleRecord]:
    """Permute node identifiers and storage order uniformly at random; geometry
    and topology stay isomorphic, and the record yields exact ground truth.

    Road ids are preserved, so the implied road correspondence is the identity.
    """
    rng = np.random.default_rng(seed)
    old_order = graph.node_order()
    ids = sorted(old_order)
    relabel = dict(zip(ids, [ids[i] for i in rng.permutation(len(ids))]))

    renamed = {
        old: GeoNode(relabel[old], graph.node(old).lat, graph.node(old).lon) for old in old_order
    }
    storage = rng.permutation(len(old_order))
    nodes = [renamed[old_order[i]] for i in storage]
    edges = [(relabel[u], relabel[v]) for u, v in graph.iter_edges()]
    roads = [Road(r.road_id, tuple(relabel[n] for n in r.nodes)) for r in graph.iter_roads()]
    return RoadGraph(nodes, edges, roads), ShuffleRecord(permutation=relabel)


def apply_node_relabel(graph: RoadGraph, relabel: dict[str, str]) -> RoadGraph:
    """Rebuild `graph` under a node-id relabelling (used to invert shuffles)."""
    nodes = [GeoNode(relabel[n.node_id], n.lat, n.lon) for n in graph.iter_nodes()]
    edges = [(relabel[u], relabel[v]) for u, v in graph.iter_edges()]
    roads = [Road(r.road_id, tuple(relabel[n] for n in r.nodes)) for r in graph.iter_roads()]
    return RoadGraph(nodes, edges, roads)


def synthetic_city(
    rows: int,
    cols: int,
    seed: int,
    block_m: float = 90.0,
    intermediates: int = 1,
    drop_fraction: float = 0.05,
    lat0: float = 31.22,
    lon0: float = 121.46,
) -> RoadGraph:
    """Procedural street grid used for bundled benchmark fixtures.

    Jittered intersections (so the point set has no symmetries), a few curve
    nodes per block edge, and a small fraction of dropped block edges to vary
    node degrees.  Streets become roads, split where an edge was dropped.
    Deterministic per seed.
    """
    if rows < 2 or cols < 2:
        raise ValueError("city grid needs at least 2x2 intersections")
    rng = np.random.default_rng(seed)
    lat_scale = 1.0 / 111_320.0
    lon_scale = 1.0 / (111_320.0 * np.cos(np.radians(lat0)))

    def to_lat_lon(x_m: float, y_m: float) -> tuple[float, float]:
        return lat0 + y_m * lat_scale, lon0 + x_m * lon_scale

    corners: dict[tuple[int, int], GeoNode] = {}
    nodes: list[GeoNode] = []
    for i in range(rows):
        for j in range(cols):
            jy, jx = rng.uniform(-0.22, 0.22, size=2) * block_m
            lat, lon = to_lat_lon(j * block_m + jx, i * block_m + jy)
            node = GeoNode(f"x{i}_{j}", lat, lon)
            corners[(i, j)] = node
            nodes.append(node)

    edges: list[tuple[str, str]] = []
    roads: list[Road] = []
    mid_counter = 0

    def build_segment(a: GeoNode, b: GeoNode) -> list[str]:
        """Chain a -> b through `intermediates` jittered curve nodes."""
        nonlocal mid_counter
        chain = [a.node_id]
        for k in range(1, intermediates + 1):
            t = k / (intermediates + 1)
            lat = a.lat + (b.lat - a.lat) * t + rng.uniform(-0.06, 0.06) * block_m * lat_scale
            lon = a.lon + (b.lon - a.lon) * t + rng.uniform(-0.06, 0.06) * block_m * lon_scale
            node = GeoNode(f"m{mid_counter}", lat, lon)
            mid_counter += 1
            nodes.append(node)
            chain.append(node.node_id)
        chain.append(b.node_id)
        edges.extend(zip(chain, chain[1:]))
        return chain

    def build_street(street_id: str, ends: list[tuple[GeoNode, GeoNode]]) -> None:
        run: list[str] = []
        part = 0
        for a, b in ends:
            if rng.random() < drop_fraction:
                if len(run) >= 2:
                    roads.append(Road(f"{street_id}#{part}", tuple(run)))
                    part += 1
                run = []
                continue
            chain = build_segment(a, b)
            run = run[:-1] + chain if run else chain
        if len(run) >= 2:
            roads.append(Road(f"{street_id}#{part}", tuple(run)))

    for i in range(rows):
        build_street(f"h{i}", [(corners[(i, j)], corners[(i, j + 1)]) for j in range(cols - 1)])
    for j in range(cols):
        build_street(f"v{j}", [(corners[(i, j)], corners[(i + 1, j)]) for i in range(rows - 1)])

    used = {nid for road in roads for nid in road.nodes}
    return RoadGraph([n for n in nodes if n.node_id in used], edges, roads)


# -- ground-truth files ----------------------------------------------------------


def write_node_pairs_csv(path: str | Path, pairs: set[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src_node_id", "dst_node_id"])
        for src, dst in sorted(pairs):
            writer.writerow([src, dst])


def write_road_pairs_csv(path: str | Path, pairs: set[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src_road_id", "dst_road_id"])
        for src, dst in sorted(pairs):
            writer.writerow([src, dst])


def _read_pairs(path: str | Path, header: list[str]) -> set[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise ValueError(f"{path}: expected header {','.join(header)}")
        return {(row[0], row[1]) for row in reader if row}


def read_node_pairs_csv(path: str | Path) -> set[tuple[str, str]]:
    return _read_pairs(path, ["src_node_id", "dst_node_id"])


def read_road_pairs_csv(path: str | Path) -> set[tuple[str, str]]:
    return _read_pairs(path, ["src_road_id", "dst_road_id"])
