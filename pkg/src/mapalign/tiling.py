"""Large-map pipeline: overlapping k x k tiling, independent per-tile
matching, and majority-vote reconciliation with distance tie-breaking.

Tiles are matched in isolation (their own pseudo coordinate frames, their own
parameter copies and seeds), so they parallelise across processes; the vote
is a deterministic single-threaded reduction, making the final assignment
independent of worker count and scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import BoundingBox, RoadGraph, build_pseudo_coordinates
from .matching import (
    Assignment,
    EpochStats,
    SimilarityMatrix,
    TrainConfig,
    hard_assign,
    train_pair,
)

WORKERS_ENV_VAR = "MAPALIGN_WORKERS"

# Multiplier for deriving per-tile seeds; tile (0, 0) keeps the base seed so a
# 1 x 1 grid reproduces the untiled run exactly.
_TILE_SEED_STRIDE = 9973


@dataclass(frozen=True)
class TileSpec:
    k: int = 1
    overlap_ratio: float = 0.2
    max_nodes_per_tile: int = 3000

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.overlap_ratio < 0.5:
            raise ValueError("overlap_ratio must lie in (0, 0.5)")
        if self.max_nodes_per_tile < 1:
            raise ValueError("max_nodes_per_tile must be >= 1")


def suggest_k(graph_s: RoadGraph, graph_t: RoadGraph, max_nodes_per_tile: int = 3000) -> int:
    """Grid dimension that keeps the larger map under the advisory tile size."""
    nodes = max(graph_s.node_count, graph_t.node_count)
    return max(1, math.ceil(math.sqrt(nodes / max_nodes_per_tile)))


@dataclass(frozen=True)
class Tile:
    index: tuple[int, int]
    bbox: BoundingBox
    source_nodes: frozenset[str]
    target_nodes: frozenset[str]


@dataclass(frozen=True)
class TileMatch:
    tile: Tile
    assignment: Assignment
    similarity: SimilarityMatrix | None
    trace: list[EpochStats]

    @property
    def final_loss(self) -> float | None:
        return self.trace[-1].loss if self.trace else None


def partition(graph_s: RoadGraph, graph_t: RoadGraph, spec: TileSpec) -> list[Tile]:
    """k x k grid over the union bbox of both maps, each cell expanded by
    overlap_ratio of its extent on every side; fully empty tiles are dropped."""
    if graph_s.node_count == 0 or graph_t.node_count == 0:
        raise ValueError("both graphs must be non-empty")
    bbox = graph_s.bounding_box().union(graph_t.bounding_box())
    lat_step = (bbox.lat_max - bbox.lat_min) / spec.k
    lon_step = (bbox.lon_max - bbox.lon_min) / spec.k

    tiles: list[Tile] = []
    for row in range(spec.k):
        for col in range(spec.k):
            cell = BoundingBox(
                lat_min=bbox.lat_min + row * lat_step - spec.overlap_ratio * lat_step,
                lat_max=bbox.lat_min + (row + 1) * lat_step + spec.overlap_ratio * lat_step,
                lon_min=bbox.lon_min + col * lon_step - spec.overlap_ratio * lon_step,
                lon_max=bbox.lon_min + (col + 1) * lon_step + spec.overlap_ratio * lon_step,
            )

            def inside(graph: RoadGraph) -> frozenset[str]:
                return frozenset(
                    n.node_id
                    for n in graph.iter_nodes()
                    if cell.lat_min <= n.lat <= cell.lat_max and cell.lon_min <= n.lon <= cell.lon_max
                )

            source = inside(graph_s)
            target = inside(graph_t)
            if source or target:
                tiles.append(Tile(index=(row, col), bbox=cell, source_nodes=source, target_nodes=target))
    return tiles


def tile_seed(base_seed: int, index: tuple[int, int], k: int) -> int:
    row, col = index
    return base_seed + _TILE_SEED_STRIDE * (row * k + col)


def _match_one_tile(args: tuple[Tile, RoadGraph, RoadGraph, TrainConfig, int]) -> TileMatch:
    tile, graph_s, graph_t, cfg, k = args
    if not tile.source_nodes or not tile.target_nodes:
        return TileMatch(tile=tile, assignment=Assignment(match={}, confidence={}), similarity=None, trace=[])
    sub_s = graph_s.subgraph(set(tile.source_nodes))
    sub_t = graph_t.subgraph(set(tile.target_nodes))
    tile_cfg = TrainConfig(
        epochs=cfg.epochs,
        lr=cfg.lr,
        sinkhorn_iters=cfg.sinkhorn_iters,
        lam=cfg.lam,
        seed=tile_seed(cfg.seed, tile.index, k),
        shared_bbox=cfg.shared_bbox,
        alpha_fixed=cfg.alpha_fixed,
        temperature=cfg.temperature,
        raw_coordinates=cfg.raw_coordinates,
    )
    _, similarity, trace = train_pair(sub_s, sub_t, tile_cfg)
    return TileMatch(tile=tile, assignment=hard_assign(similarity), similarity=similarity, trace=trace)


def resolve_worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def match_tiles(
    graph_s: RoadGraph,
    graph_t: RoadGraph,
    tiles: list[Tile],
    cfg: TrainConfig,
    spec: TileSpec,
    workers: int | None = None,
) -> list[TileMatch]:
    """Train and assign every tile; results are ordered by tile index and do
    not depend on the worker count."""
    jobs = [(tile, graph_s, graph_t, cfg, spec.k) for tile in tiles]
    n_workers = resolve_worker_count(workers)
    if n_workers == 1 or len(jobs) == 1:
        results = [_match_one_tile(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
            results = list(pool.map(_match_one_tile, jobs))
    return sorted(results, key=lambda m: m.tile.index)


# -- vote --------------------------------------------------------------------


@dataclass
class Candidate:
    target: str
    probability: float  # summed confidence across proposing tiles
    distance: float  # pseudo distance in the full-map frames
    tiles: list[tuple[int, int]] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)


@dataclass
class VoteTable:
    candidates: dict[str, list[Candidate]]

    def conflict_count(self) -> int:
        return sum(1 for cands in self.candidates.values() if len(cands) > 1)


def build_vote_table(
    matches: list[TileMatch], graph_s: RoadGraph, graph_t: RoadGraph
) -> VoteTable:
    """Aggregate per-tile proposals; the tie-break distance is measured in the
    full-map per-map pseudo coordinate frames so it is comparable across tiles."""
    pseudo_s = build_pseudo_coordinates(graph_s)
    pseudo_t = build_pseudo_coordinates(graph_t)
    row_s = {nid: i for i, nid in enumerate(pseudo_s.node_order)}
    row_t = {nid: i for i, nid in enumerate(pseudo_t.node_order)}

    table: dict[str, dict[str, Candidate]] = {}
    for match in matches:
        for src, dst in match.assignment.match.items():
            if dst is None:
                continue
            per_src = table.setdefault(src, {})
            cand = per_src.get(dst)
            if cand is None:
                dist = float(
                    np.linalg.norm(pseudo_s.coords[row_s[src]] - pseudo_t.coords[row_t[dst]])
                )
                cand = Candidate(target=dst, probability=0.0, distance=dist)
                per_src[dst] = cand
            confidence = match.assignment.confidence[src]
            cand.probability += confidence
            cand.confidences.append(confidence)
            cand.tiles.append(match.tile.index)
    return VoteTable(
        candidates={src: sorted(cands.values(), key=lambda c: c.target) for src, cands in table.items()}
    )


def vote(table: VoteTable, source_order: tuple[str, ...]) -> Assignment:
    """Per source, the candidate with maximal aggregated probability (ties by
    smaller pseudo distance, then lower target id); injectivity enforced by
    greedy acceptance in descending aggregated-probability order."""
    winners: dict[str, Candidate] = {}
    for src, cands in table.candidates.items():
        winners[src] = min(cands, key=lambda c: (-c.probability, c.distance, c.target))

    match: dict[str, str | None] = {src: None for src in source_order}
    confidence: dict[str, float] = {src: 0.0 for src in source_order}
    taken: set[str] = set()
    order = sorted(winners, key=lambda s: (-winners[s].probability, winners[s].distance, s))
    for src in order:
        cand = winners[src]
        if cand.target in taken:
            continue  # loser stays unmatched
        taken.add(cand.target)
        match[src] = cand.target
        confidence[src] = float(np.mean(cand.confidences)) if cand.confidences else 0.0
    return Assignment(match=match, confidence=confidence)


@dataclass(frozen=True)
class TiledMatchOutcome:
    assignment: Assignment
    matches: list[TileMatch]
    table: VoteTable

    def diagnostics(self) -> dict:
        return {
            "tiles": [
                {
                    "index": list(m.tile.index),
                    "bbox": {
                        "lat_min": m.tile.bbox.lat_min,
                        "lat_max": m.tile.bbox.lat_max,
                        "lon_min": m.tile.bbox.lon_min,
                        "lon_max": m.tile.bbox.lon_max,
                    },
                    "source_nodes": len(m.tile.source_nodes),
                    "target_nodes": len(m.tile.target_nodes),
                    "final_loss": m.final_loss,
                }
                for m in self.matches
            ],
            "vote_conflicts": self.table.conflict_count(),
        }


def match_tiled(
    graph_s: RoadGraph,
    graph_t: RoadGraph,
    spec: TileSpec,
    cfg: TrainConfig,
    workers: int | None = None,
) -> TiledMatchOutcome:
    """partition -> per-tile matching -> majority vote."""
    tiles = partition(graph_s, graph_t, spec)
    matches = match_tiles(graph_s, graph_t, tiles, cfg, spec, workers=workers)
    table = build_vote_table(matches, graph_s, graph_t)
    assignment = vote(table, graph_s.node_order())
    return TiledMatchOutcome(assignment=assignment, matches=matches, table=table)
