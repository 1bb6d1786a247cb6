"""Road-level accuracy scoring of a node assignment.

A matched source node is correct when any road through it corresponds (per
ground truth) to any road through its matched target; nodes whose roads have
no counterpart at all are excluded rather than penalised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .graph import RoadGraph
from .matching import Assignment


@dataclass(frozen=True)
class GroundTruth:
    road_pairs: set[tuple[str, str]]
    node_pairs: set[tuple[str, str]] | None = None

    @classmethod
    def from_node_pairs(
        cls, node_pairs: set[tuple[str, str]], graph_s: RoadGraph, graph_t: RoadGraph
    ) -> "GroundTruth":
        """Derive road pairs from node-level ground truth through road membership."""
        road_pairs: set[tuple[str, str]] = set()
        for src, dst in node_pairs:
            for r_s in graph_s.roads_of(src):
                for r_t in graph_t.roads_of(dst):
                    road_pairs.add((r_s, r_t))
        return cls(road_pairs=road_pairs, node_pairs=set(node_pairs))

    def validate_against(self, graph_s: RoadGraph, graph_t: RoadGraph) -> None:
        for r_s, r_t in self.road_pairs:
            if not graph_s.has_road(r_s):
                raise ValueError(f"ground truth references unknown source road {r_s!r}")
            if not graph_t.has_road(r_t):
                raise ValueError(f"ground truth references unknown target road {r_t!r}")


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    evaluated_nodes: int
    correct_nodes: int
    excluded_nodes: int
    per_road: dict[str, dict[str, int]]

    def summary(self) -> str:
        return (
            f"road accuracy {self.accuracy * 100.0:.2f}% "
            f"({self.correct_nodes}/{self.evaluated_nodes} evaluated, "
            f"{self.excluded_nodes} excluded)"
        )

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "evaluated_nodes": self.evaluated_nodes,
            "correct_nodes": self.correct_nodes,
            "excluded_nodes": self.excluded_nodes,
            "per_road": self.per_road,
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def road_accuracy(
    assignment: Assignment,
    graph_s: RoadGraph,
    graph_t: RoadGraph,
    gt: GroundTruth,
) -> EvalReport:
    gt.validate_against(graph_s, graph_t)
    covered_source_roads = {r_s for r_s, _ in gt.road_pairs}

    evaluated = correct = excluded = 0
    per_road: dict[str, dict[str, int]] = {}
    for src in graph_s.node_order():
        roads_s = graph_s.roads_of(src)
        if not roads_s & covered_source_roads:
            excluded += 1
            continue
        evaluated += 1
        dst = assignment.match.get(src)
        ok = False
        if dst is not None:
            roads_t = graph_t.roads_of(dst)
            ok = any((r_s, r_t) in gt.road_pairs for r_s in roads_s for r_t in roads_t)
        if ok:
            correct += 1
        for r_s in roads_s:
            stats = per_road.setdefault(r_s, {"evaluated": 0, "correct": 0})
            stats["evaluated"] += 1
            stats["correct"] += int(ok)

    accuracy = correct / evaluated if evaluated else 0.0
    return EvalReport(
        accuracy=accuracy,
        evaluated_nodes=evaluated,
        correct_nodes=correct,
        excluded_nodes=excluded,
        per_road=per_road,
    )


def write_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")
