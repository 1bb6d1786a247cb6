"""Side-by-side visual export of a matched map pair.

Matched road pairs share a colour derived from a stable hash of the source
road id; unmatched roads render neutral grey.  The GeoJSON output parses back
through load_graph (road ids are prefixed to stay unique across the two maps),
and the SVG is a dependency-free static rendering.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .graph import RoadGraph
from .matching import Assignment, lift_road_matches

NEUTRAL_COLOR = "#b0b0b0"


def road_color(road_id: str) -> str:
    digest = hashlib.sha1(road_id.encode("utf-8")).digest()
    # keep channels away from near-white so roads stay visible
    r, g, b = (40 + v % 180 for v in digest[:3])
    return f"#{r:02x}{g:02x}{b:02x}"


def _road_feature(graph: RoadGraph, road_id: str, which: str, color: str, matched: bool, lon_shift: float):
    road = graph.road(road_id)
    coords = [[graph.node(n).lon + lon_shift, graph.node(n).lat] for n in road.nodes]
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": {
            "road_id": f"{which}:{road_id}",
            "node_ids": [f"{which}:{n}" for n in road.nodes],
            "map": which,
            "color": color,
            "matched": matched,
        },
    }


def export_viz(
    graph_s: RoadGraph,
    graph_t: RoadGraph,
    assignment: Assignment,
    geojson_path: str | Path,
    svg_path: str | Path,
) -> dict[str, str]:
    """Write the GeoJSON and SVG exports; returns the lifted road matches."""
    road_matches = lift_road_matches(assignment, graph_s, graph_t)
    matched_targets = {dst: src for src, dst in road_matches.items()}

    bbox_s = graph_s.bounding_box()
    bbox_t = graph_t.bounding_box()
    # place the target map east of the source with a 10% gap
    gap = 0.1 * max(bbox_s.lon_max - bbox_s.lon_min, 1e-6)
    lon_shift = bbox_s.lon_max + gap - bbox_t.lon_min

    features = []
    for road in graph_s.iter_roads():
        matched = road.road_id in road_matches
        color = road_color(road.road_id) if matched else NEUTRAL_COLOR
        features.append(_road_feature(graph_s, road.road_id, "s", color, matched, 0.0))
    for road in graph_t.iter_roads():
        src = matched_targets.get(road.road_id)
        color = road_color(src) if src is not None else NEUTRAL_COLOR
        features.append(_road_feature(graph_t, road.road_id, "t", color, src is not None, lon_shift))

    Path(geojson_path).write_text(
        json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n",
        encoding="utf-8",
    )
    _write_svg(features, svg_path)
    return road_matches


def _write_svg(features: list[dict], svg_path: str | Path, width: int = 1200) -> None:
    points = [pos for f in features for pos in f["geometry"]["coordinates"]]
    lons = [p[0] for p in points]
    lats = [p[1] for p in points]
    lon_min, lon_max = min(lons), max(lons)
    lat_min, lat_max = min(lats), max(lats)
    span_lon = max(lon_max - lon_min, 1e-9)
    span_lat = max(lat_max - lat_min, 1e-9)
    height = max(1, int(width * span_lat / span_lon))
    pad = 10

    def project(lon: float, lat: float) -> tuple[float, float]:
        x = pad + (lon - lon_min) / span_lon * (width - 2 * pad)
        y = pad + (lat_max - lat) / span_lat * (height - 2 * pad)  # north up
        return x, y

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for f in features:
        pts = " ".join(
            f"{x:.2f},{y:.2f}" for x, y in (project(lon, lat) for lon, lat in f["geometry"]["coordinates"])
        )
        color = f["properties"]["color"]
        stroke = 2.0 if f["properties"]["matched"] else 1.0
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{stroke}"/>')
    lines.append("</svg>")
    Path(svg_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
