"""Reading and writing road graphs in osm-xml, geojson, and edge-csv form.

Format contracts:
  osm-xml   subset reader for <node id lat lon> and <way id><nd ref/></way>;
            the way id becomes the road id.
  geojson   FeatureCollection of LineString features; the "road_id" property
            (or the feature index as fallback) becomes the road id.  Node
            identity comes from a "node_ids" property when present, otherwise
            from exact coordinate equality.
  edge-csv  header src_id,src_lat,src_lon,dst_id,dst_lat,dst_lon,road_id; one
            edge per row, rows of a road chained in order.
"""

from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

from .graph import Edge, GeoNode, GraphValidationError, Road, RoadGraph, canonical_edge

FORMATS = ("osm-xml", "geojson", "edge-csv")

_SUFFIX_TO_FORMAT = {
    ".xml": "osm-xml",
    ".osm": "osm-xml",
    ".geojson": "geojson",
    ".json": "geojson",
    ".csv": "edge-csv",
}


class MapFormatError(ValueError):
    """Raised when an input file does not parse under its declared format."""


def detect_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    try:
        return _SUFFIX_TO_FORMAT[suffix]
    except KeyError:
        raise MapFormatError(f"cannot infer map format from suffix {suffix!r} of {path}")


def load_graph(path: str | Path, fmt: str | None = None) -> RoadGraph:
    path = Path(path)
    if not path.is_file():
        raise MapFormatError(f"input file does not exist: {path}")
    if fmt is None:
        fmt = detect_format(path)
    if fmt == "osm-xml":
        return _load_osm_xml(path)
    if fmt == "geojson":
        return _load_geojson(path)
    if fmt == "edge-csv":
        return _load_edge_csv(path)
    raise MapFormatError(f"unknown map format {fmt!r} (expected one of {FORMATS})")


def save_graph(graph: RoadGraph, path: str | Path, fmt: str | None = None) -> None:
    path = Path(path)
    if fmt is None:
        fmt = detect_format(path)
    if fmt == "osm-xml":
        _save_osm_xml(graph, path)
    elif fmt == "geojson":
        _save_geojson(graph, path)
    elif fmt == "edge-csv":
        _save_edge_csv(graph, path)
    else:
        raise MapFormatError(f"unknown map format {fmt!r} (expected one of {FORMATS})")


# -- osm-xml ----------------------------------------------------------------


def _load_osm_xml(path: Path) -> RoadGraph:
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise MapFormatError(f"{path}: malformed XML: {exc}") from exc
    root = tree.getroot()

    nodes: list[GeoNode] = []
    for el in root.iter("node"):
        try:
            nodes.append(GeoNode(node_id=el.attrib["id"], lat=float(el.attrib["lat"]), lon=float(el.attrib["lon"])))
        except (KeyError, ValueError) as exc:
            raise MapFormatError(f"{path}: bad <node> element: {exc}") from exc

    edges: list[Edge] = []
    roads: list[Road] = []
    for el in root.iter("way"):
        way_id = el.attrib.get("id")
        if way_id is None:
            raise MapFormatError(f"{path}: <way> without id")
        refs = [nd.attrib.get("ref") for nd in el.findall("nd")]
        if any(r is None for r in refs):
            raise MapFormatError(f"{path}: way {way_id}: <nd> without ref")
        seq = [str(r) for r in refs]
        if len(seq) < 2:
            raise MapFormatError(f"{path}: way {way_id}: fewer than 2 node refs")
        edges.extend(zip(seq, seq[1:]))
        roads.append(Road(road_id=way_id, nodes=tuple(seq)))

    return _build(path, nodes, edges, roads)


def _save_osm_xml(graph: RoadGraph, path: Path) -> None:
    root = ET.Element("osm", version="0.6")
    for node in graph.iter_nodes():
        ET.SubElement(root, "node", id=node.node_id, lat=f"{node.lat:.10f}", lon=f"{node.lon:.10f}")
    for road in graph.iter_roads():
        way = ET.SubElement(root, "way", id=road.road_id)
        for nid in road.nodes:
            ET.SubElement(way, "nd", ref=nid)
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="unicode", xml_declaration=True)


# -- geojson ------------------------------------------------------------------


def _load_geojson(path: Path) -> RoadGraph:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"{path}: malformed JSON: {exc}") from exc
    if obj.get("type") != "FeatureCollection":
        raise MapFormatError(f"{path}: expected a FeatureCollection")

    nodes: dict[str, GeoNode] = {}
    coord_to_id: dict[tuple[float, float], str] = {}
    edges: list[Edge] = []
    roads: list[Road] = []

    def node_id_for(lon: float, lat: float, explicit: str | None) -> str:
        if explicit is not None:
            if explicit not in nodes:
                nodes[explicit] = GeoNode(explicit, lat, lon)
            return explicit
        key = (lat, lon)
        if key not in coord_to_id:
            nid = f"p{len(coord_to_id)}"
            coord_to_id[key] = nid
            nodes[nid] = GeoNode(nid, lat, lon)
        return coord_to_id[key]

    for idx, feature in enumerate(obj.get("features", [])):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "LineString":
            raise MapFormatError(f"{path}: feature {idx}: only LineString geometries are supported")
        coords = geom.get("coordinates") or []
        if len(coords) < 2:
            raise MapFormatError(f"{path}: feature {idx}: LineString needs >= 2 positions")
        props = feature.get("properties") or {}
        road_id = str(props.get("road_id", idx))
        explicit_ids = props.get("node_ids")
        if explicit_ids is not None and len(explicit_ids) != len(coords):
            raise MapFormatError(f"{path}: feature {idx}: node_ids length mismatch")
        seq: list[str] = []
        for j, pos in enumerate(coords):
            if len(pos) < 2:
                raise MapFormatError(f"{path}: feature {idx}: bad position {pos!r}")
            lon, lat = float(pos[0]), float(pos[1])
            seq.append(node_id_for(lon, lat, str(explicit_ids[j]) if explicit_ids is not None else None))
        edges.extend(zip(seq, seq[1:]))
        roads.append(Road(road_id=road_id, nodes=tuple(seq)))

    return _build(path, list(nodes.values()), edges, roads)


def _save_geojson(graph: RoadGraph, path: Path) -> None:
    features = []
    for road in graph.iter_roads():
        coords = [[graph.node(nid).lon, graph.node(nid).lat] for nid in road.nodes]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {"road_id": road.road_id, "node_ids": list(road.nodes)},
            }
        )
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n", encoding="utf-8")


# -- edge-csv -----------------------------------------------------------------

_EDGE_CSV_HEADER = ["src_id", "src_lat", "src_lon", "dst_id", "dst_lat", "dst_lon", "road_id"]


def _load_edge_csv(path: Path) -> RoadGraph:
    nodes: dict[str, GeoNode] = {}
    edges: list[Edge] = []
    road_seqs: dict[str, list[str]] = {}

    def add_node(nid: str, lat: str, lon: str, row_no: int) -> None:
        try:
            node = GeoNode(nid, float(lat), float(lon))
        except ValueError as exc:
            raise MapFormatError(f"{path}: row {row_no}: {exc}") from exc
        prev = nodes.get(nid)
        if prev is not None and (prev.lat, prev.lon) != (node.lat, node.lon):
            raise MapFormatError(f"{path}: row {row_no}: node {nid!r} redefined with different coordinates")
        nodes.setdefault(nid, node)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _EDGE_CSV_HEADER:
            raise MapFormatError(f"{path}: expected header {','.join(_EDGE_CSV_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if any(row.get(col) in (None, "") for col in _EDGE_CSV_HEADER):
                raise MapFormatError(f"{path}: row {row_no}: missing fields")
            add_node(row["src_id"], row["src_lat"], row["src_lon"], row_no)
            add_node(row["dst_id"], row["dst_lat"], row["dst_lon"], row_no)
            edges.append((row["src_id"], row["dst_id"]))
            seq = road_seqs.setdefault(row["road_id"], [])
            if not seq:
                seq.extend([row["src_id"], row["dst_id"]])
            elif seq[-1] == row["src_id"]:
                seq.append(row["dst_id"])
            else:
                raise MapFormatError(
                    f"{path}: row {row_no}: road {row['road_id']!r} does not chain "
                    f"(src {row['src_id']!r} != previous dst {seq[-1]!r})"
                )

    roads = [Road(road_id=rid, nodes=tuple(seq)) for rid, seq in road_seqs.items()]
    return _build(path, list(nodes.values()), edges, roads)


def _save_edge_csv(graph: RoadGraph, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_EDGE_CSV_HEADER)
        for road in graph.iter_roads():
            for u, v in zip(road.nodes, road.nodes[1:]):
                a, b = graph.node(u), graph.node(v)
                writer.writerow([u, f"{a.lat:.10f}", f"{a.lon:.10f}", v, f"{b.lat:.10f}", f"{b.lon:.10f}", road.road_id])
        # edges on no road still need a row; represent each as its own road
        covered = {canonical_edge(a, b) for road in graph.iter_roads() for a, b in zip(road.nodes, road.nodes[1:])}
        extra = [e for e in graph.iter_edges() if e not in covered]
        for i, (u, v) in enumerate(extra):
            a, b = graph.node(u), graph.node(v)
            writer.writerow([u, f"{a.lat:.10f}", f"{a.lon:.10f}", v, f"{b.lat:.10f}", f"{b.lon:.10f}", f"_edge{i}"])


def _build(path: Path, nodes: list[GeoNode], edges: list[Edge], roads: list[Road]) -> RoadGraph:
    try:
        return RoadGraph(nodes, edges, roads)
    except GraphValidationError as exc:
        raise MapFormatError(f"{path}: {exc}") from exc
