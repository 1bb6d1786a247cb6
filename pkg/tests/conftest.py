from pathlib import Path

import pytest

from mapalign.graph import GeoNode, Road, RoadGraph

DATA_DIR = Path(__file__).parent / "data"


def make_path_graph() -> RoadGraph:
    """a - b - c chain near the equator."""
    nodes = [
        GeoNode("a", 0.0, 0.0),
        GeoNode("b", 0.0, 0.001),
        GeoNode("c", 0.0, 0.002),
    ]
    return RoadGraph(nodes, [("a", "b"), ("b", "c")], [Road("r0", ("a", "b", "c"))])


def make_k4_graph() -> RoadGraph:
    nodes = [
        GeoNode("a", 0.0, 0.0),
        GeoNode("b", 0.0, 0.001),
        GeoNode("c", 0.001, 0.0),
        GeoNode("d", 0.001, 0.001),
    ]
    edges = [("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d")]
    roads = [
        Road("r0", ("a", "b", "c", "a")),
        Road("r1", ("b", "d", "c")),
        Road("r2", ("a", "d")),
    ]
    return RoadGraph(nodes, edges, roads)


def make_triangle_graph() -> RoadGraph:
    nodes = [
        GeoNode("a", 10.0, 100.0),
        GeoNode("b", 10.0, 100.001),
        GeoNode("c", 10.001, 100.0005),
    ]
    return RoadGraph(nodes, [("a", "b"), ("b", "c"), ("c", "a")], [Road("t", ("a", "b", "c", "a"))])


@pytest.fixture
def path_graph() -> RoadGraph:
    return make_path_graph()


@pytest.fixture
def k4_graph() -> RoadGraph:
    return make_k4_graph()


@pytest.fixture
def triangle_graph() -> RoadGraph:
    return make_triangle_graph()
