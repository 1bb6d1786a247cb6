import pytest

from mapalign.evaluate import GroundTruth, road_accuracy
from mapalign.graph import GeoNode, Road, RoadGraph
from mapalign.matching import Assignment
from mapalign.synth import shuffle_nodes, synthetic_city


def line_graph(prefix: str, road_id: str, n: int) -> RoadGraph:
    nodes = [GeoNode(f"{prefix}{i}", 0.0, 0.0001 * i) for i in range(n)]
    edges = [(f"{prefix}{i}", f"{prefix}{i+1}") for i in range(n - 1)]
    return RoadGraph(nodes, edges, [Road(road_id, tuple(f"{prefix}{i}" for i in range(n)))])


def assign(pairs: dict[str, str | None]) -> Assignment:
    return Assignment(match=dict(pairs), confidence={s: 1.0 for s in pairs})


class TestRoadAccuracy:
    def test_identity_self_match(self):
        g = synthetic_city(rows=3, cols=3, seed=1)
        gt = GroundTruth(road_pairs={(r.road_id, r.road_id) for r in g.iter_roads()})
        report = road_accuracy(assign({n: n for n in g.node_order()}), g, g, gt)
        assert report.accuracy == 1.0
        assert report.excluded_nodes == 0
        assert report.evaluated_nodes == g.node_count

    def test_node_on_uncovered_road_is_excluded(self):
        src = line_graph("s", "r_main", 3)
        extra = line_graph("x", "r_extra", 2)
        merged = RoadGraph(
            list(src.iter_nodes()) + list(extra.iter_nodes()),
            list(src.iter_edges()) + list(extra.iter_edges()),
            list(src.iter_roads()) + list(extra.iter_roads()),
        )
        dst = line_graph("t", "r_main", 3)
        gt = GroundTruth(road_pairs={("r_main", "r_main")})
        # the two x-nodes are matched arbitrarily (wrong) but their road has no counterpart
        mapping = {"s0": "t0", "s1": "t1", "s2": "t2", "x0": "t0", "x1": "t1"}
        report = road_accuracy(assign(mapping), merged, dst, gt)
        assert report.excluded_nodes == 2
        assert report.evaluated_nodes == 3
        assert report.accuracy == 1.0

    def test_intersection_counts_if_any_road_pair_correct(self):
        # source node j sits on roads r1 and r2; match lands on a node of r2' only
        nodes_s = [GeoNode("j", 0, 0), GeoNode("a", 0, 0.001), GeoNode("b", 0.001, 0)]
        graph_s = RoadGraph(
            nodes_s,
            [("j", "a"), ("j", "b")],
            [Road("r1", ("j", "a")), Road("r2", ("j", "b"))],
        )
        graph_t = line_graph("t", "r2p", 2)
        gt = GroundTruth(road_pairs={("r2", "r2p")})
        report = road_accuracy(assign({"j": "t0", "a": None, "b": "t1"}), graph_s, graph_t, gt)
        # j correct through (r2, r2p); a excluded (r1 uncovered); b correct
        assert report.excluded_nodes == 1
        assert report.correct_nodes == 2
        assert report.accuracy == 1.0

    def test_unmatched_covered_node_counts_incorrect(self):
        src = line_graph("s", "r", 3)
        dst = line_graph("t", "r", 3)
        gt = GroundTruth(road_pairs={("r", "r")})
        report = road_accuracy(assign({"s0": "t0", "s1": None, "s2": "t2"}), src, dst, gt)
        assert report.evaluated_nodes == 3
        assert report.correct_nodes == 2
        assert report.accuracy == pytest.approx(2 / 3)

    def test_wrong_road_match_counts_incorrect(self):
        src = line_graph("s", "r1", 2)
        two = RoadGraph(
            list(line_graph("t", "rA", 2).iter_nodes()) + list(line_graph("u", "rB", 2).iter_nodes()),
            list(line_graph("t", "rA", 2).iter_edges()) + list(line_graph("u", "rB", 2).iter_edges()),
            list(line_graph("t", "rA", 2).iter_roads()) + list(line_graph("u", "rB", 2).iter_roads()),
        )
        gt = GroundTruth(road_pairs={("r1", "rA")})
        report = road_accuracy(assign({"s0": "u0", "s1": "t1"}), src, two, gt)
        assert report.correct_nodes == 1
        assert report.accuracy == pytest.approx(0.5)

    def test_unknown_road_in_ground_truth(self):
        src = line_graph("s", "r", 2)
        with pytest.raises(ValueError):
            road_accuracy(assign({"s0": "s0"}), src, src, GroundTruth(road_pairs={("ghost", "r")}))

    def test_accuracy_invariant_under_relabeling(self):
        g = synthetic_city(rows=3, cols=3, seed=8)
        shuffled, record = shuffle_nodes(g, seed=4)
        gt = GroundTruth.from_node_pairs(record.node_pairs(), g, shuffled)
        perfect = assign(dict(record.permutation))
        assert road_accuracy(perfect, g, shuffled, gt).accuracy == 1.0

    def test_from_node_pairs_derives_membership_roads(self):
        src = line_graph("s", "r1", 3)
        dst = line_graph("t", "r2", 3)
        gt = GroundTruth.from_node_pairs({("s0", "t0")}, src, dst)
        assert gt.road_pairs == {("r1", "r2")}

    def test_counts_are_consistent(self):
        g = synthetic_city(rows=3, cols=4, seed=5)
        gt = GroundTruth(road_pairs={(r.road_id, r.road_id) for r in list(g.iter_roads())[:2]})
        report = road_accuracy(assign({n: n for n in g.node_order()}), g, g, gt)
        assert report.evaluated_nodes + report.excluded_nodes == g.node_count
