import numpy as np
import pytest

from mapalign.encoder import init_params
from mapalign.evaluate import GroundTruth, road_accuracy
from mapalign.matching import (
    ModelParams,
    TrainConfig,
    hard_assign,
    pair_loss_and_gradients,
    pair_loss_value,
    train_pair,
)
from mapalign.synth import shuffle_nodes, synthetic_city

FD_H = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-6


def small_pair(seed=0):
    g = synthetic_city(rows=3, cols=3, seed=20, drop_fraction=0.0)
    shuffled, record = shuffle_nodes(g, seed=seed)
    return g, shuffled, record


def ten_node_pair():
    """10 x 10 node pair for gradient checks."""
    from mapalign.graph import GeoNode, RoadGraph

    rng = np.random.default_rng(77)
    nodes = [GeoNode(f"v{i}", 31.0 + rng.uniform(0, 0.003), 121.0 + rng.uniform(0, 0.003)) for i in range(10)]
    edges = {(f"v{i}", f"v{(i + 1) % 10}") for i in range(10)}
    edges |= {("v0", "v5"), ("v2", "v7")}
    graph_s = RoadGraph(nodes, sorted(edges), [])
    nodes_t = [GeoNode(f"w{i}", n.lat + rng.normal(0, 1e-5), n.lon + rng.normal(0, 1e-5)) for i, n in enumerate(nodes)]
    edges_t = {(u.replace("v", "w"), v.replace("v", "w")) for u, v in edges}
    graph_t = RoadGraph(nodes_t, sorted(edges_t), [])
    return graph_s, graph_t


def check_pair_gradients(cfg):
    graph_s, graph_t = ten_node_pair()
    encoder, kernel, fusion = init_params(cfg.seed)
    params = ModelParams(encoder=encoder, kernel=kernel, fusion=fusion)
    trainable = params.trainable(include_fusion=cfg.alpha_fixed is None)
    _, grads = pair_loss_and_gradients(graph_s, graph_t, cfg, params)
    worst = 0.0
    for tensor, grad in zip(trainable, grads):
        numeric = np.zeros_like(tensor.values)
        it = np.nditer(tensor.values, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = tensor.values[idx]
            tensor.values[idx] = orig + FD_H
            up = pair_loss_value(graph_s, graph_t, cfg, params)
            tensor.values[idx] = orig - FD_H
            down = pair_loss_value(graph_s, graph_t, cfg, params)
            tensor.values[idx] = orig
            numeric[idx] = (up - down) / (2.0 * FD_H)
            it.iternext()
        rel = np.abs(grad - numeric) / np.maximum(np.abs(numeric), ABS_FLOOR)
        worst = max(worst, float(np.max(rel)))
    return worst


class TestTrainPair:
    def test_loss_trace_finite_and_alpha_bounded(self):
        g, shuffled, _ = small_pair()
        _, _, trace = train_pair(g, shuffled, TrainConfig(epochs=40, seed=1))
        assert len(trace) == 40
        assert all(np.isfinite(t.loss) for t in trace)
        assert all(0.0 < t.alpha < 1.0 for t in trace)

    def test_loss_decreases(self):
        g, shuffled, _ = small_pair()
        _, _, trace = train_pair(g, shuffled, TrainConfig(epochs=120, seed=0))
        assert trace[-1].loss < trace[0].loss

    def test_seed_determinism(self):
        g, shuffled, _ = small_pair()
        cfg = TrainConfig(epochs=25, seed=9)
        _, sim1, trace1 = train_pair(g, shuffled, cfg)
        _, sim2, trace2 = train_pair(g, shuffled, cfg)
        assert [t.loss for t in trace1] == [t.loss for t in trace2]
        assert np.array_equal(sim1.scores, sim2.scores)

    def test_different_seeds_differ(self):
        g, shuffled, _ = small_pair()
        _, _, trace1 = train_pair(g, shuffled, TrainConfig(epochs=5, seed=0))
        _, _, trace2 = train_pair(g, shuffled, TrainConfig(epochs=5, seed=1))
        assert trace1[0].loss != trace2[0].loss

    def test_alpha_fixed_is_honored(self):
        g, shuffled, _ = small_pair()
        params, _, trace = train_pair(g, shuffled, TrainConfig(epochs=10, seed=0, alpha_fixed=0.25))
        assert all(t.alpha == 0.25 for t in trace)
        # the underlying raw scalar never moves
        assert params.fusion.a.values[0, 0] == 0.0

    def test_empty_graph_rejected(self):
        from mapalign.graph import RoadGraph

        g, shuffled, _ = small_pair()
        with pytest.raises(ValueError):
            train_pair(RoadGraph([], [], []), shuffled, TrainConfig(epochs=1))

    def test_shuffle_recovery_small(self):
        g, shuffled, record = small_pair(seed=4)
        _, sim, _ = train_pair(g, shuffled, TrainConfig(epochs=200, seed=0))
        assignment = hard_assign(sim)
        gt = GroundTruth.from_node_pairs(record.node_pairs(), g, shuffled)
        report = road_accuracy(assignment, g, shuffled, gt)
        assert report.accuracy == 1.0

    def test_similarity_matrix_shape_and_orders(self):
        g, shuffled, _ = small_pair()
        _, sim, _ = train_pair(g, shuffled, TrainConfig(epochs=3, seed=0))
        assert sim.scores.shape == (g.node_count, shuffled.node_count)
        assert sim.node_order_s == g.node_order()
        assert sim.node_order_t == shuffled.node_order()
        assert np.allclose(sim.padded.sum(axis=1), 1.0, atol=1e-6)


class TestEndToEndGradients:
    def test_default_config(self):
        worst = check_pair_gradients(TrainConfig(epochs=1, seed=3))
        assert worst < REL_TOL

    def test_lambda_zero_alpha_fixed_one(self):
        worst = check_pair_gradients(TrainConfig(epochs=1, seed=3, lam=0.0, alpha_fixed=1.0))
        assert worst < REL_TOL
