"""Acceptance gate: every criterion at its stated tolerance, one printed
pass/fail line each.  Run with `pytest tests/test_acceptance.py -s` to see the
lines as they complete; the slow tiled criterion runs last.
"""

import itertools
import time

import numpy as np
import pytest

from mapalign.encoder import encode, init_params
from mapalign.evaluate import GroundTruth, road_accuracy
from mapalign.formats import load_graph
from mapalign.graph import (
    GeoNode,
    RoadGraph,
    build_pseudo_coordinates,
    edge_features,
)
from mapalign.matching import (
    ModelParams,
    TrainConfig,
    hard_assign,
    hungarian,
    pair_loss_and_gradients,
    pair_loss_value,
    sinkhorn,
    train_pair,
    write_correspondence_csv,
)
from mapalign.synth import NoiseConfig, perturb, shuffle_nodes
from mapalign.tiling import TileSpec, match_tiled

from conftest import DATA_DIR

SHUFFLE_SEED = 3
NOISE_SEEDS = (100, 101, 102)
TRAIN_SEEDS = (0, 1, 2)


def report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    return ok


@pytest.fixture(scope="module")
def mid_fixture():
    graph = load_graph(DATA_DIR / "city_mid.osm.xml")
    shuffled, record = shuffle_nodes(graph, seed=SHUFFLE_SEED)
    gt = GroundTruth.from_node_pairs(record.node_pairs(), graph, shuffled)
    return graph, shuffled, record, gt


@pytest.fixture(scope="module")
def zero_noise_run(mid_fixture):
    """Shared by criteria 1 (accuracy, runtime) and 7 (loss trajectory)."""
    graph, shuffled, _, _ = mid_fixture
    start = time.monotonic()
    params, similarity, trace = train_pair(graph, shuffled, TrainConfig(seed=0))
    elapsed = time.monotonic() - start
    return params, similarity, trace, elapsed


@pytest.fixture(scope="module")
def high_noise_default_runs(mid_fixture):
    """Default pipeline at 10-sigma; shared by criteria 2 and 9."""
    graph, shuffled, _, gt = mid_fixture
    accuracies = []
    for noise_seed, train_seed in zip(NOISE_SEEDS, TRAIN_SEEDS):
        noisy = perturb(shuffled, NoiseConfig(level="high", seed=noise_seed))
        _, similarity, _ = train_pair(graph, noisy, TrainConfig(seed=train_seed))
        accuracies.append(road_accuracy(hard_assign(similarity), graph, noisy, gt).accuracy)
    return accuracies


class TestCriterion1ZeroNoiseRecovery:
    def test_shuffle_recovery_is_perfect_and_fast(self, mid_fixture, zero_noise_run):
        graph, shuffled, _, gt = mid_fixture
        _, similarity, _, elapsed = zero_noise_run
        accuracy = road_accuracy(hard_assign(similarity), graph, shuffled, gt).accuracy
        ok = accuracy == 1.0 and elapsed < 60.0
        assert report(
            "criterion 1 zero-noise shuffle recovery",
            ok,
            f"accuracy {accuracy * 100:.2f}% (need 100%), {graph.node_count} nodes in {elapsed:.1f}s (need < 60s)",
        )


class TestCriterion2NoiseCurve:
    def test_noise_curve(self, mid_fixture, high_noise_default_runs):
        graph, shuffled, _, gt = mid_fixture
        thresholds = {"low": 0.98, "medium": 0.95, "high": 0.85}
        means = {}
        for level in ("low", "medium"):
            accs = []
            for noise_seed, train_seed in zip(NOISE_SEEDS, TRAIN_SEEDS):
                noisy = perturb(shuffled, NoiseConfig(level=level, seed=noise_seed))
                _, similarity, _ = train_pair(graph, noisy, TrainConfig(seed=train_seed))
                accs.append(road_accuracy(hard_assign(similarity), graph, noisy, gt).accuracy)
            means[level] = float(np.mean(accs))
        means["high"] = float(np.mean(high_noise_default_runs))
        ok = all(means[level] >= thresholds[level] for level in thresholds)
        assert report(
            "criterion 2 synthetic noise curve",
            ok,
            "mean accuracy over 3 seeds "
            + " / ".join(f"{means[lvl] * 100:.2f}%@{lvl}" for lvl in ("low", "medium", "high"))
            + " (need >= 98 / 95 / 85)",
        )


class TestCriterion3SinkhornProperties:
    def test_doubly_stochastic_marginals(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            n_s = int(rng.integers(1, 65))
            n_t = int(rng.integers(1, 65))
            sim = sinkhorn(rng.normal(size=(n_s, n_t)), iters=20)
            worst = max(
                worst,
                float(np.max(np.abs(sim.padded.sum(axis=0) - 1.0))),
                float(np.max(np.abs(sim.padded.sum(axis=1) - 1.0))),
            )
        ok = worst < 1e-6
        assert report(
            "criterion 3 sinkhorn marginals",
            ok,
            f"worst |row/col sum - 1| = {worst:.2e} over 100 matrices up to 64x64 (need < 1e-6)",
        )


class TestCriterion4HungarianOracle:
    @staticmethod
    def brute_force(cost: np.ndarray) -> float:
        n_s, n_t = cost.shape
        best = np.inf
        if n_s <= n_t:
            for perm in itertools.permutations(range(n_t), n_s):
                best = min(best, sum(cost[i, j] for i, j in enumerate(perm)))
        else:
            for rows in itertools.permutations(range(n_s), n_t):
                best = min(best, sum(cost[i, j] for j, i in enumerate(rows)))
        return best

    def test_exact_agreement(self):
        rng = np.random.default_rng(7)
        failures = 0
        for _ in range(200):
            n_s = int(rng.integers(1, 8))
            n_t = int(rng.integers(1, 8))
            cost = rng.uniform(size=(n_s, n_t))
            cols = hungarian(cost)
            total = sum(cost[i, j] for i, j in enumerate(cols) if j is not None)
            if abs(total - self.brute_force(cost)) > 1e-12:
                failures += 1
        ok = failures == 0
        assert report(
            "criterion 4 hungarian vs brute force",
            ok,
            f"{200 - failures}/200 random instances <= 7x7 (incl. rectangular) agree exactly",
        )


class TestCriterion5GradientCorrectness:
    H = 1e-5
    REL_TOL = 1e-4
    ABS_FLOOR = 1e-6

    @staticmethod
    def ten_node_pair():
        rng = np.random.default_rng(77)
        nodes = [
            GeoNode(f"v{i}", 31.0 + rng.uniform(0, 0.003), 121.0 + rng.uniform(0, 0.003))
            for i in range(10)
        ]
        edges = {(f"v{i}", f"v{(i + 1) % 10}") for i in range(10)} | {("v0", "v5"), ("v2", "v7")}
        graph_s = RoadGraph(nodes, sorted(edges), [])
        nodes_t = [
            GeoNode(f"w{i}", n.lat + rng.normal(0, 1e-5), n.lon + rng.normal(0, 1e-5))
            for i, n in enumerate(nodes)
        ]
        graph_t = RoadGraph(
            nodes_t, sorted((u.replace("v", "w"), v.replace("v", "w")) for u, v in edges), []
        )
        return graph_s, graph_t

    def worst_rel_error(self, cfg: TrainConfig) -> float:
        graph_s, graph_t = self.ten_node_pair()
        encoder, kernel, fusion = init_params(cfg.seed)
        params = ModelParams(encoder=encoder, kernel=kernel, fusion=fusion)
        trainable = params.trainable(include_fusion=cfg.alpha_fixed is None)
        _, grads = pair_loss_and_gradients(graph_s, graph_t, cfg, params)
        worst = 0.0
        for tensor, grad in zip(trainable, grads):
            it = np.nditer(tensor.values, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = tensor.values[idx]
                tensor.values[idx] = orig + self.H
                up = pair_loss_value(graph_s, graph_t, cfg, params)
                tensor.values[idx] = orig - self.H
                down = pair_loss_value(graph_s, graph_t, cfg, params)
                tensor.values[idx] = orig
                numeric = (up - down) / (2.0 * self.H)
                rel = abs(grad[idx] - numeric) / max(abs(numeric), self.ABS_FLOOR)
                worst = max(worst, rel)
                it.iternext()
        return worst

    def test_all_lambda_alpha_combinations(self):
        worst_overall = 0.0
        for lam in (0.0, 0.5, 1.0):
            for alpha_fixed in (None, 0.0, 1.0):
                cfg = TrainConfig(epochs=1, seed=3, lam=lam, alpha_fixed=alpha_fixed)
                worst_overall = max(worst_overall, self.worst_rel_error(cfg))
        ok = worst_overall < self.REL_TOL
        assert report(
            "criterion 5 gradient correctness",
            ok,
            f"worst relative error {worst_overall:.2e} over lambda x alpha grid on a 10x10 pair (need < 1e-4)",
        )


class TestCriterion6EquivarianceInvariance:
    def test_encoder_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        nodes = [GeoNode(f"v{i}", rng.uniform(0, 0.01), rng.uniform(0, 0.01)) for i in range(20)]
        edges = sorted(
            {(f"v{min(i, j)}", f"v{max(i, j)}") for i, j in rng.integers(0, 20, size=(40, 2)) if i != j}
        )
        graph = RoadGraph(nodes, edges, [])
        encoder, _, _ = init_params(5)
        base = encode(graph, build_pseudo_coordinates(graph), edge_features(graph), encoder)
        worst = 0.0
        for _ in range(5):
            perm = rng.permutation(20)
            permuted = RoadGraph([nodes[i] for i in perm], edges, [])
            out = encode(permuted, build_pseudo_coordinates(permuted), edge_features(permuted), encoder)
            worst = max(worst, float(np.max(np.abs(out.values - base.values[perm]))))
        ok_equi = worst < 1e-9

        rng2 = np.random.default_rng(11)
        lats = rng2.uniform(10, 11, size=50)
        lons = rng2.uniform(100, 101, size=50)
        base_pc = build_pseudo_coordinates(RoadGraph([GeoNode(f"g{i}", a, b) for i, (a, b) in enumerate(zip(lats, lons))], [], []))
        worst_affine = 0.0
        for _ in range(10):
            a, c = rng2.uniform(0.1, 1.5, size=2)
            b, d = rng2.uniform(-20, 20, size=2)
            pc = build_pseudo_coordinates(
                RoadGraph([GeoNode(f"g{i}", a * la + b, c * lo + d) for i, (la, lo) in enumerate(zip(lats, lons))], [], [])
            )
            worst_affine = max(worst_affine, float(np.max(np.abs(pc.coords - base_pc.coords))))
        ok_affine = worst_affine < 1e-12

        ok = ok_equi and ok_affine
        assert report(
            "criterion 6 equivariance and invariance",
            ok,
            f"encoder permutation deviation {worst:.2e} (need < 1e-9); "
            f"pseudo-coordinate affine deviation {worst_affine:.2e} (need < 1e-12)",
        )


class TestCriterion7Convergence:
    def test_loss_halves_in_200_epochs(self, zero_noise_run):
        _, _, trace, _ = zero_noise_run
        initial, final = trace[0].loss, trace[-1].loss
        ok = final < 0.5 * initial
        assert report(
            "criterion 7 convergence",
            ok,
            f"loss {initial:.4f} -> {final:.4f} over 200 epochs (ratio {final / initial:.3f}, need < 0.5)",
        )


class TestCriterion9PseudoCoordinateAblation:
    def test_raw_coordinates_degrade(self, mid_fixture, high_noise_default_runs):
        graph, shuffled, _, gt = mid_fixture
        ablation_accs = []
        for noise_seed, train_seed in zip(NOISE_SEEDS, TRAIN_SEEDS):
            noisy = perturb(shuffled, NoiseConfig(level="high", seed=noise_seed))
            cfg = TrainConfig(seed=train_seed, raw_coordinates=True)
            _, similarity, _ = train_pair(graph, noisy, cfg)
            ablation_accs.append(road_accuracy(hard_assign(similarity), graph, noisy, gt).accuracy)
        default_mean = float(np.mean(high_noise_default_runs)) * 100
        ablation_mean = float(np.mean(ablation_accs)) * 100
        gap = default_mean - ablation_mean
        ok = gap >= 20.0
        assert report(
            "criterion 9 pseudo-coordinate ablation",
            ok,
            f"10-sigma accuracy {default_mean:.2f}% default vs {ablation_mean:.2f}% raw lat/lon "
            f"(gap {gap:.1f} points, need >= 20)",
        )


class TestCriterion8Tiling:
    def test_k1_reduction_byte_identical(self, mid_fixture, zero_noise_run, tmp_path):
        graph, shuffled, _, _ = mid_fixture
        _, similarity, _, _ = zero_noise_run
        untiled_csv = tmp_path / "untiled.csv"
        write_correspondence_csv(untiled_csv, hard_assign(similarity))

        outcome = match_tiled(graph, shuffled, TileSpec(k=1), TrainConfig(seed=0), workers=1)
        tiled_csv = tmp_path / "tiled.csv"
        write_correspondence_csv(tiled_csv, outcome.assignment)
        ok = untiled_csv.read_bytes() == tiled_csv.read_bytes()
        assert report(
            "criterion 8a tiling reduction",
            ok,
            f"k=1 correspondence CSV byte-identical to untiled: {ok}",
        )

    def test_worker_count_invariance(self, mid_fixture):
        graph, shuffled, _, _ = mid_fixture
        cfg = TrainConfig(epochs=10, seed=2)
        spec = TileSpec(k=2, overlap_ratio=0.2)
        one = match_tiled(graph, shuffled, spec, cfg, workers=1)
        four = match_tiled(graph, shuffled, spec, cfg, workers=4)
        ok = (
            one.assignment.match == four.assignment.match
            and one.assignment.confidence == four.assignment.confidence
        )
        assert report(
            "criterion 8b worker invariance",
            ok,
            f"k=2 assignments identical across worker counts {{1, 4}}: {ok}",
        )

    def test_large_fixture_tiled_accuracy(self):
        graph = load_graph(DATA_DIR / "city_large.osm.xml")
        shuffled, record = shuffle_nodes(graph, seed=11)
        noisy = perturb(shuffled, NoiseConfig(level="low", seed=12))
        gt = GroundTruth.from_node_pairs(record.node_pairs(), graph, noisy)
        outcome = match_tiled(
            graph, noisy, TileSpec(k=2, overlap_ratio=0.2), TrainConfig(seed=0), workers=None
        )
        accuracy = road_accuracy(outcome.assignment, graph, noisy, gt).accuracy
        ok = accuracy >= 0.95
        assert report(
            "criterion 8c tiled accuracy",
            ok,
            f"k=2, overlap 0.2 on {graph.node_count}-node fixture at 1 sigma: "
            f"accuracy {accuracy * 100:.2f}% (need >= 95%)",
        )
