"""Similarity fusion, Sinkhorn normalisation, the unsupervised loss, the
training loop, and hard assignment.

Training alternates a full forward pass (encode both maps, fuse feature and
geometric similarity, Sinkhorn-normalise) with Adam updates of every
parameter, driven purely by the distance and structure penalties; no labels
are involved anywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .encoder import (
    Embeddings,
    EncoderParams,
    FusionParam,
    KernelParams,
    encode,
    init_params,
    kernel_apply,
)
from .graph import (
    BoundingBox,
    EdgeFeatures,
    PseudoCoordinates,
    RoadGraph,
    build_pseudo_coordinates,
    edge_features,
    normalized_degree_vector,
)


class TrainingDivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


# Fused logits are divided by this before normalisation; 1.0 leaves Eq-style
# scores untouched.  Exposed as a config experiment: lower values sharpen the
# relaxed correspondence, which the bounded fused scores otherwise keep mild.
DEFAULT_FUSION_TEMPERATURE = 1.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.001
    sinkhorn_iters: int = 20
    lam: float = 0.5
    seed: int = 0
    shared_bbox: bool = False
    alpha_fixed: float | None = None
    temperature: float = DEFAULT_FUSION_TEMPERATURE
    # Ablation switch: feed raw lat/lon to the encoder and distance matrix
    # instead of the normalised pseudo coordinates.
    raw_coordinates: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.alpha_fixed is not None and not 0.0 <= self.alpha_fixed <= 1.0:
            raise ValueError("alpha_fixed must lie in [0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass
class ModelParams:
    encoder: EncoderParams
    kernel: KernelParams
    fusion: FusionParam

    def trainable(self, include_fusion: bool = True) -> list[Tensor]:
        tensors = [*self.encoder.tensors(), *self.kernel.tensors()]
        if include_fusion:
            tensors.append(self.fusion.a)
        return tensors


@dataclass(frozen=True)
class SimilarityMatrix:
    """Relaxed correspondence: the top-left block of the doubly stochastic
    matrix, plus the padded matrix and raw fused scores for diagnostics."""

    scores: np.ndarray
    raw_fused: np.ndarray
    padded: np.ndarray
    padded_size: int
    node_order_s: tuple[str, ...] = ()
    node_order_t: tuple[str, ...] = ()


@dataclass(frozen=True)
class Assignment:
    match: dict[str, str | None]
    confidence: dict[str, float]

    def matched_pairs(self) -> list[tuple[str, str]]:
        return [(s, t) for s, t in self.match.items() if t is not None]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    alpha: float


@dataclass(frozen=True)
class MatchResult:
    assignment: Assignment
    road_matches: dict[str, str]
    provenance: dict[str, object] = field(default_factory=dict)


# -- similarity building blocks --------------------------------------------------


def feature_similarity(h_s: Embeddings, h_t: Embeddings) -> np.ndarray:
    """Pairwise inner products of embedding rows (n_s x n_t)."""
    if h_s.values.shape[1] != h_t.values.shape[1]:
        raise ValueError(
            f"embedding widths differ: {h_s.values.shape[1]} vs {h_t.values.shape[1]}"
        )
    return h_s.values @ h_t.values.T


def pairwise_pseudo_distance(ps: PseudoCoordinates, pt: PseudoCoordinates) -> np.ndarray:
    """Exact Euclidean distances between the two coordinate sets (n_s x n_t)."""
    if ps.coords.shape[0] == 0 or pt.coords.shape[0] == 0:
        raise ValueError("pairwise distance requires non-empty coordinate sets")
    diff = ps.coords[:, None, :] - pt.coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def struct_diff(graph_s: RoadGraph, graph_t: RoadGraph) -> np.ndarray:
    """Signed differences of one-hop-averaged degrees (n_s x n_t)."""
    deg_s = normalized_degree_vector(graph_s)
    deg_t = normalized_degree_vector(graph_t)
    return deg_s[:, None] - deg_t[None, :]


def _sinkhorn_tensor(fused: Tensor, iters: int, temperature: float = 1.0) -> tuple[Tensor, Tensor]:
    """Pad to square, exponentiate in the log domain (logits scaled by
    1/temperature), and alternate column/row normalisations ending on rows.
    Returns (block, padded)."""
    if iters < 1:
        raise ValueError("sinkhorn iterations must be >= 1")
    if temperature <= 0.0:
        raise ValueError("sinkhorn temperature must be positive")
    n_s, n_t = fused.shape
    size = max(n_s, n_t)
    log_p = fused
    if n_s != n_t:
        fill = float(np.min(fused.values))
        log_p = ad.pad_constant(fused, size, size, fill)
    if temperature != 1.0:
        log_p = ad.smul(log_p, 1.0 / temperature)
    for _ in range(iters):
        log_p = ad.log_normalize(log_p, axis=0)
        log_p = ad.log_normalize(log_p, axis=1)
    padded = ad.exp(log_p)
    block = ad.crop(padded, n_s, n_t) if n_s != n_t else padded
    return block, padded


def sinkhorn(m: np.ndarray, iters: int, temperature: float = 1.0) -> SimilarityMatrix:
    """Doubly stochastic relaxation of a raw score matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("sinkhorn input must be a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("sinkhorn input must be finite")
    block, padded = _sinkhorn_tensor(ad.constant(m), iters, temperature)
    return SimilarityMatrix(
        scores=block.values,
        raw_fused=m.copy(),
        padded=padded.values,
        padded_size=padded.shape[0],
    )


def _fused_tensor(s_hat: Tensor, kern: Tensor, alpha: Tensor) -> Tensor:
    one = ad.constant(np.ones((1, 1)))
    return ad.add(ad.mul(alpha, s_hat), ad.mul(ad.sub(one, alpha), kern))


def fuse(
    s_hat: np.ndarray,
    d: np.ndarray,
    kernel: KernelParams,
    alpha: FusionParam | float,
    iters: int,
    temperature: float = DEFAULT_FUSION_TEMPERATURE,
) -> SimilarityMatrix:
    """Convex combination of feature scores with the spatial kernel of the
    distance matrix, then Sinkhorn at the fusion temperature."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if s_hat.shape != d.shape:
        raise ValueError(f"shape mismatch: scores {s_hat.shape} vs distances {d.shape}")
    alpha_value = alpha.alpha_value() if isinstance(alpha, FusionParam) else float(alpha)
    kern = kernel_apply(ad.constant(d), kernel)
    fused = _fused_tensor(ad.constant(s_hat), kern, ad.constant([[alpha_value]]))
    block, padded = _sinkhorn_tensor(fused, iters, temperature)
    return SimilarityMatrix(
        scores=block.values,
        raw_fused=fused.values,
        padded=padded.values,
        padded_size=padded.shape[0],
    )


def _loss_tensor(d: Tensor, t: Tensor, s_block: Tensor, lam: float) -> Tensor:
    l_dis = ad.frobenius_norm(ad.mul(d, s_block))
    l_struct = ad.frobenius_norm(ad.mul(t, s_block))
    return ad.add(ad.smul(l_dis, 1.0 - lam), ad.smul(l_struct, lam))


def matching_loss(d: np.ndarray, t: np.ndarray, s: np.ndarray, lam: float) -> float:
    """(1-lam) * ||D o S||_F + lam * ||T o S||_F over the unpadded block."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if d.shape != s.shape or t.shape != s.shape:
        raise ValueError("loss operands must share one shape")
    return _loss_tensor(ad.constant(d), ad.constant(t), ad.constant(s), lam).item()


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class _PairInputs:
    feats_s: PseudoCoordinates
    feats_t: PseudoCoordinates
    edges_s: EdgeFeatures
    edges_t: EdgeFeatures
    d: np.ndarray
    t: np.ndarray


def _raw_coordinate_carrier(graph: RoadGraph) -> PseudoCoordinates:
    # Ablation carrier only: raw lat/lon rows, outside the [0,1] contract of
    # build_pseudo_coordinates.
    return PseudoCoordinates(
        coords=graph.coordinate_matrix(),
        source_bbox=graph.bounding_box(),
        node_order=graph.node_order(),
    )


def prepare_pair(graph_s: RoadGraph, graph_t: RoadGraph, cfg: TrainConfig) -> _PairInputs:
    if graph_s.node_count == 0 or graph_t.node_count == 0:
        raise ValueError("both graphs must be non-empty")
    if cfg.raw_coordinates:
        feats_s = _raw_coordinate_carrier(graph_s)
        feats_t = _raw_coordinate_carrier(graph_t)
    elif cfg.shared_bbox:
        bbox: BoundingBox = graph_s.bounding_box().union(graph_t.bounding_box())
        feats_s = build_pseudo_coordinates(graph_s, bbox)
        feats_t = build_pseudo_coordinates(graph_t, bbox)
    else:
        feats_s = build_pseudo_coordinates(graph_s)
        feats_t = build_pseudo_coordinates(graph_t)
    return _PairInputs(
        feats_s=feats_s,
        feats_t=feats_t,
        edges_s=edge_features(graph_s),
        edges_t=edge_features(graph_t),
        d=pairwise_pseudo_distance(feats_s, feats_t),
        t=struct_diff(graph_s, graph_t),
    )


def _forward(
    graph_s: RoadGraph,
    graph_t: RoadGraph,
    inputs: _PairInputs,
    params: ModelParams,
    cfg: TrainConfig,
    d_const: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
    """One pass through the pipeline; returns (S block, padded, fused)."""
    h_s = encode(graph_s, inputs.feats_s, inputs.edges_s, params.encoder)
    h_t = encode(graph_t, inputs.feats_t, inputs.edges_t, params.encoder)
    s_hat = ad.matmul(h_s, ad.transpose(h_t))
    kern = kernel_apply(d_const, params.kernel)
    if cfg.alpha_fixed is None:
        alpha = params.fusion.alpha_tensor()
    else:
        alpha = ad.constant([[cfg.alpha_fixed]])
    fused = _fused_tensor(s_hat, kern, alpha)
    block, padded = _sinkhorn_tensor(fused, cfg.sinkhorn_iters, cfg.temperature)
    return block, padded, fused


def pair_loss_value(
    graph_s: RoadGraph, graph_t: RoadGraph, cfg: TrainConfig, params: ModelParams
) -> float:
    """Loss of one forward pass at the given parameters (no gradients)."""
    inputs = prepare_pair(graph_s, graph_t, cfg)
    d_const = ad.constant(inputs.d)
    with threadpool_limits(limits=1, user_api="blas"):
        block, _, _ = _forward(graph_s, graph_t, inputs, params, cfg, d_const)
        return _loss_tensor(d_const, ad.constant(inputs.t), block, cfg.lam).item()


def pair_loss_and_gradients(
    graph_s: RoadGraph, graph_t: RoadGraph, cfg: TrainConfig, params: ModelParams
) -> tuple[float, list[np.ndarray]]:
    """Loss plus d loss / d parameter for every trainable tensor."""
    inputs = prepare_pair(graph_s, graph_t, cfg)
    trainable = params.trainable(include_fusion=cfg.alpha_fixed is None)
    d_const = ad.constant(inputs.d)
    with threadpool_limits(limits=1, user_api="blas"), ad.Tape() as tape:
        block, _, _ = _forward(graph_s, graph_t, inputs, params, cfg, d_const)
        loss = _loss_tensor(d_const, ad.constant(inputs.t), block, cfg.lam)
        value = loss.item()
        tape.backward(loss, params=trainable)
    grads = [p.grad.copy() for p in trainable]
    for p in trainable:
        p.grad = None
    return value, grads


def train_pair(
    graph_s: RoadGraph,
    graph_t: RoadGraph,
    cfg: TrainConfig,
) -> tuple[ModelParams, SimilarityMatrix, list[EpochStats]]:
    """Full-batch unsupervised training of one map pair.

    Deterministic per cfg.seed; BLAS is pinned to one thread during the
    numeric loop so results do not depend on the host's core count or on how
    many tile workers share the machine.  Raises TrainingDivergenceError if
    the loss ever becomes non-finite.
    """
    inputs = prepare_pair(graph_s, graph_t, cfg)
    encoder, kernel, fusion = init_params(cfg.seed)
    params = ModelParams(encoder=encoder, kernel=kernel, fusion=fusion)
    trainable = params.trainable(include_fusion=cfg.alpha_fixed is None)
    optimizer = Adam(trainable, lr=cfg.lr)

    d_const = ad.constant(inputs.d)
    t_const = ad.constant(inputs.t)
    trace: list[EpochStats] = []
    with threadpool_limits(limits=1, user_api="blas"):
        for epoch in range(cfg.epochs):
            with ad.Tape() as tape:
                block, _, _ = _forward(graph_s, graph_t, inputs, params, cfg, d_const)
                loss = _loss_tensor(d_const, t_const, block, cfg.lam)
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise TrainingDivergenceError(
                        f"non-finite loss {loss_value!r} at epoch {epoch} (seed {cfg.seed})"
                    )
                tape.backward(loss, params=trainable)
            optimizer.step()
            optimizer.zero_grad()
            alpha_value = cfg.alpha_fixed if cfg.alpha_fixed is not None else params.fusion.alpha_value()
            trace.append(EpochStats(epoch=epoch, loss=loss_value, alpha=float(alpha_value)))

        block, padded, fused = _forward(graph_s, graph_t, inputs, params, cfg, d_const)
    similarity = SimilarityMatrix(
        scores=block.values,
        raw_fused=fused.values,
        padded=padded.values,
        padded_size=padded.shape[0],
        node_order_s=graph_s.node_order(),
        node_order_t=graph_t.node_order(),
    )
    return params, similarity, trace


# -- hard assignment ---------------------------------------------------------------


def hungarian(cost: np.ndarray) -> list[int | None]:
    """Minimum-cost assignment of rows to columns; optimal, with rows spilled
    onto internal padding (cost above any real entry) reported as None."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n_s, n_t = cost.shape
    if n_s > n_t:
        pad = np.full((n_s, n_s - n_t), cost.max() + 1.0)
        work = np.hstack([cost, pad])
    else:
        work = cost
    rows, cols = linear_sum_assignment(work)
    result: list[int | None] = [None] * n_s
    for r, c in zip(rows, cols):
        result[r] = int(c) if c < n_t else None
    return result


def hard_assign(similarity: SimilarityMatrix) -> Assignment:
    """Hungarian on cost 1 - S; confidence is the selected S entry."""
    scores = similarity.scores
    cols = hungarian(1.0 - scores)
    order_s = similarity.node_order_s or tuple(str(i) for i in range(scores.shape[0]))
    order_t = similarity.node_order_t or tuple(str(j) for j in range(scores.shape[1]))
    match: dict[str, str | None] = {}
    confidence: dict[str, float] = {}
    for i, src in enumerate(order_s):
        j = cols[i]
        if j is None:
            match[src] = None
            confidence[src] = 0.0
        else:
            match[src] = order_t[j]
            confidence[src] = float(scores[i, j])
    return Assignment(match=match, confidence=confidence)


def lift_road_matches(assignment: Assignment, graph_s: RoadGraph, graph_t: RoadGraph) -> dict[str, str]:
    """Road-level correspondences implied by the node assignment: each source
    road maps to the target road its matched member nodes support most, ties
    broken by the lower target road id."""
    support: dict[str, dict[str, int]] = {}
    for src, dst in assignment.matched_pairs():
        for r_s in graph_s.roads_of(src):
            counts = support.setdefault(r_s, {})
            for r_t in graph_t.roads_of(dst):
                counts[r_t] = counts.get(r_t, 0) + 1
    lifted: dict[str, str] = {}
    for r_s in sorted(support):
        counts = support[r_s]
        lifted[r_s] = min(counts, key=lambda r_t: (-counts[r_t], r_t))
    return lifted


# -- exports -----------------------------------------------------------------------


def write_correspondence_csv(path: str | Path, assignment: Assignment) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src_node_id", "dst_node_id", "confidence"])
        for src, dst in assignment.match.items():
            if dst is None:
                writer.writerow([src, "", ""])
            else:
                writer.writerow([src, dst, f"{assignment.confidence[src]:.12g}"])


def read_correspondence_csv(path: str | Path) -> Assignment:
    match: dict[str, str | None] = {}
    confidence: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["src_node_id", "dst_node_id", "confidence"]:
            raise ValueError(f"{path}: expected correspondence CSV header")
        for row in reader:
            src = row["src_node_id"]
            if row["dst_node_id"]:
                match[src] = row["dst_node_id"]
                confidence[src] = float(row["confidence"])
            else:
                match[src] = None
                confidence[src] = 0.0
    return Assignment(match=match, confidence=confidence)


def write_loss_trace_csv(path: str | Path, trace: list[EpochStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "alpha"])
        for row in trace:
            writer.writerow([row.epoch, f"{row.loss:.12g}", f"{row.alpha:.12g}"])
