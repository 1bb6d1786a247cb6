"""Shared node encoder and spatial compatibility kernel.

The encoder is a 3-layer mean-aggregation graph convolution whose neighbour
messages are scaled by a learned logistic gate of the normalised edge length;
the kernel is a scalar 2-layer network turning pseudo-coordinate distances
into a multiplicative compatibility in (0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EdgeFeatures, PseudoCoordinates, RoadGraph

HIDDEN_DIM = 32
GATE_HIDDEN_DIM = 8
ENCODER_LAYER_DIMS = ((2, HIDDEN_DIM), (HIDDEN_DIM, HIDDEN_DIM), (HIDDEN_DIM, HIDDEN_DIM))
KERNEL_LAYER_DIMS = ((1, HIDDEN_DIM), (HIDDEN_DIM, 1))
GATE_LAYER_DIMS = ((1, GATE_HIDDEN_DIM), (GATE_HIDDEN_DIM, 1))

PARAMS_FORMAT_VERSION = 1


@dataclass
class MLPParams:
    weights: list[Tensor]
    biases: list[Tensor]

    def tensors(self) -> list[Tensor]:
        return [*self.weights, *self.biases]


@dataclass
class EncoderParams:
    layers: MLPParams  # 2 -> 32 -> 32 -> 32
    gate: MLPParams  # 1 -> 8 -> 1, logistic output

    def tensors(self) -> list[Tensor]:
        return [*self.layers.tensors(), *self.gate.tensors()]


@dataclass
class KernelParams:
    net: MLPParams  # 1 -> 32 -> 1

    def tensors(self) -> list[Tensor]:
        return self.net.tensors()


@dataclass
class FusionParam:
    """Unconstrained scalar behind the fusion weight; alpha = logistic(a)."""

    a: Tensor

    def alpha_tensor(self) -> Tensor:
        return ad.sigmoid(self.a)

    def alpha_value(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.a.values[0, 0])))

    def tensors(self) -> list[Tensor]:
        return [self.a]


@dataclass(frozen=True)
class Embeddings:
    values: np.ndarray  # n x HIDDEN_DIM
    node_order: tuple[str, ...]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _init_mlp(rng: np.random.Generator, dims) -> MLPParams:
    weights = [ad.tensor(_glorot(rng, fi, fo), requires_grad=True) for fi, fo in dims]
    biases = [ad.tensor(np.zeros((1, fo)), requires_grad=True) for _, fo in dims]
    return MLPParams(weights=weights, biases=biases)


def init_params(seed: int) -> tuple[EncoderParams, KernelParams, FusionParam]:
    """Glorot-uniform weights, zero biases, a = 0 (alpha = 0.5); deterministic per seed."""
    rng = np.random.default_rng(seed)
    encoder = EncoderParams(layers=_init_mlp(rng, ENCODER_LAYER_DIMS), gate=_init_mlp(rng, GATE_LAYER_DIMS))
    kernel = KernelParams(net=_init_mlp(rng, KERNEL_LAYER_DIMS))
    fusion = FusionParam(a=ad.tensor(np.zeros((1, 1)), requires_grad=True))
    return encoder, kernel, fusion


def _scalar_mlp(x: Tensor, net: MLPParams) -> Tensor:
    """2-layer scalar network applied row-wise to an m x 1 input."""
    h = ad.relu(ad.add(ad.matmul(x, net.weights[0]), net.biases[0]))
    return ad.add(ad.matmul(h, net.weights[1]), net.biases[1])


def encode(
    graph: RoadGraph,
    pseudo: PseudoCoordinates,
    edges: EdgeFeatures,
    params: EncoderParams,
) -> Tensor:
    """Per-node embeddings (n x 32) from gated mean-aggregation message passing.

    Each layer computes h_u <- act(W @ ((h_u + sum_v g_uv h_v) / (deg(u)+1)) + b)
    with g_uv = logistic(gate(normalised edge length)); the final layer has no
    activation.  Rows follow pseudo.node_order.
    """
    order = pseudo.node_order
    if order != graph.node_order():
        raise ValueError("pseudo coordinate node order does not match the graph")
    index = {nid: i for i, nid in enumerate(order)}
    n = len(order)

    edge_list = sorted(edges.lengths)
    idx_u = np.array([index[u] for u, _ in edge_list], dtype=np.intp)
    idx_v = np.array([index[v] for _, v in edge_list], dtype=np.intp)
    lengths = np.array([[edges.lengths[e] / edges.scale] for e in edge_list]).reshape(-1, 1)

    gates = ad.sigmoid(_scalar_mlp(ad.constant(lengths), params.gate))
    gated_adj = ad.scatter_edges(gates, idx_u, idx_v, n)
    deg_plus_1 = ad.constant(np.array([[graph.degree(nid) + 1.0] for nid in order]))

    h = ad.constant(pseudo.coords)
    last = len(params.layers.weights) - 1
    for layer, (w, b) in enumerate(zip(params.layers.weights, params.layers.biases)):
        pooled = ad.div(ad.add(h, ad.matmul(gated_adj, h)), deg_plus_1)
        h = ad.add(ad.matmul(pooled, w), b)
        if layer != last:
            h = ad.relu(h)
    return h


def embeddings_from(h: Tensor, node_order: tuple[str, ...]) -> Embeddings:
    return Embeddings(values=h.values.copy(), node_order=node_order)


# Largest decay exponent; exp(-700) is still a positive float64, keeping the
# kernel inside (0, 1] even for absurd distances.
_MAX_DECAY = 700.0


def kernel_apply(d: Tensor, params: KernelParams) -> Tensor:
    """Elementwise exp(-softplus(net(d))) over a distance matrix; range (0, 1].

    The softplus keeps the exponent nonnegative so the kernel cannot amplify
    scores past 1 regardless of the learned weights.
    """
    rows, cols = d.shape
    flat = ad.reshape(d, rows * cols, 1)
    decay = ad.clip_max(ad.softplus(_scalar_mlp(flat, params.net)), _MAX_DECAY)
    return ad.reshape(ad.exp(ad.neg(decay)), rows, cols)


# -- parameter persistence ------------------------------------------------------

_TENSOR_NAMES = (
    "encoder.w0", "encoder.w1", "encoder.w2",
    "encoder.b0", "encoder.b1", "encoder.b2",
    "gate.w0", "gate.w1", "gate.b0", "gate.b1",
    "kernel.w0", "kernel.w1", "kernel.b0", "kernel.b1",
    "fusion.a",
)


def _named_tensors(encoder: EncoderParams, kernel: KernelParams, fusion: FusionParam) -> dict[str, Tensor]:
    ordered = [
        *encoder.layers.weights, *encoder.layers.biases,
        *encoder.gate.weights, *encoder.gate.biases,
        *kernel.net.weights, *kernel.net.biases,
        fusion.a,
    ]
    return dict(zip(_TENSOR_NAMES, ordered))


def save_params(path: str | Path, encoder: EncoderParams, kernel: KernelParams, fusion: FusionParam) -> None:
    manifest = {
        "format_version": PARAMS_FORMAT_VERSION,
        "tensors": {
            name: {"shape": list(t.values.shape), "values": t.values.ravel().tolist()}
            for name, t in _named_tensors(encoder, kernel, fusion).items()
        },
    }
    Path(path).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> tuple[EncoderParams, KernelParams, FusionParam]:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    if manifest.get("format_version") != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported parameter manifest version {manifest.get('format_version')!r}")
    encoder, kernel, fusion = init_params(seed=0)
    named = _named_tensors(encoder, kernel, fusion)
    stored = manifest["tensors"]
    missing = set(_TENSOR_NAMES) - set(stored)
    if missing:
        raise ValueError(f"parameter manifest missing tensors: {sorted(missing)}")
    for name, t in named.items():
        entry = stored[name]
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != t.values.shape:
            raise ValueError(f"tensor {name}: stored shape {arr.shape} != expected {t.values.shape}")
        t.values = arr
    return encoder, kernel, fusion
