"""Command-line surface: match, tile-match, perturb, eval, export-viz.

Configuration comes from flags plus an optional flat key=value file; flags
win.  Every command is deterministic given (inputs, config, seed), and all
outputs land under --out-dir.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .evaluate import GroundTruth, road_accuracy, write_report
from .formats import FORMATS, MapFormatError, load_graph, save_graph
from .graph import GraphValidationError, RoadGraph
from .matching import (
    Assignment,
    TrainConfig,
    TrainingDivergenceError,
    hard_assign,
    read_correspondence_csv,
    train_pair,
    write_correspondence_csv,
    write_loss_trace_csv,
)
from .synth import (
    NoiseConfig,
    perturb,
    read_node_pairs_csv,
    read_road_pairs_csv,
    shuffle_nodes,
    write_node_pairs_csv,
    write_road_pairs_csv,
)
from .tiling import TileSpec, match_tiled, resolve_worker_count, suggest_k
from .viz import export_viz

log = logging.getLogger("mapalign")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_DIVERGED = 2

# flags that may also appear in a key=value config file
_CONFIG_KEYS = {
    "seed": int,
    "epochs": int,
    "lr": float,
    "lam": float,
    "sinkhorn_iters": int,
    "temperature": float,
    "alpha_fixed": float,
    "shared_bbox": lambda s: s.lower() in ("1", "true", "yes"),
    "raw_coordinates": lambda s: s.lower() in ("1", "true", "yes"),
    "k": int,
    "overlap": float,
    "max_nodes_per_tile": int,
    "format": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapalign", description="Unsupervised road-network map matching")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None, help="structure loss weight in [0,1]")
        p.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int, default=None)
        p.add_argument("--temperature", type=float, default=None)
        p.add_argument("--alpha-fixed", dest="alpha_fixed", type=float, default=None)
        p.add_argument("--shared-bbox", dest="shared_bbox", action="store_true", default=None)
        p.add_argument("--raw-coordinates", dest="raw_coordinates", action="store_true", default=None)
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file; flags win")

    def add_io_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--format", choices=FORMATS, default=None, help="input map format (default: by suffix)")
        p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")

    p_match = sub.add_parser("match", help="match two maps with a single training run")
    p_match.add_argument("source", type=Path)
    p_match.add_argument("target", type=Path)
    add_io_flags(p_match)
    add_train_flags(p_match)

    p_tile = sub.add_parser("tile-match", help="tiled matching with majority voting")
    p_tile.add_argument("source", type=Path)
    p_tile.add_argument("target", type=Path)
    add_io_flags(p_tile)
    add_train_flags(p_tile)
    p_tile.add_argument("--k", type=int, default=None, help="grid dimension (default: from --max-nodes-per-tile)")
    p_tile.add_argument("--overlap", type=float, default=None, help="tile overlap ratio in (0, 0.5)")
    p_tile.add_argument("--max-nodes-per-tile", dest="max_nodes_per_tile", type=int, default=None)

    p_perturb = sub.add_parser("perturb", help="write a noisy (optionally shuffled) copy plus ground truth")
    p_perturb.add_argument("input", type=Path)
    add_io_flags(p_perturb)
    p_perturb.add_argument("--level", default="low", help="low|medium|high or a numeric sigma multiplier")
    p_perturb.add_argument("--sigma-meters", type=float, default=None, help="base sigma (default 4.07)")
    p_perturb.add_argument("--seed", type=int, default=0)
    p_perturb.add_argument("--shuffle", action="store_true", help="also shuffle node identities")

    p_eval = sub.add_parser("eval", help="road-level accuracy of an assignment against ground truth")
    p_eval.add_argument("--assignment", type=Path, required=True, help="correspondence CSV")
    p_eval.add_argument("--source", type=Path, required=True)
    p_eval.add_argument("--target", type=Path, required=True)
    p_eval.add_argument("--gt-nodes", type=Path, default=None, help="node-pair ground truth CSV")
    p_eval.add_argument("--gt-roads", type=Path, default=None, help="road-pair ground truth CSV")
    add_io_flags(p_eval)

    p_viz = sub.add_parser("export-viz", help="side-by-side GeoJSON and SVG of a matched pair")
    p_viz.add_argument("source", type=Path)
    p_viz.add_argument("target", type=Path)
    p_viz.add_argument("--assignment", type=Path, required=True)
    add_io_flags(p_viz)

    return parser


def _apply_config_file(args: argparse.Namespace) -> None:
    """Fill unset flags from the key=value file; unknown keys are rejected."""
    path: Path | None = getattr(args, "config", None)
    if path is None:
        return
    if not path.is_file():
        raise MapFormatError(f"config file does not exist: {path}")
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MapFormatError(f"{path}: line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise MapFormatError(f"{path}: line {line_no}: unknown key {key!r}")
        if getattr(args, key, None) is None:  # flags win
            try:
                setattr(args, key, _CONFIG_KEYS[key](value.strip()))
            except ValueError as exc:
                raise MapFormatError(f"{path}: line {line_no}: bad value for {key}: {exc}") from exc


def _train_config(args: argparse.Namespace) -> TrainConfig:
    defaults = TrainConfig()
    return TrainConfig(
        epochs=args.epochs if args.epochs is not None else defaults.epochs,
        lr=args.lr if args.lr is not None else defaults.lr,
        sinkhorn_iters=args.sinkhorn_iters if args.sinkhorn_iters is not None else defaults.sinkhorn_iters,
        lam=args.lam if args.lam is not None else defaults.lam,
        seed=args.seed if args.seed is not None else defaults.seed,
        shared_bbox=bool(args.shared_bbox) if args.shared_bbox is not None else defaults.shared_bbox,
        alpha_fixed=args.alpha_fixed,
        temperature=args.temperature if args.temperature is not None else defaults.temperature,
        raw_coordinates=(
            bool(args.raw_coordinates) if args.raw_coordinates is not None else defaults.raw_coordinates
        ),
    )


def _config_payload(cfg: TrainConfig, extra: dict | None = None) -> dict:
    payload = {
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "sinkhorn_iters": cfg.sinkhorn_iters,
        "lam": cfg.lam,
        "seed": cfg.seed,
        "shared_bbox": cfg.shared_bbox,
        "alpha_fixed": cfg.alpha_fixed,
        "temperature": cfg.temperature,
        "raw_coordinates": cfg.raw_coordinates,
    }
    if extra:
        payload.update(extra)
    return payload


def _write_manifest(path: Path, inputs: dict, config: dict, alpha_final: float | None) -> None:
    canonical = json.dumps(config, sort_keys=True)
    manifest = {
        "inputs": inputs,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "alpha_final": alpha_final,
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load(path: Path, fmt: str | None) -> RoadGraph:
    graph = load_graph(path, fmt)
    log.info("loaded %s: %d nodes, %d edges, %d roads", path, graph.node_count, graph.edge_count, graph.road_count)
    return graph


def cmd_match(args: argparse.Namespace) -> int:
    graph_s = _load(args.source, args.format)
    graph_t = _load(args.target, args.format)
    cfg = _train_config(args)
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        _, similarity, trace = train_pair(graph_s, graph_t, cfg)
    except TrainingDivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    assignment = hard_assign(similarity)
    write_correspondence_csv(out_dir / "correspondence.csv", assignment)
    write_loss_trace_csv(out_dir / "loss_trace.csv", trace)
    _write_manifest(
        out_dir / "run_manifest.json",
        inputs={"source": str(args.source), "target": str(args.target)},
        config=_config_payload(cfg),
        alpha_final=trace[-1].alpha,
    )
    matched = sum(1 for t in assignment.match.values() if t is not None)
    log.info("matched %d/%d source nodes; final loss %.6f", matched, graph_s.node_count, trace[-1].loss)
    return EXIT_OK


def cmd_tile_match(args: argparse.Namespace) -> int:
    graph_s = _load(args.source, args.format)
    graph_t = _load(args.target, args.format)
    cfg = _train_config(args)
    defaults = TileSpec()
    max_nodes = args.max_nodes_per_tile if args.max_nodes_per_tile is not None else defaults.max_nodes_per_tile
    k = args.k if args.k is not None else suggest_k(graph_s, graph_t, max_nodes)
    spec = TileSpec(
        k=k,
        overlap_ratio=args.overlap if args.overlap is not None else defaults.overlap_ratio,
        max_nodes_per_tile=max_nodes,
    )
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        outcome = match_tiled(graph_s, graph_t, spec, cfg, workers=None)
    except TrainingDivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    write_correspondence_csv(out_dir / "correspondence.csv", outcome.assignment)
    for match in outcome.matches:
        row, col = match.tile.index
        write_loss_trace_csv(out_dir / f"loss_trace_r{row}c{col}.csv", match.trace)
    (out_dir / "tile_diagnostics.json").write_text(
        json.dumps(outcome.diagnostics(), indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(
        out_dir / "run_manifest.json",
        inputs={"source": str(args.source), "target": str(args.target)},
        config=_config_payload(
            cfg, extra={"k": spec.k, "overlap": spec.overlap_ratio, "max_nodes_per_tile": spec.max_nodes_per_tile}
        ),
        alpha_final=None,
    )
    matched = sum(1 for t in outcome.assignment.match.values() if t is not None)
    log.info(
        "tiled match k=%d (%d tiles, %d workers): matched %d/%d source nodes",
        spec.k, len(outcome.matches), resolve_worker_count(None), matched, graph_s.node_count,
    )
    return EXIT_OK


def cmd_perturb(args: argparse.Namespace) -> int:
    graph = _load(args.input, args.format)
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    node_pairs = {(nid, nid) for nid in graph.node_order()}
    if args.shuffle:
        graph_out, record = shuffle_nodes(graph, seed=args.seed)
        node_pairs = record.node_pairs()
    else:
        graph_out = graph

    try:
        level: str | float = float(args.level)
    except ValueError:
        level = args.level
    noise = NoiseConfig(
        sigma_meters=args.sigma_meters if args.sigma_meters is not None else NoiseConfig().sigma_meters,
        level=level,
        seed=args.seed,
    )
    graph_out = perturb(graph_out, noise)

    suffixes = "".join(args.input.suffixes) or ".geojson"
    stem = args.input.name[: -len("".join(args.input.suffixes))] if args.input.suffixes else args.input.name
    out_map = out_dir / f"{stem}_perturbed{suffixes}"
    save_graph(graph_out, out_map, args.format)
    write_node_pairs_csv(out_dir / "gt_nodes.csv", node_pairs)
    write_road_pairs_csv(out_dir / "gt_roads.csv", {(r.road_id, r.road_id) for r in graph.iter_roads()})
    log.info("wrote %s (sigma %.2f m, seed %d, shuffle=%s)", out_map, noise.effective_sigma, args.seed, args.shuffle)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    graph_s = _load(args.source, args.format)
    graph_t = _load(args.target, args.format)
    assignment: Assignment = read_correspondence_csv(args.assignment)
    if args.gt_nodes is None and args.gt_roads is None:
        raise MapFormatError("eval needs --gt-nodes and/or --gt-roads")
    if args.gt_nodes is not None:
        gt = GroundTruth.from_node_pairs(read_node_pairs_csv(args.gt_nodes), graph_s, graph_t)
        if args.gt_roads is not None:
            gt = GroundTruth(road_pairs=gt.road_pairs | read_road_pairs_csv(args.gt_roads), node_pairs=gt.node_pairs)
    else:
        gt = GroundTruth(road_pairs=read_road_pairs_csv(args.gt_roads))
    report = road_accuracy(assignment, graph_s, graph_t, gt)
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(out_dir / "eval_report.json", report)
    print(report.summary())
    return EXIT_OK


def cmd_export_viz(args: argparse.Namespace) -> int:
    graph_s = _load(args.source, args.format)
    graph_t = _load(args.target, args.format)
    assignment = read_correspondence_csv(args.assignment)
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    road_matches = export_viz(
        graph_s, graph_t, assignment, out_dir / "match_viz.geojson", out_dir / "match_viz.svg"
    )
    log.info("wrote %s and %s (%d matched road pairs)", out_dir / "match_viz.geojson", out_dir / "match_viz.svg", len(road_matches))
    return EXIT_OK


_COMMANDS = {
    "match": cmd_match,
    "tile-match": cmd_tile_match,
    "perturb": cmd_perturb,
    "eval": cmd_eval,
    "export-viz": cmd_export_viz,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        _apply_config_file(args)
        return _COMMANDS[args.command](args)
    except (MapFormatError, GraphValidationError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
