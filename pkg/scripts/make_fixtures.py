#!/usr/bin/env python3
"""Regenerate the bundled benchmark fixtures under tests/data/.

Deterministic; rerunning must reproduce the committed files byte-for-byte.
"""

from pathlib import Path

from mapalign.formats import save_graph
from mapalign.synth import synthetic_city

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"

# Mid-size fixture: density comparable to a compact urban extract
# (~150 nodes over ~420 x 360 m).
MID = dict(rows=8, cols=7, seed=101, block_m=60.0, intermediates=1, drop_fraction=0.05)

# Large fixture for the tiled pipeline (~1,900 nodes over ~2.1 x 2.1 km).
LARGE = dict(rows=20, cols=20, seed=202, block_m=110.0, intermediates=2, drop_fraction=0.05)


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    mid = synthetic_city(**MID)
    save_graph(mid, DATA_DIR / "city_mid.osm.xml", "osm-xml")
    print(f"city_mid: {mid.node_count} nodes, {mid.edge_count} edges, {mid.road_count} roads")
    large = synthetic_city(**LARGE)
    save_graph(large, DATA_DIR / "city_large.osm.xml", "osm-xml")
    print(f"city_large: {large.node_count} nodes, {large.edge_count} edges, {large.road_count} roads")


if __name__ == "__main__":
    main()
