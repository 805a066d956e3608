"""Hop distance between the exact and the selected leader as D grows.

    python demos/04_leader_quality.py --n 600 --seed 5
"""
from __future__ import annotations

import argparse

from mpprune.experiment import quality_sweep
from mpprune.graph import GeometricSpec, diameter, generate_geometric


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    g = generate_geometric(GeometricSpec(args.n, 250, 10, args.seed, connectivity="largest"))
    dia = diameter(g)
    print(f"largest component: {g.n} nodes, diameter {dia}")
    for r in quality_sweep(g, sorted({2, 5, 8, 14, dia})):
        print(f"D={r.D:3d} exact={r.exact_leader:4d} selected={r.approx_leader['original']:4d} "
              f"hops={r.distance['original']}")


if __name__ == "__main__":
    main()
