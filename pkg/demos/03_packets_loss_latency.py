"""How the number of packets per message trades time and loss against memory.

The total payload is fixed and loss is per byte, so a large packet is more
likely to be hit than a small one, and a lost small packet costs less to
resend.

    python demos/03_packets_loss_latency.py --graphs 5
"""
from __future__ import annotations

import argparse
import statistics

from mpprune.experiment import derive_seed, ensemble_sources
from mpprune.simnet import SimConfig, run_simulation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=5)
    ap.add_argument("--m", type=int, nargs="+", default=[1, 10, 50])
    args = ap.parse_args()

    graphs = [s.load() for s in ensemble_sources(args.graphs, (50, 120), seed=11, grid_scale=7)]
    print(f"{'m':>3} {'ticks':>8} {'loss':>8} {'memory':>9}")
    for m in args.m:
        runs = [run_simulation(g, SimConfig(m=m, loss_p=1e-5, loss_model="byte", bandwidth=64,
                                            payload_bytes=20000, max_retries=2, seed=derive_seed(7, k)))
                for k, g in enumerate(graphs)]
        print(f"{m:>3} {statistics.median(r.ticks for r in runs):>8} "
              f"{statistics.median(r.loss_fraction for r in runs):>8.4f} "
              f"{statistics.median(r.mem_proxy for r in runs):>9}")


if __name__ == "__main__":
    main()
