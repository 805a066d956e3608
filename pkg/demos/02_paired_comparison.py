"""Run a small paired sweep and test whether the enhancement changes each metric.

    python demos/02_paired_comparison.py --graphs 30
"""
from __future__ import annotations

import argparse

from mpprune.experiment import ExperimentPlan, ensemble_sources, mean_reduction, paired_samples, run_plan, summarize
from mpprune.stats import InsufficientData, UndefinedEffect, effect_size, wilcoxon_signed_rank


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", help="optional results CSV (rerunning resumes it)")
    args = ap.parse_args()

    plan = ExperimentPlan(ensemble_sources(args.graphs, (50, 150), seed=args.seed, grid_scale=7),
                          m_values=(1, 10), seed=args.seed)
    result = run_plan(plan, args.out)
    print(f"{len(result.rows)} rows ({result.executed} run, {result.skipped} reused)")
    print(f"mean reduction in packets received per node: {mean_reduction(summarize(result.rows)):.3f}%")

    for metric in ("avg_msgs", "max_msgs", "ticks", "mem_proxy"):
        pairs = paired_samples(result.rows, metric, m=10)
        try:
            p = f"{wilcoxon_signed_rank(pairs):.3g}"
        except InsufficientData:
            p = "n/a (too few nonzero differences)"
        try:
            eff = f"{effect_size(pairs):.3f}"
        except UndefinedEffect:
            eff = "n/a"
        print(f"{metric:10s} pairs={len(pairs):3d} p={p} effect={eff}")


if __name__ == "__main__":
    main()
