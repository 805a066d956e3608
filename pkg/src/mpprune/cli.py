"""Command-line entry point: ``mpprune <subcommand> ...``.

Every subcommand prints ``key=value`` lines first and a one-line human summary
last. Exit status is 0 on success, 1 on operational failure (unreadable
input, generation failure, untestable data) and 2 on usage errors.

Files written without an explicit path go to ``$MPPRUNE_OUT_DIR`` (default:
the current directory).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .experiment import (CSV_HEADER, PlanError, boxplot_columns, curve_rows, difference_histogram, load_plan,
                         paired_samples, quality_sweep, read_results, run_plan)
from .graph import LARGEST, REJECT, GeometricSpec, GraphError, diameter, dump, generate_geometric, load_graph
from .protocol import Variant
from .simnet import RunMetrics, SimConfig, SimulationFault, run_simulation
from .stats import InsufficientData, UndefinedEffect, effect_size, wilcoxon_signed_rank

OUT_DIR_ENV = "MPPRUNE_OUT_DIR"
STAT_METRICS = ("avg_msgs", "max_msgs", "ticks", "mem_proxy", "loss_frac")


class CliFailure(Exception):
    """Operational failure: reported on stderr, exit status 1."""


def out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "."))


def emit(**pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={v}")


def _retries(value: str) -> int | None | str:
    if value.lower() == "auto":
        return "auto"
    if value.lower() in ("none", "inf", "unbounded"):
        return None
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return n


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _probability(value: str) -> float:
    p = float(value)
    if not 0.0 <= p < 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return p


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _read_graph(path: str, policy: str):
    try:
        with open(path, "rb") as fh:
            return load_graph(fh.read(), policy)[0]
    except OSError as exc:
        raise CliFailure(f"cannot read graph {path}: {exc.strerror}") from None
    except GraphError as exc:
        raise CliFailure(f"bad graph {path}: {exc}") from None


def _sim_config(args, variant: Variant) -> SimConfig:
    retries = args.max_retries
    if retries == "auto":
        retries = 16 if args.loss > 0 else None
    return SimConfig(m=args.m, D=args.D, variant=variant, loss_p=args.loss, latency_ticks=args.latency,
                     window=args.window, timeout_ticks=args.timeout, max_retries=retries, seed=args.seed,
                     loss_model=args.loss_model, symmetric_loss=args.symmetric_loss,
                     bandwidth=args.bandwidth, payload_bytes=args.payload_bytes)


def _simulate(g, cfg: SimConfig) -> RunMetrics:
    try:
        return run_simulation(g, cfg)
    except SimulationFault as exc:
        raise CliFailure(f"simulation fault: {exc}") from None


def _leaf_packets(g, met: RunMetrics) -> int:
    return sum(met.packets_sent[i] for i in range(g.n) if g.degree(i) == 1)


def _summary_pairs(g, met: RunMetrics) -> dict:
    return dict(n=g.n, edges=g.edge_count, variant=met.variant, m=met.m, D=met.D, seed=met.seed,
                avg_msgs=repr(met.avg_msgs), max_msgs=met.max_msgs, avg_sent=repr(met.avg_sent),
                leaf_packets_sent=_leaf_packets(g, met), retransmissions=sum(met.retransmissions),
                ticks=met.ticks, rounds=met.rounds, mem_proxy=met.mem_proxy,
                loss_frac=repr(met.loss_fraction), leader=met.selected_leader,
                wall_s=f"{met.wall_seconds:.4f}")


def _write_json(target: str, payload) -> str:
    text = json.dumps(payload, sort_keys=True, indent=1)
    if target == "-":
        print(text)
        return "-"
    path = Path(target)
    if not path.is_absolute() and path.parent == Path("."):
        path = out_dir() / path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n")
    return str(path)


def _write_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = GeometricSpec(args.n, args.grid, args.range, args.seed, args.max_attempts, args.connectivity)
    try:
        g = generate_geometric(spec)
    except GraphError as exc:
        raise CliFailure(str(exc)) from None
    path = Path(args.out) if args.out else out_dir() / f"geo-n{args.n}-s{args.seed}.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump(g))
    dia = diameter(g)
    emit(n=g.n, edges=g.edge_count, diameter=dia, grid=args.grid, range=args.range, seed=args.seed, out=path)
    print(f"wrote a {g.n}-node geometric graph with {g.edge_count} edges and diameter {dia} to {path}")
    return 0


def cmd_run(args) -> int:
    g = _read_graph(args.graph, args.policy)
    met = _simulate(g, _sim_config(args, Variant.parse(args.variant)))
    emit(**_summary_pairs(g, met))
    if args.json:
        where = _write_json(args.json, met.to_dict())
        if where != "-":
            emit(json=where)
    print(f"{met.variant}: {met.avg_msgs:.2f} packets received per node on average (max {met.max_msgs}), "
          f"{met.ticks} ticks, leader {met.selected_leader}")
    return 0


def cmd_compare(args) -> int:
    g = _read_graph(args.graph, args.policy)
    p = _simulate(g, _sim_config(args, Variant.ORIGINAL))
    i = _simulate(g, _sim_config(args, Variant.ENHANCED))
    non_leaf = [k for k in range(g.n) if g.degree(k) > 1]
    same_estimates = all(p.estimates[k] == i.estimates[k] for k in non_leaf)
    reduction = 100.0 * (p.avg_msgs - i.avg_msgs) / p.avg_msgs if p.avg_msgs else 0.0
    emit(n=g.n, edges=g.edge_count, m=args.m, D=args.D, loss_p=args.loss, seed=args.seed,
         avg_msgs_P=repr(p.avg_msgs), avg_msgs_I=repr(i.avg_msgs), avg_msgs_delta=repr(p.avg_msgs - i.avg_msgs),
         max_msgs_P=p.max_msgs, max_msgs_I=i.max_msgs, max_msgs_delta=p.max_msgs - i.max_msgs,
         sent_P=sum(p.packets_sent), sent_I=sum(i.packets_sent),
         ticks_P=p.ticks, ticks_I=i.ticks, ticks_delta=p.ticks - i.ticks,
         mem_proxy_P=p.mem_proxy, mem_proxy_I=i.mem_proxy,
         loss_frac_P=repr(p.loss_fraction), loss_frac_I=repr(i.loss_fraction),
         leader_P=p.selected_leader, leader_I=i.selected_leader,
         leaders_equal=int(p.selected_leader == i.selected_leader),
         non_leaf_estimates_equal=int(same_estimates),
         reduction_pct=repr(reduction),
         wall_s_P=f"{p.wall_seconds:.4f}", wall_s_I=f"{i.wall_seconds:.4f}")
    if args.json:
        where = _write_json(args.json, {"original": p.to_dict(), "enhanced": i.to_dict()})
        if where != "-":
            emit(json=where)
    print(f"enhanced receives {reduction:.2f}% fewer packets per node; leaders "
          f"{'agree' if p.selected_leader == i.selected_leader else 'differ'} "
          f"({p.selected_leader} vs {i.selected_leader})")
    return 0


def cmd_sweep(args) -> int:
    try:
        text = Path(args.plan).read_text()
    except OSError as exc:
        raise CliFailure(f"cannot read plan {args.plan}: {exc.strerror}") from None
    try:
        plan = load_plan(text, base_dir=Path(args.plan).parent)
    except PlanError as exc:
        raise CliFailure(str(exc)) from None
    output = args.out or plan.output or str(out_dir() / (Path(args.plan).stem + ".csv"))
    out_path = Path(output)
    if not out_path.is_absolute() and args.out is None and plan.output is not None:
        out_path = Path(args.plan).parent / out_path
    out_path.parent.mkdir(parents=True, exist_ok=True)

    def progress(gid, rows, err):
        if args.verbose:
            print(f"# {gid}: {rows} rows" + (f" ({err})" if err else ""), file=sys.stderr)

    try:
        result = run_plan(plan, str(out_path), jobs=args.jobs, progress=progress)
    except PlanError as exc:
        raise CliFailure(str(exc)) from None
    failed_cells = sum(1 for r in result.rows if r["errors"])
    emit(cells=plan.cell_count, rows=len(result.rows), executed=result.executed, skipped=result.skipped,
         failed_cells=failed_cells, failed_sources=len(result.source_errors), out=out_path)
    for gid, err in result.source_errors.items():
        print(f"source_error[{gid}]={err}")
    print(f"{len(result.rows)} of {plan.cell_count} cells in {out_path}")
    if result.source_errors:
        raise CliFailure(f"{len(result.source_errors)} graph source(s) could not be loaded")
    return 0


def cmd_quality(args) -> int:
    g = _read_graph(args.graph, args.policy)
    cfg = replace(_sim_config(args, Variant.ORIGINAL), loss_p=0.0)
    dia = diameter(g)
    D_values = args.D_list or sorted({5, 14, dia})
    records = quality_sweep(g, D_values, cfg, graph_id=Path(args.graph).stem)
    rows = []
    for r in records:
        row = dict(graph_id=r.graph_id, D=r.D, exact_leader=r.exact_leader,
                   leader_P=r.approx_leader["original"], leader_I=r.approx_leader["enhanced"],
                   dist_P=r.distance["original"], dist_I=r.distance["enhanced"])
        rows.append(row)
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    if args.out:
        _write_csv(Path(args.out), rows, list(rows[0]))
    emit(diameter=dia)
    zero = [r.D for r in records if r.distance["original"] == 0]
    print(f"exact leader {records[0].exact_leader}; selected leader coincides for D in {zero or 'none'}")
    return 0


def cmd_stats(args) -> int:
    rows = _load_results(args.results)
    where = {}
    if args.m is not None:
        where["m"] = args.m
    if args.D is not None:
        where["D"] = args.D
    tested = 0
    for metric in args.metrics:
        pairs = paired_samples(rows, metric, **where)
        line = dict(metric=metric, pairs=len(pairs),
                    nonzero=sum(1 for p in pairs if p.difference != 0))
        try:
            p = wilcoxon_signed_rank(pairs)
            line.update(p=repr(p), significant=int(p < args.alpha))
            tested += 1
        except InsufficientData as exc:
            line.update(p="nan", insufficient=str(exc).replace(" ", "_"))
        try:
            line["effect"] = repr(effect_size(pairs))
        except UndefinedEffect:
            line["effect"] = "nan"
        print(" ".join(f"{k}={v}" for k, v in line.items()))
    if not tested:
        raise CliFailure("insufficient data: no metric has enough nonzero paired differences")
    print(f"{tested} of {len(args.metrics)} metrics tested at alpha={args.alpha}")
    return 0


def _load_results(path: str) -> list[dict]:
    try:
        return read_results(path)
    except OSError as exc:
        raise CliFailure(f"cannot read results {path}: {exc.strerror}") from None
    except PlanError as exc:
        raise CliFailure(str(exc)) from None


def cmd_plotdata(args) -> int:
    if not args.results and not args.graph:
        raise CliFailure("plotdata needs --results and/or --graph")
    target = Path(args.out_dir) if args.out_dir else out_dir()
    written = []
    if args.results:
        rows = _load_results(args.results)
        for metric in args.metrics:
            pairs = paired_samples(rows, metric)
            hist = difference_histogram(pairs, args.bins)
            path = target / f"diff_hist_{metric}.csv"
            _write_csv(path, hist, ["lo", "hi", "count"])
            written.append(path)
        curves = curve_rows(rows)
        path = target / "loss_time_curves.csv"
        _write_csv(path, curves, ["variant", "m", "loss_p", "graphs", "ticks", "loss_frac", "mem_proxy"])
        written.append(path)
    if args.graph:
        g = _read_graph(args.graph, args.policy)
        box = boxplot_columns(g, _sim_config(args, Variant.ORIGINAL))
        path = target / f"boxplot_D{args.D}_m{args.m}.csv"
        _write_csv(path, box, ["node", "P", "I"])
        written.append(path)
    for k, path in enumerate(written):
        print(f"file{k}={path}")
    print(f"wrote {len(written)} plot data files to {target}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_sim_flags(p: argparse.ArgumentParser, graph: bool = True) -> None:
    if graph:
        p.add_argument("--graph", required=True, help="edge list or graph dump")
        p.add_argument("--policy", choices=(LARGEST, REJECT), default=LARGEST,
                       help="what to do with a disconnected edge list")
    p.add_argument("--m", type=_positive, default=1, help="packets per message")
    p.add_argument("--D", type=_positive, default=12, help="iteration cap")
    p.add_argument("--loss", type=_probability, default=0.0, help="drop probability (per packet or per byte)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latency", type=_positive, default=1, help="one-way latency in ticks")
    p.add_argument("--window", type=_positive, default=None, help="Go-Back-N window (default m)")
    p.add_argument("--timeout", type=_positive, default=None, help="retransmission timeout (default 4*latency)")
    p.add_argument("--max-retries", type=_retries, default="auto",
                   help="timeouts per packet before a message is lost; 'none' is unbounded "
                        "(default: unbounded without loss, 16 with loss)")
    p.add_argument("--loss-model", choices=("packet", "byte"), default="packet")
    p.add_argument("--symmetric-loss", action="store_true", help="drop ACKs too")
    p.add_argument("--bandwidth", type=_positive, default=None, help="wire bytes per tick per link")
    p.add_argument("--payload-bytes", type=int, default=0, help="pad every message to this many bytes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpprune", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random geometric graph")
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--grid", type=_positive, default=250, help="lattice side")
    p.add_argument("--range", type=float, default=10.0, help="connection range (strict)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--connectivity", choices=("resample", "largest"), default="resample")
    p.add_argument("--max-attempts", type=_positive, default=1000, help="resampling bound")
    p.add_argument("--out", help=f"output path (default ${OUT_DIR_ENV}/geo-n<N>-s<SEED>.txt)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="simulate one variant on one graph")
    _add_sim_flags(p)
    p.add_argument("--variant", choices=("original", "enhanced"), default="original")
    p.add_argument("--json", help="write per-node detail as JSON ('-' for stdout)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run both variants on one graph and seed")
    _add_sim_flags(p)
    p.add_argument("--json", help="write per-node detail of both runs as JSON ('-' for stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="execute a plan file into a results CSV")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", help="results CSV (default: the plan's output, else $%s/<plan>.csv)" % OUT_DIR_ENV)
    p.add_argument("--jobs", type=_positive, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("quality", help="leader distance to the exact leader across D")
    _add_sim_flags(p)
    p.add_argument("--D-list", type=_positive, nargs="+", help="D values (default: 5, 14, diameter)")
    p.add_argument("--out", help="also write the records as CSV")
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("stats", help="Wilcoxon signed-rank and effect size per metric")
    p.add_argument("--results", required=True)
    p.add_argument("--metrics", nargs="+", choices=STAT_METRICS, default=list(STAT_METRICS))
    p.add_argument("--m", type=int, help="only rows with this m")
    p.add_argument("--D", type=int, help="only rows with this D")
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plotdata", help="write per-figure CSVs")
    _add_sim_flags(p, graph=False)
    p.add_argument("--results", help="results CSV for histograms and loss/time curves")
    p.add_argument("--graph", help="graph for the per-node boxplot columns")
    p.add_argument("--policy", choices=(LARGEST, REJECT), default=LARGEST)
    p.add_argument("--metrics", nargs="+", choices=STAT_METRICS, default=["avg_msgs", "max_msgs"])
    p.add_argument("--bins", type=_positive, default=20)
    p.add_argument("--out-dir", help=f"target directory (default ${OUT_DIR_ENV})")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen" and args.n > args.grid ** 2:
        parser.error(f"--n {args.n} exceeds the grid capacity {args.grid}^2 = {args.grid ** 2}")
    if args.command == "gen" and not args.range > 0:
        parser.error("--range must be positive")
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1
