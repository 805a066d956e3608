"""Study design: graph ensembles, plan sweeps, paired comparisons, leader quality.

A plan is the cartesian product of graph sources, ``m``, ``D``, loss
probability, repetitions and variants. Every cell becomes one CSV row. Cells
are keyed by ``(graph_id, variant, m, D, loss_p, seed)``; rerunning a plan
skips the keys already present in the output file. Both variants of a cell
share the seed, so their loss channels are correlated and the pair is a fair
comparison.
"""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import (LARGEST, GeometricSpec, Graph, GraphError, argmax_closeness, bfs_distances,
                    distance_profile, generate_geometric, load_graph)
from .protocol import Variant
from .simnet import RunMetrics, SimConfig, SimulationFault, run_simulation
from .stats import effect_size, wilcoxon_signed_rank

__all__ = [
    "CSV_HEADER",
    "GraphSource",
    "ExperimentPlan",
    "PlanResult",
    "PairedSample",
    "QualityRecord",
    "PlanError",
    "ensemble_sources",
    "derive_seed",
    "load_plan",
    "run_plan",
    "read_results",
    "write_results",
    "paired_samples",
    "quality_sweep",
    "summarize",
    "mean_reduction",
    "wilcoxon_signed_rank",
    "effect_size",
    "difference_histogram",
    "boxplot_columns",
    "curve_rows",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("graph_id,n,edges,diameter,variant,m,D,loss_p,seed,avg_msgs,max_msgs,ticks,wall_s,"
              "mem_proxy,loss_frac,leader,leader_dist_exact,errors").split(",")
KEY_FIELDS = ("graph_id", "variant", "m", "D", "loss_p", "seed")
METRICS = ("avg_msgs", "max_msgs", "ticks", "mem_proxy", "loss_frac")


class PlanError(ValueError):
    """The plan file or plan object is invalid."""


# ---------------------------------------------------------------------------
# graph sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphSource:
    """Either a geometric spec or an edge-list file, with a stable id."""

    graph_id: str
    spec: GeometricSpec | None = None
    path: str | None = None
    policy: str = LARGEST

    def __post_init__(self):
        if (self.spec is None) == (self.path is None):
            raise PlanError(f"source {self.graph_id!r} needs exactly one of spec or path")

    def load(self) -> Graph:
        if self.spec is not None:
            return generate_geometric(self.spec)
        with open(self.path, "rb") as fh:
            return load_graph(fh.read(), self.policy)[0]


def derive_seed(master: int, *path: int) -> int:
    """A 32-bit seed that depends only on ``master`` and the index path."""
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


def ensemble_sources(count: int, n_range: tuple[int, int], seed: int = 0, grid_side: int | None = 250,
                     grid_scale: float | None = None, range_: float = 10.0,
                     connectivity: str = "resample", max_retries: int = 1000,
                     prefix: str = "geo") -> list[GraphSource]:
    """``count`` geometric specs with n drawn uniformly from ``n_range``.

    ``grid_scale`` (if set) sizes the lattice as ``ceil(grid_scale * sqrt(n))``
    so the expected degree stays constant across n; otherwise every graph uses
    ``grid_side``.
    """
    lo, hi = n_range
    if not 1 <= lo <= hi:
        raise PlanError(f"bad n range {n_range}")
    out = []
    for k in range(count):
        gseed = derive_seed(seed, k)
        n = int(np.random.default_rng(gseed).integers(lo, hi + 1))
        side = math.ceil(grid_scale * math.sqrt(n)) if grid_scale else grid_side
        spec = GeometricSpec(n, side, range_, gseed, max_retries, connectivity)
        out.append(GraphSource(f"{prefix}{k:03d}", spec=spec))
    return out


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------

@dataclass
class ExperimentPlan:
    sources: list[GraphSource]
    m_values: tuple[int, ...] = (1,)
    D_values: tuple[int, ...] = (12,)
    loss_values: tuple[float, ...] = (0.0,)
    variants: tuple[Variant, ...] = (Variant.ORIGINAL, Variant.ENHANCED)
    repetitions: int = 1
    seed: int = 0
    output: str | None = None
    latency_ticks: int = 1
    window: int | None = None
    timeout_ticks: int | None = None
    # "auto": unbounded without loss, 16 with loss
    max_retries: int | None | str = "auto"
    loss_model: str = "packet"
    bandwidth: int | None = None
    payload_bytes: int = 0

    def __post_init__(self):
        self.variants = tuple(Variant.parse(v) for v in self.variants)
        for name in ("sources", "m_values", "D_values", "loss_values", "variants"):
            if not getattr(self, name):
                raise PlanError(f"plan factor {name} is empty")
        if self.repetitions < 1:
            raise PlanError("repetitions must be at least 1")
        ids = [s.graph_id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise PlanError("graph ids must be unique")

    def config(self, m: int, D: int, loss_p: float, variant: Variant, seed: int) -> SimConfig:
        retries = self.max_retries
        if retries == "auto":
            retries = 16 if loss_p > 0 else None
        return SimConfig(m=m, D=D, variant=variant, loss_p=loss_p, latency_ticks=self.latency_ticks,
                         window=self.window, timeout_ticks=self.timeout_ticks, max_retries=retries,
                         seed=seed, loss_model=self.loss_model, bandwidth=self.bandwidth,
                         payload_bytes=self.payload_bytes)

    def cells(self, index: int) -> list[tuple]:
        """``(m, D, loss_p, variant, seed)`` for one source, in canonical order."""
        out = []
        for rep in range(self.repetitions):
            seed = derive_seed(self.seed, index, rep)
            for m in self.m_values:
                for D in self.D_values:
                    for loss_p in self.loss_values:
                        for v in self.variants:
                            out.append((m, D, loss_p, v, seed))
        return out

    @property
    def cell_count(self) -> int:
        return (len(self.sources) * self.repetitions * len(self.m_values) * len(self.D_values)
                * len(self.loss_values) * len(self.variants))


def _split(value: str, conv) -> tuple:
    return tuple(conv(x.strip()) for x in value.replace(";", ",").split(",") if x.strip())


def _opt_int(value: str | None) -> int | None:
    if value is None or value.strip().lower() in ("", "none"):
        return None
    return int(value)


def load_plan(text: str, base_dir: str | os.PathLike = ".") -> ExperimentPlan:
    """Parse a plan file.

    ``[plan]`` holds the factors (comma-separated lists), ``[ensemble]`` an
    optional geometric ensemble and every ``[graph:NAME]`` section an
    edge-list file (``path``, optional ``policy``).
    """
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise PlanError(f"unreadable plan: {exc}") from None
    if not cp.has_section("plan"):
        raise PlanError("plan file needs a [plan] section")
    p = cp["plan"]
    try:
        sources: list[GraphSource] = []
        if cp.has_section("ensemble"):
            e = cp["ensemble"]
            lo, _, hi = e.get("n", "100").partition("-")
            scale = e.get("grid_scale")
            sources += ensemble_sources(
                e.getint("count", 100), (int(lo), int(hi or lo)), seed=e.getint("seed", p.getint("seed", 0)),
                grid_side=e.getint("grid", 250), grid_scale=float(scale) if scale else None,
                range_=e.getfloat("range", 10.0), connectivity=e.get("connectivity", "resample"),
                max_retries=e.getint("max_retries", 1000), prefix=e.get("prefix", "geo"))
        for name in cp.sections():
            if name.startswith("graph:"):
                sec = cp[name]
                path = Path(sec["path"])
                if not path.is_absolute():
                    path = Path(base_dir) / path
                sources.append(GraphSource(name[len("graph:"):], path=str(path),
                                           policy=sec.get("policy", LARGEST)))
        retries = p.get("max_retries", "auto").strip().lower()
        return ExperimentPlan(
            sources=sources,
            m_values=_split(p.get("m", "1"), int),
            D_values=_split(p.get("D", "12"), int),
            loss_values=_split(p.get("loss", "0"), float),
            variants=_split(p.get("variants", "original,enhanced"), Variant.parse),
            repetitions=p.getint("repetitions", 1),
            seed=p.getint("seed", 0),
            output=p.get("output"),
            latency_ticks=p.getint("latency", 1),
            window=_opt_int(p.get("window")),
            timeout_ticks=_opt_int(p.get("timeout")),
            max_retries=retries if retries == "auto" else _opt_int(retries),
            loss_model=p.get("loss_model", "packet"),
            bandwidth=_opt_int(p.get("bandwidth")),
            payload_bytes=p.getint("payload_bytes", 0),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, PlanError):
            raise
        raise PlanError(f"invalid plan: {exc}") from None


# ---------------------------------------------------------------------------
# results files
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def row_key(row: dict) -> tuple:
    return (str(row["graph_id"]), str(row["variant"]), int(row["m"]), int(row["D"]),
            float(row["loss_p"]), int(row["seed"]))


def read_results(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = set(CSV_HEADER) - set(reader.fieldnames)
        if missing:
            raise PlanError(f"{path}: not a results file (missing {sorted(missing)})")
        return list(reader)


def write_results(path: str | os.PathLike | None, rows: Iterable[dict]) -> str:
    """Write rows under the fixed header; returns the CSV text."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in CSV_HEADER})
    text = buf.getvalue()
    if path is not None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    return text


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass
class PlanResult:
    rows: list[dict]
    source_errors: dict[str, str] = field(default_factory=dict)
    executed: int = 0
    skipped: int = 0


def _metrics_row(base: dict, variant: Variant, cfg: SimConfig, met: RunMetrics | None,
                 dist_from_exact: dict[int, int] | None, error: str = "") -> dict:
    row = dict(base, variant=variant.value, m=cfg.m, D=cfg.D, loss_p=_fmt(cfg.loss_p), seed=cfg.seed)
    if met is None:
        row.update({k: "" for k in ("avg_msgs", "max_msgs", "ticks", "wall_s", "mem_proxy", "loss_frac",
                                    "leader", "leader_dist_exact")})
    else:
        row.update(avg_msgs=_fmt(met.avg_msgs), max_msgs=met.max_msgs, ticks=met.ticks,
                   wall_s=f"{met.wall_seconds:.4f}", mem_proxy=met.mem_proxy,
                   loss_frac=_fmt(met.loss_fraction), leader=met.selected_leader,
                   leader_dist_exact=dist_from_exact[met.selected_leader] if dist_from_exact else "")
    row["errors"] = error
    return row


def _run_source(plan: ExperimentPlan, index: int, done: frozenset) -> tuple[list[dict], str | None]:
    src = plan.sources[index]
    pending = [c for c in plan.cells(index)
               if (src.graph_id, c[3].value, c[0], c[1], float(c[2]), c[4]) not in done]
    if not pending:
        return [], None
    try:
        g = src.load()
        dia, scores = distance_profile(g)
    except (OSError, GraphError, ValueError) as exc:
        return [], f"{type(exc).__name__}: {exc}"
    dist = bfs_distances(g, argmax_closeness(scores))
    base = dict(graph_id=src.graph_id, n=g.n, edges=g.edge_count, diameter=dia)
    rows = []
    for m, D, loss_p, v, seed in pending:
        cfg = plan.config(m, D, loss_p, v, seed)
        try:
            met = run_simulation(g, cfg)
            rows.append(_metrics_row(base, v, cfg, met, dist))
        except (SimulationFault, RuntimeError, ValueError) as exc:
            rows.append(_metrics_row(base, v, cfg, None, None, f"{type(exc).__name__}: {exc}"))
    return rows, None


def _source_task(args):
    return _run_source(*args)


def run_plan(plan: ExperimentPlan, output: str | os.PathLike | None = None, jobs: int = 1,
             progress=None) -> PlanResult:
    """Execute every pending cell; the output file is rewritten in canonical order.

    Rows already present in ``output`` without an error are kept and their
    cells skipped. Rows are appended as each graph finishes, so an
    interrupted run loses at most the graphs in flight.
    """
    output = output if output is not None else plan.output
    existing: list[dict] = []
    if output is not None and os.path.exists(output) and os.path.getsize(output) > 0:
        existing = [r for r in read_results(output) if not r["errors"]]
    done = frozenset(row_key(r) for r in existing)
    by_key = {row_key(r): r for r in existing}
    errors: dict[str, str] = {}
    executed = 0

    fh = None
    writer = None
    if output is not None:
        write_results(output, existing)
        fh = open(output, "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")

    def collect(index, result):
        nonlocal executed
        rows, err = result
        gid = plan.sources[index].graph_id
        if err is not None:
            errors[gid] = err
            log.warning("source %s skipped: %s", gid, err)
        for r in rows:
            by_key[row_key(r)] = r
            if writer is not None:
                writer.writerow({k: r.get(k, "") for k in CSV_HEADER})
        if fh is not None:
            fh.flush()
        executed += len(rows)
        if progress is not None:
            progress(gid, len(rows), err)

    try:
        tasks = [(plan, k, done) for k in range(len(plan.sources))]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for k, result in enumerate(pool.map(_source_task, tasks)):
                    collect(k, result)
        else:
            for k, t in enumerate(tasks):
                collect(k, _source_task(t))
    finally:
        if fh is not None:
            fh.close()

    ordered = []
    for k, src in enumerate(plan.sources):
        for m, D, loss_p, v, seed in plan.cells(k):
            r = by_key.get((src.graph_id, v.value, m, D, float(loss_p), seed))
            if r is not None:
                ordered.append(r)
    if output is not None:
        write_results(output, ordered)
    return PlanResult(ordered, errors, executed, len(done))


# ---------------------------------------------------------------------------
# paired analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairedSample:
    graph_id: str
    metric: str
    value_original: float
    value_enhanced: float

    @property
    def difference(self) -> float:
        return self.value_original - self.value_enhanced


def paired_samples(rows: Iterable[dict], metric: str = "avg_msgs", **where) -> list[PairedSample]:
    """Pair ORIGINAL and ENHANCED rows that share graph, m, D, loss and seed.

    ``where`` filters on row fields, e.g. ``m=1``. Rows with errors are ignored.
    """
    groups: dict[tuple, dict[str, float]] = {}
    for r in rows:
        if r.get("errors"):
            continue
        if any(_num(r[k]) != _num(v) for k, v in where.items()):
            continue
        key = (str(r["graph_id"]), int(r["m"]), int(r["D"]), float(r["loss_p"]), int(r["seed"]))
        groups.setdefault(key, {})[str(r["variant"])] = float(r[metric])
    out = []
    for key in sorted(groups):
        g = groups[key]
        if Variant.ORIGINAL.value in g and Variant.ENHANCED.value in g:
            out.append(PairedSample(key[0], metric, g["original"], g["enhanced"]))
    return out


def _num(x):
    try:
        return float(x)
    except (TypeError, ValueError):
        return x


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Per graph x m x D x loss: mean metrics per variant and percent reduction.

    Reduction is ``100 * (P - I) / P`` on average messages per node, where P
    is the original protocol and I the enhanced one; positive means the
    enhancement sends less.
    """
    if not rows:
        raise ValueError("nothing to summarize")
    groups: dict[tuple, dict[str, list[dict]]] = {}
    order: list[tuple] = []
    for r in rows:
        if r.get("errors"):
            continue
        key = (str(r["graph_id"]), int(r["m"]), int(r["D"]), float(r["loss_p"]))
        if key not in groups:
            groups[key] = {}
            order.append(key)
        groups[key].setdefault(str(r["variant"]), []).append(r)
    out = []
    for key in order:
        rec: dict = dict(graph_id=key[0], m=key[1], D=key[2], loss_p=key[3])
        for variant, rs in groups[key].items():
            tag = "P" if variant == "original" else "I"
            rec["n"] = int(rs[0]["n"])
            for metric in METRICS:
                vals = [float(r[metric]) for r in rs]
                rec[f"{metric}_{tag}"] = sum(vals) / len(vals) if metric != "max_msgs" else max(vals)
        if "avg_msgs_P" in rec and "avg_msgs_I" in rec and rec["avg_msgs_P"] > 0:
            rec["reduction_pct"] = 100.0 * (rec["avg_msgs_P"] - rec["avg_msgs_I"]) / rec["avg_msgs_P"]
        else:
            rec["reduction_pct"] = None
        out.append(rec)
    return out


def mean_reduction(summary: Iterable[dict]) -> float:
    vals = [s["reduction_pct"] for s in summary if s.get("reduction_pct") is not None]
    if not vals:
        raise ValueError("no paired cells to compare")
    return sum(vals) / len(vals)


# ---------------------------------------------------------------------------
# leader quality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QualityRecord:
    graph_id: str
    D: int
    exact_leader: int
    approx_leader: dict[str, int]
    distance: dict[str, int]

    def __post_init__(self):
        if any(d < 0 for d in self.distance.values()):
            raise ValueError("hop distance must be non-negative")


def quality_sweep(g: Graph, D_values: Iterable[int], cfg: SimConfig | None = None,
                  graph_id: str = "g", variants: Sequence[Variant | str] = (Variant.ORIGINAL, Variant.ENHANCED),
                  ) -> list[QualityRecord]:
    """Hop distance between the exact and the selected leader for every D, loss-free."""
    cfg = replace(cfg or SimConfig(), loss_p=0.0)
    _, scores = distance_profile(g)
    exact = argmax_closeness(scores)
    dist = bfs_distances(g, exact)
    out = []
    for D in D_values:
        leaders, dists = {}, {}
        for v in variants:
            met = run_simulation(g, replace(cfg, D=D, variant=Variant.parse(v)))
            name = Variant.parse(v).value
            leaders[name] = met.selected_leader
            dists[name] = dist[met.selected_leader]
        out.append(QualityRecord(graph_id, D, exact, leaders, dists))
    return out


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

def difference_histogram(pairs: Sequence[PairedSample], bins: int = 20) -> list[dict]:
    """Bins of paired differences (original minus enhanced)."""
    d = np.array([p.difference for p in pairs], dtype=float)
    if d.size == 0:
        return []
    counts, edges = np.histogram(d, bins=bins)
    return [dict(lo=_fmt(edges[k]), hi=_fmt(edges[k + 1]), count=int(c)) for k, c in enumerate(counts)]


def boxplot_columns(g: Graph, cfg: SimConfig) -> list[dict]:
    """Per-node packets received under both variants; columns ``P`` and ``I``."""
    p = run_simulation(g, replace(cfg, variant=Variant.ORIGINAL))
    i = run_simulation(g, replace(cfg, variant=Variant.ENHANCED))
    return [dict(node=k, P=p.packets_received[k], I=i.packets_received[k]) for k in range(g.n)]


def curve_rows(rows: Iterable[dict]) -> list[dict]:
    """Median ticks, loss fraction and memory proxy per variant, m and loss."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("errors"):
            continue
        groups.setdefault((str(r["variant"]), int(r["m"]), float(r["loss_p"])), []).append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        out.append(dict(variant=key[0], m=key[1], loss_p=key[2], graphs=len(rs),
                        ticks=statistics.median(float(r["ticks"]) for r in rs),
                        loss_frac=statistics.median(float(r["loss_frac"]) for r in rs),
                        mem_proxy=statistics.median(float(r["mem_proxy"]) for r in rs)))
    return out
