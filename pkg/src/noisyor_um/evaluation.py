"""Scoring a marginaliser against exact inference, per evidence-set size.

A test set is built for one fixed disease query node under an observation
model (``uniform``: any size-k subset of the other nodes; ``markov``: a
size-k subset of a random disease's Markov blanket). The error of a query is
``|Q(X=0 | x_b) - P(X=0 | x_b)|`` for the query node.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .inference import exact_conditional_marginals
from .masking import apply_mask
from .network import DISEASE, NoisyOrNetwork

OBSERVATION_MODELS = ("uniform", "markov")
PLOT_FIELDS = ("scheme", "obs_model", "k", "mean_abs_err", "sd", "count")

# listed at the foot of every table-text report
ASSUMPTIONS = (
    "evidence values are an ancestral sample restricted to the evidence nodes",
    "the query node is never part of the evidence",
    "markov evidence: a size-k subset of one disease's blanket, disease uniform among blankets with >= k other nodes",
    "markov training masks: blanket bits observed with p ~ U[0, 1] per batch, the chosen disease stays masked",
    "weights ~ N(0, 1/fan_in); batch norm uses running averages (momentum 0.99, eps 1e-5) at prediction time",
)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationQuery:
    evidence: tuple[tuple[int, int], ...]
    query_node: int
    obs_model: str = "uniform"

    @property
    def k(self) -> int:
        return len(self.evidence)

    def evidence_dict(self) -> dict[int, int]:
        return dict(self.evidence)


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class ReportRow:
    scheme: str
    obs_model: str
    k: int
    mean: float
    sd: float
    count: int


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    residual: float


@dataclass
class EvaluationReport:
    """Error statistics per (scheme, observation model, k).

    Means and standard deviations are held at 6 significant digits, the
    precision of the plot-data file, so exported reports reload exactly.
    """

    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def merge(cls, reports, metadata: dict | None = None) -> "EvaluationReport":
        rows = [row for r in reports for row in r.rows]
        if metadata is None:
            metadata = dict(reports[0].metadata) if reports else {}
        return cls(sorted(rows, key=lambda r: (r.obs_model, r.scheme, r.k)), metadata)

    @property
    def schemes(self) -> list[str]:
        return list(dict.fromkeys(r.scheme for r in self.rows))

    @property
    def obs_models(self) -> list[str]:
        return list(dict.fromkeys(r.obs_model for r in self.rows))

    def select(self, scheme: str | None = None, obs_model: str | None = None) -> list[ReportRow]:
        return [
            r for r in self.rows
            if (scheme is None or r.scheme == scheme) and (obs_model is None or r.obs_model == obs_model)
        ]

    def mean_error(self, scheme: str, obs_model: str, k_min: int = 0, k_max: int | None = None) -> float:
        """Query-weighted mean error over the rows with ``k_min <= k <= k_max``."""
        rows = [
            r for r in self.select(scheme, obs_model)
            if r.k >= k_min and (k_max is None or r.k <= k_max)
        ]
        if not rows:
            raise EvaluationError(f"no rows for {scheme}/{obs_model} in k range")
        counts = np.array([r.count for r in rows], dtype=np.float64)
        return float(np.dot([r.mean for r in rows], counts) / counts.sum())

    def fits(self) -> dict[tuple[str, str], LinearFit]:
        out = {}
        for obs in self.obs_models:
            for scheme in self.schemes:
                rows = self.select(scheme, obs)
                if len({r.k for r in rows}) >= 2:
                    out[(scheme, obs)] = linear_fit([(r.k, r.mean) for r in rows])
        return out


# -- test sets -------------------------------------------------------------------


def parse_sizes(text: str) -> list[int]:
    """``"0..12"`` (inclusive) or ``"0,2,4"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(v) for v in text.split("..", 1))
        if hi < lo:
            raise EvaluationError(f"empty size range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise EvaluationError(f"malformed size list {text!r}") from None


def build_test_set(
    net: NoisyOrNetwork,
    observation_model: str,
    sizes,
    per_size: int,
    query_node: int,
    rng: np.random.Generator,
    max_resample: int = 100,
) -> list[EvaluationQuery]:
    """``per_size`` queries for every size in ``sizes``.

    Evidence values come from a fresh ancestral sample restricted to the
    evidence nodes. A repeated (nodes, values) pair is redrawn up to
    ``max_resample`` times; small k have fewer distinct queries than
    ``per_size`` (k = 0 has exactly one), and those keep their repeats.
    """
    if net.layer_of(query_node) != DISEASE:
        raise EvaluationError(f"query node {query_node} ({net.node_name(query_node)}) is not a disease")
    if observation_model not in OBSERVATION_MODELS:
        raise EvaluationError(f"unknown observation model {observation_model!r}")
    if per_size < 1:
        raise EvaluationError("per_size must be >= 1")

    if observation_model == "uniform":
        pool = np.array([i for i in range(net.n) if i != query_node])
        pools = [pool]
    else:
        pools = [np.array(sorted(net.markov_blanket(d) - {query_node})) for d in net.disease_nodes]

    queries: list[EvaluationQuery] = []
    for k in sizes:
        feasible = [p for p in pools if len(p) >= k]
        if k < 0 or not feasible:
            largest = max(len(p) for p in pools)
            raise EvaluationError(
                f"evidence size {k} infeasible under {observation_model} model (largest pool {largest})"
            )
        seen: set = set()
        for _ in range(per_size):
            for attempt in range(max_resample + 1):
                pool = feasible[rng.integers(len(feasible))] if len(feasible) > 1 else feasible[0]
                nodes = np.sort(rng.choice(pool, size=k, replace=False))
                x = net.sample(1, rng)[0]
                evidence = tuple((int(i), int(x[i])) for i in nodes)
                if evidence not in seen:
                    break
            seen.add(evidence)
            queries.append(EvaluationQuery(evidence, query_node, observation_model))
    return queries


def oracle_probabilities(net: NoisyOrNetwork, queries) -> np.ndarray:
    """Exact ``P(X_q = 0 | evidence)`` per query."""
    return np.array([
        1.0 - exact_conditional_marginals(net, q.evidence_dict())[q.query_node] for q in queries
    ])


def encode_queries(net: NoisyOrNetwork, queries) -> np.ndarray:
    x = np.zeros((len(queries), net.n), dtype=np.int8)
    b = np.zeros_like(x)
    for row, q in enumerate(queries):
        for node, value in q.evidence:
            x[row, node] = value
            b[row, node] = 1
    return apply_mask(x, b)


def _predict(predictor, encoded: np.ndarray, chunk: int = 4096) -> np.ndarray:
    fn = predictor.predict if hasattr(predictor, "predict") else predictor
    return np.concatenate([fn(encoded[i : i + chunk]) for i in range(0, len(encoded), chunk)])


def evaluate(
    predictor,
    net: NoisyOrNetwork,
    queries,
    scheme: str = "model",
    truth: np.ndarray | None = None,
    metadata: dict | None = None,
) -> EvaluationReport:
    """Aggregate per-k absolute errors of ``predictor`` on ``queries``.

    ``predictor`` is a :class:`~noisyor_um.model.UmModel` (scored in Eval
    mode) or any callable mapping encoded inputs ``(B, 2n)`` to
    ``Q(X_i = 1)`` of shape ``(B, n)``. ``truth`` may carry precomputed
    oracle values to share across several predictors.
    """
    queries = list(queries)
    if not queries:
        raise EvaluationError("no queries to evaluate")
    width = getattr(predictor, "input_width", 2 * net.n)
    if width != 2 * net.n:
        raise EvaluationError(f"model input width {width} does not match network (2n = {2 * net.n})")
    if truth is None:
        truth = oracle_probabilities(net, queries)
    q1 = _predict(predictor, encode_queries(net, queries))
    nodes = np.array([q.query_node for q in queries])
    errors = np.abs((1.0 - q1[np.arange(len(queries)), nodes]) - truth)

    groups: dict[tuple[str, int], list[float]] = defaultdict(list)
    for q, e in zip(queries, errors):
        groups[(q.obs_model, q.k)].append(float(e))
    rows = [
        ReportRow(scheme, obs, k, _sig6(np.mean(v)), _sig6(np.std(v)), len(v))
        for (obs, k), v in sorted(groups.items())
    ]
    return EvaluationReport(rows, dict(metadata or {}))


def linear_fit(points) -> LinearFit:
    """Ordinary least squares of error on k; ``residual`` is the residual sum of squares."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(np.unique(pts[:, 0])) < 2:
        raise EvaluationError("linear fit needs at least two distinct k values")
    k, y = pts[:, 0], pts[:, 1]
    k_bar, y_bar = k.mean(), y.mean()
    slope = float(np.sum((k - k_bar) * (y - y_bar)) / np.sum((k - k_bar) ** 2))
    intercept = float(y_bar - slope * k_bar)
    residual = float(np.sum((y - intercept - slope * k) ** 2))
    return LinearFit(slope, intercept, residual)


def scheme_spread(reports, obs_model: str | None = None, k_max: int = 8) -> float:
    """Mean over (report, obs model, k <= k_max) of the max-min range of scheme errors."""
    spreads = []
    for report in reports:
        for obs in report.obs_models if obs_model is None else [obs_model]:
            by_k = defaultdict(list)
            for r in report.select(obs_model=obs):
                if r.k <= k_max:
                    by_k[r.k].append(r.mean)
            spreads += [max(v) - min(v) for v in by_k.values() if len(v) > 1]
    if not spreads:
        raise EvaluationError("no k with more than one scheme")
    return float(np.mean(spreads))


# -- export ------------------------------------------------------------------------


def _header(report: EvaluationReport) -> str:
    m = report.metadata
    return (
        f"# network={m.get('network', '-')} checkpoint={m.get('checkpoint', '-')} "
        f"seed={m.get('seed', '-')} query_node={m.get('query_node', '-')}"
    )


def format_plot_data(report: EvaluationReport) -> str:
    buf = io.StringIO()
    buf.write(_header(report) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_FIELDS)
    for r in report.rows:
        writer.writerow([r.scheme, r.obs_model, r.k, f"{r.mean:.6g}", f"{r.sd:.6g}", r.count])
    return buf.getvalue()


def format_table(report: EvaluationReport) -> str:
    lines = [_header(report)]
    schemes = report.schemes
    for obs in report.obs_models:
        lines += ["", f"observation model: {obs}  (mean |Q - P| +/- sd, queries per k in brackets)"]
        cells = {(r.scheme, r.k): r for r in report.select(obs_model=obs)}
        ks = sorted({r.k for r in report.select(obs_model=obs)})
        lines.append("k".rjust(3) + "".join(s.rjust(26) for s in schemes))
        for k in ks:
            row = str(k).rjust(3)
            for s in schemes:
                r = cells.get((s, k))
                row += (f"{r.mean:.4f} +/- {r.sd:.4f} [{r.count}]" if r else "-").rjust(26)
            lines.append(row)
    fits = report.fits()
    if fits:
        lines += ["", "linear fit of mean error on k", "scheme".ljust(10) + "obs_model".ljust(10)
                  + "slope".rjust(12) + "intercept".rjust(12) + "rss".rjust(12)]
        for (scheme, obs), f in fits.items():
            lines.append(scheme.ljust(10) + obs.ljust(10) + f"{f.slope:12.6f}{f.intercept:12.6f}{f.residual:12.3e}")
    lines += ["", "assumed, not given by the method description:"] + [f"  - {c}" for c in ASSUMPTIONS]
    return "\n".join(lines) + "\n"


def export_report(report: EvaluationReport, path, format: str = "plot-data") -> None:
    if not report.rows:
        raise EvaluationError("refusing to export an empty report")
    if format == "plot-data":
        text = format_plot_data(report)
    elif format == "table-text":
        text = format_table(report)
    else:
        raise EvaluationError(f"unknown report format {format!r}")
    Path(path).write_text(text)


def read_plot_data(path) -> EvaluationReport:
    header, *body = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in header.lstrip("# ").split())
    for key in ("seed", "query_node"):
        if meta.get(key, "-").lstrip("-").isdigit():
            meta[key] = int(meta[key])
    reader = csv.DictReader(body)
    rows = [
        ReportRow(d["scheme"], d["obs_model"], int(d["k"]), float(d["mean_abs_err"]), float(d["sd"]), int(d["count"]))
        for d in reader
    ]
    return EvaluationReport(rows, meta)
