"""The full masking-scheme comparison: train every scheme, score all disease queries."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .evaluation import (
    OBSERVATION_MODELS,
    EvaluationReport,
    build_test_set,
    evaluate,
    export_report,
    oracle_probabilities,
    scheme_spread,
)
from .masking import SCHEME_NAMES
from .model import load_model
from .network import NoisyOrNetwork
from .trainer import TrainingConfig, train

log = logging.getLogger(__name__)


def query_rng(seed: int, query_node: int, obs_model: str) -> np.random.Generator:
    """Independent stream per (seed, query node, observation model)."""
    return np.random.default_rng([seed, query_node, OBSERVATION_MODELS.index(obs_model)])


def build_all_test_sets(net: NoisyOrNetwork, sizes, per_size: int, seed: int, obs_models=OBSERVATION_MODELS):
    """``{(query_node, obs_model): (queries, oracle P(X=0))}`` for every disease."""
    out = {}
    for node in net.disease_nodes:
        for obs in obs_models:
            queries = build_test_set(net, obs, sizes, per_size, node, query_rng(seed, node, obs))
            out[(node, obs)] = (queries, oracle_probabilities(net, queries))
    return out


def report_stem(net: NoisyOrNetwork, node: int) -> str:
    return f"query_{net.node_name(node)}"


def score_models(net: NoisyOrNetwork, models: dict, test_sets: dict, seed: int) -> dict[int, EvaluationReport]:
    """One merged report per query node over all (scheme, observation model) pairs."""
    checkpoint = ";".join(f"{name}:{m.checkpoint_id()}" for name, m in models.items())
    reports = {}
    for node in net.disease_nodes:
        parts = []
        for (q_node, obs), (queries, truth) in test_sets.items():
            if q_node != node:
                continue
            for name, model in models.items():
                parts.append(evaluate(model, net, queries, scheme=name, truth=truth))
        meta = {"network": net.network_id, "checkpoint": checkpoint, "seed": seed, "query_node": node}
        reports[node] = EvaluationReport.merge(parts, meta)
    return reports


def run_reproduce(
    net: NoisyOrNetwork,
    out_dir,
    base_config: TrainingConfig,
    schemes=SCHEME_NAMES,
    sizes=range(13),
    per_size: int = 200,
    seed: int = 0,
) -> dict:
    """Train each scheme at the same budget and seeds, then evaluate under both
    observation models for every disease.

    Writes ``network.json``, ``checkpoints/<scheme>.npz``,
    ``metrics/<scheme>.jsonl``, ``reports/query_D<i>.{txt,csv}`` and
    ``summary.json`` under ``out_dir``; returns the summary.
    """
    out = Path(out_dir)
    for sub in ("checkpoints", "metrics", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    net.save(out / "network.json")

    models = {}
    for name in schemes:
        config = replace(base_config, scheme=name)
        path = out / "checkpoints" / f"{name}.npz"
        log.info("training %s on %d x %d samples", name, config.epochs, config.samples_per_epoch)
        train(net, config, metrics_path=out / "metrics" / f"{name}.jsonl", final_checkpoint=path)
        models[name] = load_model(path)[0]

    test_sets = build_all_test_sets(net, list(sizes), per_size, seed)
    reports = score_models(net, models, test_sets, seed)
    for node, report in reports.items():
        stem = out / "reports" / report_stem(net, node)
        export_report(report, stem.with_suffix(".csv"), "plot-data")
        export_report(report, stem.with_suffix(".txt"), "table-text")

    summary = summarise(net, reports, schemes)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def summarise(net: NoisyOrNetwork, reports: dict, schemes) -> dict:
    per_node = {}
    for node, report in reports.items():
        entry = {}
        for obs in report.obs_models:
            for s in schemes:
                entry[f"{s}/{obs}/k<=8"] = report.mean_error(s, obs, 0, 8)
                entry[f"{s}/{obs}/k>=8"] = report.mean_error(s, obs, 8)
                fit = report.fits().get((s, obs))
                if fit:
                    entry[f"{s}/{obs}/slope"] = fit.slope
        per_node[net.node_name(node)] = entry
    return {
        "network": net.network_id,
        "per_query_node": per_node,
        "scheme_spread_k<=8": scheme_spread(reports.values(), k_max=8),
    }
