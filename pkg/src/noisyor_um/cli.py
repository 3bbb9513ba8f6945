"""``noisyor-um`` command line.

Exit status: 0 on success, 2 for usage errors, 1 for runtime failures.
Seeds default to ``$NOISYOR_UM_SEED`` when the flag is omitted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    OBSERVATION_MODELS,
    EvaluationError,
    EvaluationReport,
    build_test_set,
    evaluate,
    export_report,
    oracle_probabilities,
    parse_sizes,
)
from .experiment import query_rng, report_stem, run_reproduce
from .inference import EvidenceError, evidence_log_probability, exact_conditional_marginals, parse_evidence
from .masking import SCHEME_NAMES, MaskingError, make_scheme, mask_size_histogram, write_histogram
from .model import ModelError, load_model
from .network import NetworkError, NoisyOrNetwork, canonical_network_path, generate_random_network
from .trainer import TrainingConfig, TrainingError, train

EXIT_RUNTIME = 1
EXIT_USAGE = 2
SEED_ENV = "NOISYOR_UM_SEED"

log = logging.getLogger("noisyor_um")

RUNTIME_ERRORS = (NetworkError, EvidenceError, MaskingError, ModelError, TrainingError, EvaluationError, OSError)


def _default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else 0


def _layers(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"layers must look like 8,8,8, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError("layers needs three positive counts")
    return parts


def _count(text: str) -> int:
    value = float(text)
    if value != int(value) or value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return int(value)


def write_manifest(path, args: argparse.Namespace, argv: list[str], outputs: dict) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "noisyor_um",
        "version": __version__,
        "subcommand": args.command,
        "argv": argv,
        "config": resolved,
        "outputs": outputs,
    }
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _load_net(path) -> NoisyOrNetwork:
    return NoisyOrNetwork.load(path if path else canonical_network_path())


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args, argv):
    net = generate_random_network(args.seed, args.layers, args.edge_prob)
    net.save(args.out)
    d_edges, s_edges = net.edge_counts
    print(f"n={net.n} layers={','.join(map(str, net.layer_sizes))} "
          f"rf_to_disease_edges={d_edges} disease_to_symptom_edges={s_edges} id={net.network_id}")
    write_manifest(f"{args.out}.manifest.json", args, argv, {"network": str(args.out)})


def cmd_query(args, argv):
    net = _load_net(args.net)
    evidence = parse_evidence(args.evidence, net.n)
    marginals = exact_conditional_marginals(net, evidence)
    if args.format == "json":
        print(json.dumps({
            "evidence": {str(k): v for k, v in sorted(evidence.items())},
            "log_evidence": evidence_log_probability(net, evidence),
            "marginals": marginals.tolist(),
        }))
    else:
        for i, p in enumerate(marginals):
            flag = " (observed)" if i in evidence else ""
            print(f"{i:3d} {net.node_name(i):>4s} {p!r}{flag}")


def _config_from_args(args, scheme: str) -> TrainingConfig:
    return TrainingConfig(
        scheme=scheme,
        samples_per_epoch=args.samples,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        data_seed=args.seed,
        init_seed=args.seed + 1,
        checkpoint_every=getattr(args, "checkpoint_every", 0),
    )


def cmd_train(args, argv):
    net = _load_net(args.net)
    config = _config_from_args(args, args.scheme)
    out = Path(args.out)
    metrics_path = out.with_name(out.name + ".metrics.jsonl")
    model, metrics, _ = train(
        net, config,
        checkpoint_dir=out.with_name(out.name + ".ckpt") if config.checkpoint_every else None,
        metrics_path=metrics_path,
        resume_from=args.resume,
        final_checkpoint=out,
    )
    last = metrics.epochs[-1].mean_loss if metrics.epochs else float("nan")
    print(f"scheme={config.scheme} samples={metrics.samples_consumed} final_mean_loss={last:.6f} "
          f"checkpoint={model.checkpoint_id()}")
    write_manifest(f"{out}.manifest.json", args, argv, {"checkpoint": str(out), "metrics": str(metrics_path)})


def cmd_evaluate(args, argv):
    net = _load_net(args.net)
    sizes = parse_sizes(args.sizes)
    models = {}
    for entry in args.checkpoint:
        label, _, path = entry.rpartition("=")
        model, _, meta = load_model(path)
        if list(model.layer_sizes) != list(net.layer_sizes):
            raise ModelError(f"checkpoint {path} has layers {model.layer_sizes}, network has {net.layer_sizes}")
        label = label or meta.get("config", {}).get("scheme") or Path(path).stem
        models[label] = model
    nodes = [args.query_node] if args.query_node is not None else net.disease_nodes
    obs_models = OBSERVATION_MODELS if args.obs_model == "both" else (args.obs_model,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = ";".join(f"{k}:{m.checkpoint_id()}" for k, m in models.items())
    written = []
    for node in nodes:
        parts = []
        for obs in obs_models:
            queries = build_test_set(net, obs, sizes, args.per_size, node, query_rng(args.seed, node, obs))
            truth = oracle_probabilities(net, queries)
            parts += [evaluate(m, net, queries, scheme=k, truth=truth) for k, m in models.items()]
        report = EvaluationReport.merge(
            parts, {"network": net.network_id, "checkpoint": checkpoint, "seed": args.seed, "query_node": node}
        )
        stem = out / report_stem(net, node)
        export_report(report, stem.with_suffix(".csv"), "plot-data")
        export_report(report, stem.with_suffix(".txt"), "table-text")
        written += [str(stem.with_suffix(".csv")), str(stem.with_suffix(".txt"))]
        for (scheme, obs), fit in report.fits().items():
            print(f"{net.node_name(node)} {scheme} {obs} slope={fit.slope:.6f} intercept={fit.intercept:.6f}")
    write_manifest(out / "manifest.json", args, argv, {"reports": written})


def cmd_histogram(args, argv):
    net = _load_net(args.net) if args.net or args.scheme == "markov" else None
    n = net.n if net is not None else args.n
    scheme = make_scheme(args.scheme, net)
    counts = mask_size_histogram(scheme, n, args.samples, np.random.default_rng(args.seed))
    write_histogram(args.out, counts, args.scheme, n, args.samples, args.seed)
    print(" ".join(str(int(c)) for c in counts))
    write_manifest(f"{args.out}.manifest.json", args, argv, {"histogram": str(args.out)})


def cmd_reproduce(args, argv):
    net = _load_net(args.net)
    base = _config_from_args(args, "uniform")
    schemes = args.schemes.split(",") if args.schemes else list(SCHEME_NAMES)
    for s in schemes:
        if s not in SCHEME_NAMES:
            raise MaskingError(f"unknown masking scheme {s!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_reproduce(net, out, base, schemes, parse_sizes(args.sizes), args.per_size, args.seed)
    print(json.dumps({"network": summary["network"], "scheme_spread_k<=8": summary["scheme_spread_k<=8"]}))
    write_manifest(out / "manifest.json", args, argv, {"dir": str(out), "training": asdict(base)})


def cmd_rerun(args, argv):
    manifest = json.loads(Path(args.manifest).read_text())
    old = list(manifest["argv"])
    if args.out is not None:
        idx = old.index("--out")
        old[idx + 1] = str(args.out)
    return main(old)


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisyor-um", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def seed_arg(p):
        p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")

    p = sub.add_parser("generate", help="write a random Noisy-OR network file")
    seed_arg(p)
    p.add_argument("--layers", type=_layers, default=(8, 8, 8))
    p.add_argument("--edge-prob", type=float, default=0.4)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("query", help="exact conditional marginals")
    p.add_argument("--net", type=Path, help="network file (default: canonical network)")
    p.add_argument("--evidence", default="", help="comma-separated index=value pairs")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_query)

    def training_args(p, samples_default):
        p.add_argument("--net", type=Path, help="network file (default: canonical network)")
        p.add_argument("--samples", type=_count, default=samples_default, help="samples per epoch")
        p.add_argument("--epochs", type=_count, default=1)
        p.add_argument("--batch", type=int, default=2048)
        p.add_argument("--lr", type=float, default=1e-4)
        seed_arg(p)

    p = sub.add_parser("train", help="train one marginaliser")
    training_args(p, 2_000_000)
    p.add_argument("--scheme", choices=SCHEME_NAMES, required=True)
    p.add_argument("--checkpoint-every", type=int, default=0, help="epochs between resumable checkpoints")
    p.add_argument("--resume", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints against exact inference")
    p.add_argument("--net", type=Path)
    p.add_argument("--checkpoint", action="append", required=True, help="[label=]path, repeatable")
    p.add_argument("--obs-model", choices=OBSERVATION_MODELS + ("both",), default="both")
    p.add_argument("--sizes", default="0..12")
    p.add_argument("--per-size", type=int, default=200)
    p.add_argument("--query-node", type=int, help="global node index of a disease (default: all diseases)")
    seed_arg(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("histogram", help="mask-size histogram of a masking scheme")
    p.add_argument("--scheme", choices=SCHEME_NAMES, required=True)
    p.add_argument("--n", type=int, default=24)
    p.add_argument("--net", type=Path)
    p.add_argument("--samples", type=_count, default=100_000)
    seed_arg(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("reproduce", help="train all schemes and evaluate under both observation models")
    training_args(p, 2_000_000)
    p.add_argument("--schemes", default="", help="comma-separated subset (default: all five)")
    p.add_argument("--sizes", default="0..12")
    p.add_argument("--per-size", type=int, default=200)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="redirect the output location")
    p.set_defaults(func=cmd_rerun)
    return parser


PATH_FLAGS = ("--net", "--out", "--resume", "--checkpoint")


def _absolute_paths(argv: list[str]) -> list[str]:
    out = list(argv)
    for i, token in enumerate(out[:-1]):
        if token in PATH_FLAGS:
            label, sep, path = out[i + 1].rpartition("=") if token == "--checkpoint" else ("", "", out[i + 1])
            out[i + 1] = label + sep + str(Path(path).resolve())
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "seed", 0) is None:
        args.seed = _default_seed()
    if args.command != "rerun":
        # record the resolved seed so a rerun does not depend on the environment
        if "--seed" not in argv and hasattr(args, "seed"):
            argv = argv + ["--seed", str(args.seed)]
        argv = _absolute_paths(argv)
    try:
        result = args.func(args, argv)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return result or 0


if __name__ == "__main__":
    sys.exit(main())
