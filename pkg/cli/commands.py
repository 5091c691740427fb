"""
Command-line subcommands.

Exit codes: 0 success, 1 usage or configuration error, 2 data error (or any
other pipeline failure).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from cli.experiment import (
    class_set_for,
    encoder_config,
    fit_confidence_model,
    gmm_evaluator,
    parse_grid,
    softmax_evaluator,
    train_config,
)
from cli.runner import check_run, dump_json, render_report, run_pipeline
from confidence.decisions import classify_gmm_batch, model_inputs
from confidence.gmm import (
    COSINE,
    EMBEDDING,
    RIDGE_MODES,
    RIDGE_PRIOR,
    EmConfig,
    calibrate_threshold,
    threshold_at_percentile,
)
from confidence.persistence import load_gmm, read_decisions, save_gmm, write_decisions
from encoder.embeddings import EMBEDDING_DIM, embed_dataset, export_embeddings, import_embeddings
from encoder.model import HEAD_EMBEDDING, HEAD_SOFTMAX, build_encoder
from encoder.persistence import load_encoder, save_encoder
from encoder.trainer import LOSS_ALIASES, predict_proba, train
from features.augmentation import DEFAULT_MAX_SHIFT
from features.balancing import STRATEGIES, balance
from features.extraction import featurize
from features.feature_set import SIZESEQ, TIMESERIES, read_features, write_features
from ingest.dns import associate_dns
from ingest.flow_assembler import CaptureMode, assemble_flows
from ingest.flow_io import read_flows, write_flows
from ingest.labeling import apply_labels, load_label_rules
from ingest.pcap_reader import merge_captures, parse_captures
from ingest.records import ABSTAIN, BACKGROUND, DEFAULT_CLASSES
from ingest.sessions import TEST, TRAIN, load_assignment, save_assignment, split_sessions
from metrics.scoring import ABSTAIN_POLICIES, EXCLUDE, confusion, summarize
from metrics.sweep import percentile_grid, softmax_grid, sweep, write_sweep
from synth.embeddings import generate_embeddings, orthogonal_means
from synth.flows import generate_flows
from synth.profiles import load_profiles
from utils.config import EncoderSection, LABEL_SCHEMES, load_config
from utils.errors import ConfigurationError, PipelineError, StageError
from utils.logging_setup import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

PROG = "traffic-conf"


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# =============================================================================
# HELPERS
# =============================================================================

def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if args.config:
        return load_config(Path(args.config)).run.seed
    return 0


def _output(args, path: str) -> Path:
    """Resolve an output path against --out-dir and create its directory."""
    target = Path(path)
    if args.out_dir and not target.is_absolute():
        target = Path(args.out_dir) / target
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


def _background(value: str) -> Optional[str]:
    return None if value.lower() == "none" else value


# =============================================================================
# INGEST AND FEATURES
# =============================================================================

def cmd_ingest(args) -> int:
    captures = parse_captures([Path(p) for p in args.pcap], n_jobs=args.jobs)
    packets, responses = merge_captures(captures)
    flows = assemble_flows(
        packets,
        CaptureMode(args.mode),
        responses,
        session_id=args.session_id,
        session_type=args.session_type,
    )
    flows = associate_dns(flows, responses)
    rules = load_label_rules(Path(args.rules) if args.rules else None)
    flows = apply_labels(flows, rules, args.scheme)
    count = write_flows(_output(args, args.out), flows)
    logger.info("Wrote %d flows from %d packets", count, len(packets))
    return EXIT_OK


def cmd_featurize(args) -> int:
    flows = read_flows(Path(args.flows))
    if args.split:
        if not args.assignment:
            raise ConfigurationError("--split needs --assignment")
        train_flows, test_flows = split_sessions(flows, load_assignment(Path(args.assignment)))
        flows = train_flows if args.split == TRAIN else test_flows
    write_features(_output(args, args.out), featurize(flows, args.kind))
    return EXIT_OK


def cmd_balance(args) -> int:
    dataset = read_features(Path(args.input))
    flows = {f.flow_id: f for f in read_flows(Path(args.flows))} if args.flows else None
    balanced = balance(
        dataset,
        args.strategy,
        target_count=args.target,
        rng_seed=_seed(args),
        flows=flows,
        max_shift=args.max_shift,
    )
    write_features(_output(args, args.out), balanced)
    logger.info("Balanced %d samples to %d", len(dataset), len(balanced))
    return EXIT_OK


# =============================================================================
# ENCODER
# =============================================================================

def cmd_train_encoder(args) -> int:
    features = read_features(Path(args.features))
    class_set = class_set_for(features.labels)
    section = EncoderSection(
        lstm1_units=args.lstm1_units,
        lstm2_units=args.lstm2_units,
        dense_units=args.dense_units,
        dropout=args.dropout,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        temperature=args.temperature,
        threads=args.threads,
    )
    loss = LOSS_ALIASES[args.loss]
    head = args.head or (HEAD_SOFTMAX if args.loss == "ce" else HEAD_EMBEDDING)
    seed = _seed(args)
    cfg = train_config(section, loss, seed)
    model = build_encoder(encoder_config(section, head, len(class_set)), seed=seed)
    result = train(model, features, cfg, class_set=class_set)
    save_encoder(_output(args, args.out), result.model, class_set.names, cfg, result.loss_curve, seed)
    return EXIT_OK


def cmd_embed(args) -> int:
    loaded = load_encoder(Path(args.model))
    embeddings = embed_dataset(loaded.model, read_features(Path(args.features)))
    export_embeddings(_output(args, args.out), embeddings)
    return EXIT_OK


# =============================================================================
# CONFIDENCE
# =============================================================================

def cmd_fit_gmm(args) -> int:
    embeddings = import_embeddings(Path(args.embeddings), dim=args.dim)
    class_set = class_set_for(embeddings.labels)
    cfg = EmConfig(
        max_iters=args.max_iters, tol=args.tol, cov_regularization=args.eps, seed=_seed(args),
        ridge_mode=args.ridge_mode,
    )
    model = fit_confidence_model(embeddings, class_set.names, args.k, args.feature_space, cfg)
    save_gmm(_output(args, args.out), model)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    model = load_gmm(Path(args.model))
    x = None
    if args.embeddings:
        x = model_inputs(model, import_embeddings(Path(args.embeddings), dim=args.dim).vectors)
    model = calibrate_threshold(model, x, args.percentile)
    save_gmm(_output(args, args.out) if args.out else Path(args.model), model)
    print(f"threshold {model.threshold:.12g} at percentile {args.percentile:g}")
    return EXIT_OK


def cmd_classify(args) -> int:
    if args.pipeline == "gmm":
        if not args.embeddings:
            raise ConfigurationError("classify --pipeline gmm needs --embeddings")
        model = load_gmm(Path(args.model))
        embeddings = import_embeddings(Path(args.embeddings), dim=args.dim)
        threshold = args.threshold
        if args.percentile is not None:
            threshold = threshold_at_percentile(model.train_logliks, args.percentile)
        decisions = classify_gmm_batch(model, model_inputs(model, embeddings.vectors), threshold)
        labels = embeddings.labels
        sample_ids = None
    else:
        if not args.features:
            raise ConfigurationError("classify --pipeline softmax needs --features")
        loaded = load_encoder(Path(args.model))
        features = read_features(Path(args.features))
        threshold = args.threshold if args.threshold is not None else 0.0
        decisions = softmax_evaluator(predict_proba(loaded.model, features), loaded.class_names)(threshold)
        labels, sample_ids = features.labels, features.flow_ids
    write_decisions(_output(args, args.out), labels, decisions, sample_ids)
    logger.info("Classified %d samples, %d abstained", len(decisions), sum(d.abstained for d in decisions))
    return EXIT_OK


# =============================================================================
# METRICS
# =============================================================================

def cmd_evaluate(args) -> int:
    labels, decisions = read_decisions(Path(args.decisions))
    predicted = [d.predicted for d in decisions if d.predicted != ABSTAIN]
    background = _background(args.background)
    names = args.classes.split(",") if args.classes else class_set_for(list(labels) + predicted, background).names
    report = summarize(labels, decisions, names, background)
    out = _output(args, args.out)
    dump_json(out, report)

    m = confusion(labels, decisions, names)
    frame = pd.DataFrame(m.matrix, index=list(names), columns=list(names))
    frame["abstain"] = m.abstain_counts
    frame.to_csv(out.with_name(f"{out.stem}_confusion.csv"), index_label="true", lineterminator="\n")
    print(json.dumps({k: report[k] for k in ("overall_coverage", "relevant_coverage", "abstain_rate")}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    background = _background(args.background)
    if args.pipeline == "gmm":
        if not args.embeddings:
            raise ConfigurationError("sweep --pipeline gmm needs --embeddings")
        model = load_gmm(Path(args.model))
        embeddings = import_embeddings(Path(args.embeddings), dim=args.dim)
        evaluate = gmm_evaluator(model, embeddings.vectors)
        labels = embeddings.labels
        known = list(model.centroids.names) if model.centroids else []
        names = class_set_for(known + list(labels), background).names
        grid = parse_grid(args.grid, percentile_grid())
    else:
        if not args.features:
            raise ConfigurationError("sweep --pipeline softmax needs --features")
        loaded = load_encoder(Path(args.model))
        features = read_features(Path(args.features))
        evaluate = softmax_evaluator(predict_proba(loaded.model, features), loaded.class_names)
        labels = features.labels
        names = class_set_for(list(loaded.class_names) + list(labels), background).names
        grid = parse_grid(args.grid, softmax_grid())
    rows = sweep(evaluate, grid, labels, names, background, policy=args.policy)
    write_sweep(_output(args, args.out), rows)
    return EXIT_OK


# =============================================================================
# SYNTHETIC DATA
# =============================================================================

def cmd_synth(args) -> int:
    seed = _seed(args)
    if args.kind == "flows":
        corpus = generate_flows(
            load_profiles(Path(args.profile) if args.profile else None),
            sessions_per_class=args.sessions_per_class,
            flows_per_session=args.flows_per_session,
            seed=seed,
            test_fraction=args.test_fraction,
            background_share=args.background_share,
        )
        out = _output(args, args.out)
        write_flows(out, corpus.flows)
        assignment_out = _output(args, args.assignment_out) if args.assignment_out else out.with_suffix(".assignment.json")
        save_assignment(assignment_out, corpus.assignment)
    else:
        # the background name labels the outliers, not a blob
        foreground = [name for name in DEFAULT_CLASSES if name != BACKGROUND]
        names = foreground[: args.classes] if args.classes <= len(foreground) else None
        embeddings = generate_embeddings(
            orthogonal_means(args.classes, args.dim),
            spread=args.spread,
            n_per_class=args.n_per_class,
            outlier_fraction=args.outlier_fraction,
            seed=seed,
            class_names=names,
        )
        export_embeddings(_output(args, args.out), embeddings)
    return EXIT_OK


# =============================================================================
# RUNS
# =============================================================================

def cmd_run(args) -> int:
    config_path = args.config_file or args.config
    if not config_path:
        raise ConfigurationError("run needs a config file (positional or --config)")
    result = run_pipeline(Path(config_path), out_dir=args.out_dir, seed=args.seed)
    print(result.run_dir)
    return EXIT_OK


def _run_dir(args) -> Path:
    run_dir = args.run_dir or args.out_dir
    if not run_dir:
        raise ConfigurationError("--run-dir (or --out-dir) is required")
    return Path(run_dir)


def cmd_report(args) -> int:
    print(render_report(_run_dir(args)))
    return EXIT_OK


def cmd_validate_manifest(args) -> int:
    problems = check_run(_run_dir(args))
    for problem in problems:
        print(problem)
    if problems:
        return EXIT_DATA
    print("manifest OK")
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog=PROG, description="Encrypted traffic classification with confidence-based abstention.")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random choice")
    parser.add_argument("--out-dir", default=None, help="Base directory for relative outputs / run directory")
    parser.add_argument("--config", default=None, help="Experiment TOML file")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="pcap files -> labeled flows (JSONL)")
    p.add_argument("--pcap", nargs="+", required=True)
    p.add_argument("--rules", default=None, help="Label rules JSON (bundled default if omitted)")
    p.add_argument("--mode", choices=[m.value for m in CaptureMode], default=CaptureMode.DNS_GATED.value)
    p.add_argument("--session-id", required=True)
    p.add_argument("--session-type", default=None)
    p.add_argument("--scheme", choices=LABEL_SCHEMES, default="comprehensive")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("featurize", help="flows -> feature CSV")
    p.add_argument("--flows", required=True)
    p.add_argument("--kind", choices=[TIMESERIES, SIZESEQ], default=TIMESERIES)
    p.add_argument("--assignment", default=None)
    p.add_argument("--split", choices=[TRAIN, TEST], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_featurize)

    p = sub.add_parser("balance", help="equalize class counts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--flows", default=None, help="Flow JSONL for left-shift tails")
    p.add_argument("--max-shift", type=int, default=DEFAULT_MAX_SHIFT)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_balance)

    defaults = EncoderSection()
    p = sub.add_parser("train-encoder", help="train the BiLSTM encoder")
    p.add_argument("--features", required=True)
    p.add_argument("--loss", choices=sorted(LOSS_ALIASES), required=True)
    p.add_argument("--head", choices=[HEAD_SOFTMAX, HEAD_EMBEDDING], default=None)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--temperature", type=float, default=defaults.temperature)
    p.add_argument("--lstm1-units", type=int, default=defaults.lstm1_units)
    p.add_argument("--lstm2-units", type=int, default=defaults.lstm2_units)
    p.add_argument("--dense-units", type=int, default=defaults.dense_units)
    p.add_argument("--dropout", type=float, default=defaults.dropout)
    p.add_argument("--threads", type=int, default=defaults.threads)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_encoder)

    p = sub.add_parser("embed", help="features -> L2-normalized embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("fit-gmm", help="fit and label the GMM on training embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--feature-space", choices=[COSINE, EMBEDDING], default=COSINE)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--ridge-mode", choices=list(RIDGE_MODES), default=RIDGE_PRIOR)
    p.add_argument("--dim", type=int, default=EMBEDDING_DIM)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit_gmm)

    p = sub.add_parser("calibrate", help="set the GMM threshold at a training percentile")
    p.add_argument("--model", required=True)
    p.add_argument("--percentile", type=float, required=True)
    p.add_argument("--embeddings", default=None, help="Training embeddings (stored log-likelihoods if omitted)")
    p.add_argument("--dim", type=int, default=EMBEDDING_DIM)
    p.add_argument("--out", default=None, help="Defaults to overwriting --model")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("classify", help="decide test samples, abstaining below the threshold")
    p.add_argument("--pipeline", choices=["gmm", "softmax"], default="gmm")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--dim", type=int, default=EMBEDDING_DIM)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("evaluate", help="metrics for a decisions CSV")
    p.add_argument("--decisions", required=True)
    p.add_argument("--background", default=BACKGROUND, help="Background class, or 'none'")
    p.add_argument("--classes", default=None, help="Comma-separated class order")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", help="metrics over a threshold grid")
    p.add_argument("--pipeline", choices=["gmm", "softmax"], required=True)
    p.add_argument("--grid", default="default", help="'default', a comma list or start:stop:step")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--dim", type=int, default=EMBEDDING_DIM)
    p.add_argument("--background", default=BACKGROUND)
    p.add_argument("--policy", choices=ABSTAIN_POLICIES, default=EXCLUDE)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("synth", help="synthetic flows or embeddings")
    p.add_argument("kind", choices=["flows", "embeddings"])
    p.add_argument("--profile", default=None, help="Profile JSON (bundled default if omitted)")
    p.add_argument("--sessions-per-class", type=int, default=5)
    p.add_argument("--flows-per-session", type=int, default=20)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--background-share", type=float, default=0.0)
    p.add_argument("--assignment-out", default=None)
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--dim", type=int, default=EMBEDDING_DIM)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("config_file", nargs="?", default=None)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("report", help="re-render report.docx for a run directory")
    p.add_argument("--run-dir", default=None)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("validate-manifest", help="recompute a run's artifact hashes and stage keys")
    p.add_argument("--run-dir", default=None)
    p.set_defaults(handler=cmd_validate_manifest)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
        return args.handler(args)
    except ConfigurationError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except StageError as e:
        logger.error("%s", e)
        return EXIT_USAGE if isinstance(e.__cause__, ConfigurationError) else EXIT_DATA
    except PipelineError as e:
        logger.error("%s", e)
        return EXIT_DATA
