"""
End-to-end experiment runner.

A run executes a fixed sequence of stages inside one run directory:

    flows -> label -> featurize -> balance -> softmax -> contrastive -> gmm
          -> evaluate -> plots -> report

Each stage is keyed by the hash of its parameters and its input files. When
the previous manifest in the run directory records the same key and the
stage's outputs are still intact, the stage is reused instead of re-run.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from cli import layout
from cli.experiment import (
    CONTRASTIVE_SEED_OFFSET,
    class_set_for,
    em_config,
    fit_confidence_model,
    gmm_evaluator,
    softmax_evaluator,
    train_encoder,
)
from cli.manifest import (
    STATUS_COMPLETE,
    STATUS_FAILED,
    hash_artifacts,
    load_manifest,
    validate_manifest,
    write_manifest,
)
from confidence.clusters import cluster_composition
from confidence.decisions import classify_gmm_batch, model_inputs
from confidence.gmm import calibrate_threshold
from confidence.persistence import read_decisions, save_gmm, write_decisions
from docx_generation.run_report import build_run_report
from encoder.embeddings import embed_dataset, export_embeddings, import_embeddings
from encoder.model import HEAD_EMBEDDING, HEAD_SOFTMAX
from encoder.persistence import save_encoder
from encoder.trainer import predict_proba
from features.balancing import balance
from features.extraction import featurize
from features.feature_set import SIZESEQ, TIMESERIES, read_features, write_features
from ingest.flow_io import read_flows, write_flows
from ingest.labeling import DEFAULT_RULES_PATH, apply_labels, load_label_rules
from ingest.records import ClassSet
from ingest.sessions import load_assignment, make_session_assignment, save_assignment, split_sessions
from metrics.plots import plot_cdf, plot_confusion, plot_f1_vs_coverage, plot_sweep
from metrics.scoring import EXCLUDE, confusion, macro_f1, summarize
from metrics.sweep import (
    best_thresholds,
    coverage_at_matched_f1,
    misclassified_confidence_cdf,
    percentile_grid,
    read_sweep,
    softmax_grid,
    sweep,
    write_sweep,
)
from synth.flows import generate_flows
from synth.profiles import DEFAULT_PROFILES_PATH, load_profiles
from utils.config import RunConfig, config_from_dict, load_config, validate_inputs
from utils.errors import DataError, StageError
from utils.hashing import file_sha256, stage_key

logger = logging.getLogger(__name__)

SOFTMAX = "softmax"
GMM = "gmm"
BEST_THRESHOLD_ROWS = 5


@dataclass(frozen=True)
class Stage:
    name: str
    params: Dict[str, Any]
    inputs: Tuple[Path, ...]
    action: Callable[[], List[str]]


@dataclass
class RunResult:
    run_dir: Path
    manifest_path: Path
    reused: List[str] = field(default_factory=list)


def dump_json(path: Path, document: Any) -> None:
    """Sorted, indented JSON; numpy scalars are written as plain numbers."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True, default=lambda o: o.item() if hasattr(o, "item") else str(o))


def load_class_set(path: Path) -> ClassSet:
    with open(path, "r", encoding="utf-8") as f:
        record = json.load(f)
    return ClassSet(tuple(record["classes"]), record.get("background"))


class ExperimentRunner:
    """Plans and executes the stages of one run directory."""

    def __init__(self, config: RunConfig, run_dir: Path, config_path: Optional[str] = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.config_path = config_path
        self.seed = config.run.seed
        self.pipelines = tuple(config.run.pipelines)

    # ------------------------------------------------------------------ paths

    def path(self, rel: str) -> Path:
        """Absolute path of a run artifact; parent directories are created."""
        target = self.run_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def _paths(self, *rels: str) -> Tuple[Path, ...]:
        return tuple(self.run_dir / rel for rel in rels)

    def _rules_path(self) -> Path:
        return self.config.resolve(self.config.labels.rules) or DEFAULT_RULES_PATH

    def _external_inputs(self) -> Tuple[Path, ...]:
        data = self.config.data
        if data.source == "synth":
            return (self.config.resolve(data.profiles) or DEFAULT_PROFILES_PATH,)
        return tuple(self.config.resolve(p) for p in (data.flows, data.assignment) if p is not None)

    def class_set(self) -> ClassSet:
        return load_class_set(self.run_dir / layout.CLASSES)

    # ----------------------------------------------------------------- stages

    def stages(self) -> List[Stage]:
        cfg = self.config
        seeded = {"seed": self.seed}
        stages = [
            Stage("flows", {**cfg.section_dict("data"), **seeded}, self._external_inputs(), self._flows),
            Stage(
                "label",
                cfg.section_dict("labels"),
                (*self._paths(layout.FLOWS), self._rules_path()),
                self._label,
            ),
            Stage(
                "featurize",
                {"export_size_sequences": cfg.features.export_size_sequences},
                self._paths(layout.LABELED_FLOWS, layout.ASSIGNMENT, layout.CLASSES),
                self._featurize,
            ),
            Stage(
                "balance",
                {**cfg.section_dict("features"), **seeded},
                self._paths(layout.TRAIN_FEATURES, layout.LABELED_FLOWS, layout.CLASSES),
                self._balance,
            ),
        ]
        if SOFTMAX in self.pipelines:
            stages.append(
                Stage(
                    SOFTMAX,
                    {"encoder": cfg.section_dict("encoder"), "softmax": cfg.section_dict("softmax"), **seeded},
                    self._paths(layout.BALANCED_FEATURES, layout.TEST_FEATURES, layout.CLASSES),
                    self._softmax,
                )
            )
        if GMM in self.pipelines:
            stages += [
                Stage(
                    "contrastive",
                    {"encoder": cfg.section_dict("encoder"), **seeded},
                    self._paths(
                        layout.BALANCED_FEATURES, layout.TRAIN_FEATURES, layout.TEST_FEATURES, layout.CLASSES
                    ),
                    self._contrastive,
                ),
                Stage(
                    GMM,
                    {"gmm": cfg.section_dict("gmm"), "dim": cfg.encoder.dense_units, **seeded},
                    self._paths(
                        layout.TRAIN_EMBEDDINGS, layout.TEST_EMBEDDINGS, layout.TEST_FEATURES, layout.CLASSES
                    ),
                    self._gmm,
                ),
            ]
        results = [
            rel
            for p in self.pipelines
            for rel in (layout.decisions(p), layout.unfiltered_decisions(p), layout.sweep(p))
        ]
        reporting = {
            "pipelines": list(self.pipelines),
            "report_threshold": cfg.softmax.report_threshold,
            "report_percentile": cfg.gmm.report_percentile,
        }
        stages += [
            Stage("evaluate", reporting, self._paths(*results, layout.CLASSES), self._evaluate),
            Stage("plots", reporting, self._paths(*results, layout.CLASSES), self._plots),
            Stage(
                "report",
                {"config": cfg.to_dict(), "seed": self.seed},
                self._paths(*results, layout.SUMMARY, layout.TRAIN_FEATURES, layout.TEST_FEATURES),
                self._report,
            ),
        ]
        return stages

    def _flows(self) -> List[str]:
        data = self.config.data
        if data.source == "synth":
            profiles = load_profiles(self._external_inputs()[0])
            corpus = generate_flows(
                profiles,
                sessions_per_class=data.sessions_per_class,
                flows_per_session=data.flows_per_session,
                seed=self.seed,
                test_fraction=data.test_fraction,
                background_share=data.background_share,
            )
            flows, assignment = corpus.flows, corpus.assignment
        else:
            flows = read_flows(self.config.resolve(data.flows))
            if data.assignment:
                assignment = load_assignment(self.config.resolve(data.assignment))
            else:
                assignment = make_session_assignment(flows, data.test_fraction, self.seed)
        write_flows(self.path(layout.FLOWS), flows)
        save_assignment(self.path(layout.ASSIGNMENT), assignment)
        return [layout.FLOWS, layout.ASSIGNMENT]

    def _label(self) -> List[str]:
        flows = read_flows(self.run_dir / layout.FLOWS)
        rules = load_label_rules(self._rules_path())
        labeled = apply_labels(flows, rules, self.config.labels.scheme)
        if not labeled:
            raise DataError(f"Labeling scheme '{self.config.labels.scheme}' kept no flows")
        class_set = class_set_for([f.label for f in labeled])
        write_flows(self.path(layout.LABELED_FLOWS), labeled)
        dump_json(self.path(layout.CLASSES), {"classes": list(class_set.names), "background": class_set.background})
        logger.info("Labeled %d flows into %d classes", len(labeled), len(class_set))
        return [layout.LABELED_FLOWS, layout.CLASSES]

    def _featurize(self) -> List[str]:
        flows = read_flows(self.run_dir / layout.LABELED_FLOWS)
        assignment = load_assignment(self.run_dir / layout.ASSIGNMENT)
        train_flows, test_flows = split_sessions(flows, assignment)
        write_features(self.path(layout.TRAIN_FEATURES), featurize(train_flows, TIMESERIES))
        write_features(self.path(layout.TEST_FEATURES), featurize(test_flows, TIMESERIES))
        written = [layout.TRAIN_FEATURES, layout.TEST_FEATURES]
        if self.config.features.export_size_sequences:
            write_features(self.path(layout.TRAIN_SIZESEQ), featurize(train_flows, SIZESEQ))
            write_features(self.path(layout.TEST_SIZESEQ), featurize(test_flows, SIZESEQ))
            written += [layout.TRAIN_SIZESEQ, layout.TEST_SIZESEQ]
        return written

    def _balance(self) -> List[str]:
        section = self.config.features
        train = read_features(self.run_dir / layout.TRAIN_FEATURES)
        flows = {f.flow_id: f for f in read_flows(self.run_dir / layout.LABELED_FLOWS)}
        balanced = balance(
            train,
            section.balance,
            target_count=section.target_count,
            rng_seed=self.seed,
            flows=flows,
            class_names=self.class_set().names,
            max_shift=section.max_shift,
        )
        write_features(self.path(layout.BALANCED_FEATURES), balanced)
        return [layout.BALANCED_FEATURES]

    def _softmax(self) -> List[str]:
        class_set = self.class_set()
        balanced = read_features(self.run_dir / layout.BALANCED_FEATURES)
        test = read_features(self.run_dir / layout.TEST_FEATURES)
        result, cfg = train_encoder(balanced, class_set, self.config.encoder, HEAD_SOFTMAX, self.seed)
        save_encoder(self.path(layout.SOFTMAX_MODEL), result.model, class_set.names, cfg, result.loss_curve, self.seed)

        evaluate = softmax_evaluator(predict_proba(result.model, test), class_set.names)
        grid = list(self.config.softmax.thresholds or softmax_grid())
        rows = sweep(evaluate, grid, test.labels, class_set.names, class_set.background)
        write_sweep(self.path(layout.sweep(SOFTMAX)), rows)
        report_threshold = self.config.softmax.report_threshold
        write_decisions(self.path(layout.decisions(SOFTMAX)), test.labels, evaluate(report_threshold), test.flow_ids)
        write_decisions(self.path(layout.unfiltered_decisions(SOFTMAX)), test.labels, evaluate(0.0), test.flow_ids)
        return [
            layout.SOFTMAX_MODEL,
            layout.sweep(SOFTMAX),
            layout.decisions(SOFTMAX),
            layout.unfiltered_decisions(SOFTMAX),
        ]

    def _contrastive(self) -> List[str]:
        class_set = self.class_set()
        balanced = read_features(self.run_dir / layout.BALANCED_FEATURES)
        seed = self.seed + CONTRASTIVE_SEED_OFFSET
        result, cfg = train_encoder(balanced, class_set, self.config.encoder, HEAD_EMBEDDING, seed)
        save_encoder(self.path(layout.CONTRASTIVE_MODEL), result.model, class_set.names, cfg, result.loss_curve, seed)
        for source, target in ((layout.TRAIN_FEATURES, layout.TRAIN_EMBEDDINGS), (layout.TEST_FEATURES, layout.TEST_EMBEDDINGS)):
            export_embeddings(self.path(target), embed_dataset(result.model, read_features(self.run_dir / source)))
        return [layout.CONTRASTIVE_MODEL, layout.TRAIN_EMBEDDINGS, layout.TEST_EMBEDDINGS]

    def _gmm(self) -> List[str]:
        section = self.config.gmm
        class_set = self.class_set()
        dim = self.config.encoder.dense_units
        train = import_embeddings(self.run_dir / layout.TRAIN_EMBEDDINGS, dim=dim)
        test = import_embeddings(self.run_dir / layout.TEST_EMBEDDINGS, dim=dim)
        sample_ids = read_features(self.run_dir / layout.TEST_FEATURES).flow_ids

        model = fit_confidence_model(
            train, class_set.names, section.k, section.feature_space, em_config(section, self.seed)
        )
        model = calibrate_threshold(model, None, section.report_percentile)
        save_gmm(self.path(layout.GMM_MODEL), model)

        grid = list(section.percentiles or percentile_grid())
        rows = sweep(gmm_evaluator(model, test.vectors), grid, test.labels, class_set.names, class_set.background)
        write_sweep(self.path(layout.sweep(GMM)), rows)

        x_test = model_inputs(model, test.vectors)
        write_decisions(self.path(layout.decisions(GMM)), test.labels, classify_gmm_batch(model, x_test), sample_ids)
        write_decisions(
            self.path(layout.unfiltered_decisions(GMM)),
            test.labels,
            classify_gmm_batch(model, x_test, threshold=-np.inf),
            sample_ids,
        )
        composition = cluster_composition(model, model_inputs(model, train.vectors), train.labels)
        dump_json(self.path(layout.CLUSTER_COMPOSITION), composition)
        return [
            layout.GMM_MODEL,
            layout.sweep(GMM),
            layout.decisions(GMM),
            layout.unfiltered_decisions(GMM),
            layout.CLUSTER_COMPOSITION,
        ]

    def _evaluate(self) -> List[str]:
        class_set = self.class_set()
        names, background = class_set.names, class_set.background
        summary: Dict[str, Any] = {
            "classes": list(names),
            "background": background,
            "default_policy": EXCLUDE,
            "pipelines": {},
        }
        written = [layout.SUMMARY]
        sweeps = {}
        for pipeline in self.pipelines:
            labels, decisions = read_decisions(self.run_dir / layout.decisions(pipeline))
            all_labels, unfiltered = read_decisions(self.run_dir / layout.unfiltered_decisions(pipeline))
            result = summarize(labels, decisions, names, background)
            unfiltered_f1 = macro_f1(confusion(all_labels, unfiltered, names))
            sweeps[pipeline] = read_sweep(self.run_dir / layout.sweep(pipeline))
            result["unfiltered_macro_f1"] = unfiltered_f1
            result["best_thresholds"] = [
                dataclasses.asdict(r) for r in best_thresholds(sweeps[pipeline], unfiltered_f1)[:BEST_THRESHOLD_ROWS]
            ]
            if pipeline == SOFTMAX:
                result["threshold"] = self.config.softmax.report_threshold
            else:
                result["percentile"] = self.config.gmm.report_percentile
            summary["pipelines"][pipeline] = result

            m = confusion(labels, decisions, names)
            frame = pd.DataFrame(m.matrix, index=list(names), columns=list(names))
            frame["abstain"] = m.abstain_counts
            frame.to_csv(self.path(layout.confusion_csv(pipeline)), index_label="true", lineterminator="\n")
            dump_json(self.path(layout.confusion_json(pipeline)), m.to_dict())
            written += [layout.confusion_csv(pipeline), layout.confusion_json(pipeline)]

        if SOFTMAX in self.pipelines:
            labels, unfiltered = read_decisions(self.run_dir / layout.unfiltered_decisions(SOFTMAX))
            scores, _ = misclassified_confidence_cdf(labels, unfiltered)
            threshold = self.config.softmax.report_threshold
            summary["softmax_errors"] = {
                "misclassified": int(len(scores)),
                "share_passing_report_threshold": float(np.mean(scores >= threshold)) if len(scores) else 0.0,
            }
        if SOFTMAX in self.pipelines and GMM in self.pipelines:
            comparison = coverage_at_matched_f1(sweeps[GMM], sweeps[SOFTMAX])
            pd.DataFrame(comparison).to_csv(self.path(layout.COMPARISON), index=False, lineterminator="\n")
            summary["matched_f1"] = comparison
            written.append(layout.COMPARISON)

        dump_json(self.path(layout.SUMMARY), summary)
        return written

    def _plots(self) -> List[str]:
        names = self.class_set().names
        sweeps, written = {}, []
        axis = {SOFTMAX: "softmax probability threshold", GMM: "log-likelihood percentile"}
        for pipeline in self.pipelines:
            sweeps[pipeline] = read_sweep(self.run_dir / layout.sweep(pipeline))
            plot_sweep(sweeps[pipeline], self.path(layout.sweep_plot(pipeline)), f"{pipeline} threshold sweep", axis[pipeline])
            labels, decisions = read_decisions(self.run_dir / layout.decisions(pipeline))
            plot_confusion(confusion(labels, decisions, names), self.path(layout.confusion_plot(pipeline)), pipeline)
            written += [layout.sweep_plot(pipeline), layout.confusion_plot(pipeline)]
        if len(sweeps) == 2:
            curves = {"GMM": sweeps[GMM], "softmax": sweeps[SOFTMAX]}
            plot_f1_vs_coverage(curves, self.path(layout.F1_VS_OVERALL_PLOT))
            plot_f1_vs_coverage(curves, self.path(layout.F1_VS_RELEVANT_PLOT), relevant=True)
            written += [layout.F1_VS_OVERALL_PLOT, layout.F1_VS_RELEVANT_PLOT]
        if SOFTMAX in sweeps:
            labels, unfiltered = read_decisions(self.run_dir / layout.unfiltered_decisions(SOFTMAX))
            scores, cdf = misclassified_confidence_cdf(labels, unfiltered)
            plot_cdf(scores, cdf, self.path(layout.ERROR_CDF_PLOT), "highest softmax probability")
            written.append(layout.ERROR_CDF_PLOT)
        return written

    def _report(self) -> List[str]:
        build_run_report(self.run_dir, self.config.to_dict(), self.seed)
        return [layout.REPORT]

    # -------------------------------------------------------------- execution

    def stage_keys(self) -> Dict[str, str]:
        """Current key of every stage whose inputs exist."""
        keys = {}
        for stage in self.stages():
            if all(Path(p).exists() for p in stage.inputs):
                keys[stage.name] = stage_key(stage.name, stage.params, stage.inputs)
        return keys

    def _previous_records(self) -> Dict[str, Dict[str, Any]]:
        try:
            manifest = load_manifest(self.run_dir)
        except DataError:
            return {}
        return {record["name"]: record for record in manifest.get("stages", [])}

    def _reusable(self, record: Optional[Dict[str, Any]], key: str) -> bool:
        if not record or record.get("key") != key or not record.get("outputs"):
            return False
        for rel, digest in record["outputs"].items():
            path = self.run_dir / rel
            if not path.exists() or file_sha256(path) != digest:
                return False
        return True

    def run(self) -> RunResult:
        """
        Execute every stage, reusing unchanged ones.

        Raises:
            StageError: Naming the failed stage. The manifest is still written,
                with status "failed", and earlier artifacts are kept.
        """
        self.run_dir.mkdir(parents=True, exist_ok=True)
        previous = self._previous_records()
        records: List[Dict[str, Any]] = []
        reused: List[str] = []
        manifest_args = {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "config_path": self.config_path,
        }
        for stage in self.stages():
            try:
                key = stage_key(stage.name, stage.params, stage.inputs)
                if self._reusable(previous.get(stage.name), key):
                    logger.info("Stage %s unchanged; reusing its outputs", stage.name)
                    outputs = previous[stage.name]["outputs"]
                    reused.append(stage.name)
                else:
                    logger.info("Running stage %s", stage.name)
                    outputs = hash_artifacts(self.run_dir, stage.action())
            except Exception as e:
                logger.error("Stage %s failed: %s", stage.name, e)
                write_manifest(
                    self.run_dir,
                    status=STATUS_FAILED,
                    stages=records,
                    failed_stage=stage.name,
                    error=f"{type(e).__name__}: {e}",
                    **manifest_args,
                )
                raise StageError(stage.name, str(e)) from e
            records.append({"name": stage.name, "key": key, "reused": stage.name in reused, "outputs": outputs})

        manifest_path = write_manifest(self.run_dir, status=STATUS_COMPLETE, stages=records, **manifest_args)
        logger.info("Run complete: %s (%d stage(s) reused)", self.run_dir, len(reused))
        return RunResult(run_dir=self.run_dir, manifest_path=manifest_path, reused=reused)


def _with_overrides(config: RunConfig, seed: Optional[int], out_dir: Optional[str]) -> RunConfig:
    run = config.run
    if seed is not None:
        run = dataclasses.replace(run, seed=seed)
    if out_dir is not None:
        run = dataclasses.replace(run, out_dir=str(Path(out_dir).resolve()))
    return dataclasses.replace(config, run=run)


def run_pipeline(config_path: Path, out_dir: Optional[str] = None, seed: Optional[int] = None) -> RunResult:
    """
    Run the experiment a TOML config describes.

    Args:
        config_path: Experiment file.
        out_dir: Overrides run.out_dir.
        seed: Overrides run.seed.

    Returns:
        RunResult with the run directory and manifest path.

    Raises:
        ConfigurationError: Before any stage runs, for an invalid config or a
            referenced input that does not exist.
        StageError: When a stage fails.
    """
    config = _with_overrides(load_config(config_path), seed, out_dir)
    validate_inputs(config)
    run_dir = config.resolve(config.run.out_dir)
    logger.info("Starting run in %s (seed %d, pipelines %s)", run_dir, config.run.seed, ", ".join(config.run.pipelines))
    return ExperimentRunner(config, run_dir, str(Path(config_path).resolve())).run()


def check_run(run_dir: Path) -> List[str]:
    """
    Validate a run directory: artifact hashes and recomputed stage keys.

    Returns:
        Problems found; empty when the run validates.
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    config_path = manifest.get("config_path")
    base_dir = Path(config_path).parent if config_path else run_dir
    config = config_from_dict(manifest["config"], base_dir=base_dir)
    expected = ExperimentRunner(config, run_dir, config_path).stage_keys()
    return validate_manifest(run_dir, expected)


def render_report(run_dir: Path) -> Path:
    """Re-render report.docx from a finished run directory."""
    manifest = load_manifest(run_dir)
    return build_run_report(Path(run_dir), manifest["config"], int(manifest["seed"]))
