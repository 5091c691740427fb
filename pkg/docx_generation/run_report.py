"""
Word report for a finished run directory.

Assembles the run settings, class counts, headline metrics, sweep tables,
cluster composition, the F1-versus-coverage comparison and the PNG figures
into report.docx.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List

from cli import layout
from docx_generation.docx_styles import (
    add_body_paragraph,
    add_caption,
    add_content_table,
    add_figure,
    add_header_footer,
    add_key_value_table,
    add_page_break,
    add_section_heading,
    add_subsection_heading,
    add_subtitle,
    add_title,
    save_document,
    setup_document,
)
from features.feature_set import read_features
from metrics.sweep import read_sweep
from utils.errors import DataError

logger = logging.getLogger(__name__)

PIPELINE_TITLES = {
    "softmax": "Softmax baseline",
    "gmm": "Contrastive embeddings with GMM abstention",
}
SWEEP_HEADERS = ["Threshold", "Macro F1", "Accuracy", "Weighted F1", "Overall cov.", "Relevant cov.", "Abstain"]


def _load_json(path: Path) -> Any:
    if not path.exists():
        raise DataError(f"Report input not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _settings(config: Dict[str, Any], seed: int) -> List[tuple]:
    data, labels, features = config["data"], config["labels"], config["features"]
    encoder, gmm, softmax = config["encoder"], config["gmm"], config["softmax"]
    return [
        ("Seed", seed),
        ("Pipelines", ", ".join(config["run"]["pipelines"])),
        ("Data source", data["source"]),
        ("Label scheme", labels["scheme"]),
        ("Balancing", features["balance"]),
        ("Encoder widths", f"{encoder['lstm1_units']} / {encoder['lstm2_units']} / {encoder['dense_units']}"),
        ("Epochs", encoder["epochs"]),
        ("Temperature", encoder["temperature"]),
        ("GMM components", gmm["k"] if gmm["k"] is not None else "one per class"),
        ("GMM feature space", gmm["feature_space"]),
        ("Reporting percentile", gmm["report_percentile"]),
        ("Reporting softmax threshold", softmax["report_threshold"]),
    ]


def _class_count_rows(run_dir: Path, classes: List[str]) -> List[list]:
    train = read_features(run_dir / layout.TRAIN_FEATURES).class_counts()
    test = read_features(run_dir / layout.TEST_FEATURES).class_counts()
    return [[name, train.get(name, 0), test.get(name, 0)] for name in classes]


def _headline(result: Dict[str, Any]) -> List[tuple]:
    excluded, missed = result["exclude"], result["miss"]
    return [
        ("Samples", result["samples"]),
        ("Abstain rate", result["abstain_rate"]),
        ("Macro F1 (abstained removed)", excluded["macro_f1"]),
        ("Macro F1 (abstained as miss)", missed["macro_f1"]),
        ("Weighted F1 (abstained removed)", excluded["weighted_f1"]),
        ("Accuracy (abstained removed)", excluded["accuracy"]),
        ("Accuracy (abstained as miss)", missed["accuracy"]),
        ("Overall coverage", result["overall_coverage"]),
        ("Relevant coverage", result["relevant_coverage"]),
        ("Macro F1 without abstention", result["unfiltered_macro_f1"]),
    ]


def _add_pipeline(doc, run_dir: Path, pipeline: str, result: Dict[str, Any], figure: int) -> int:
    add_section_heading(doc, PIPELINE_TITLES.get(pipeline, pipeline))
    if pipeline == "softmax":
        add_body_paragraph(doc, f"Reporting threshold: highest probability at least {result['threshold']}.")
        report_value = result["threshold"]
    else:
        add_body_paragraph(doc, f"Reporting threshold: {result['percentile']}th percentile of training log-likelihoods.")
        report_value = result["percentile"]
    add_key_value_table(doc, _headline(result))

    add_subsection_heading(doc, "Per-class results (abstained removed)")
    add_content_table(
        doc,
        ["Class", "Precision", "Recall", "F1", "Support", "Abstained"],
        [[r["class"], r["precision"], r["recall"], r["f1"], r["support"], r["abstained"]] for r in result["exclude"]["per_class"]],
    )

    add_subsection_heading(doc, "Threshold sweep")
    rows = read_sweep(run_dir / layout.sweep(pipeline))
    highlight = [i for i, r in enumerate(rows) if abs(r.threshold - report_value) < 1e-9]
    add_content_table(
        doc,
        SWEEP_HEADERS,
        [
            [r.threshold, r.macro_f1, r.accuracy, r.weighted_f1, r.overall_coverage, r.relevant_coverage, r.abstain_rate]
            for r in rows
        ],
        highlight_rows=highlight,
    )
    add_caption(doc, "Macro F1, accuracy and weighted F1 exclude abstained samples; coverage counts them.")

    if result.get("best_thresholds"):
        add_subsection_heading(doc, "Thresholds keeping the unfiltered macro F1")
        add_content_table(
            doc,
            ["Threshold", "Macro F1", "Overall cov.", "Relevant cov."],
            [[r["threshold"], r["macro_f1"], r["overall_coverage"], r["relevant_coverage"]] for r in result["best_thresholds"]],
        )

    add_figure(doc, run_dir / layout.sweep_plot(pipeline), f"{pipeline} threshold sweep", figure)
    add_figure(doc, run_dir / layout.confusion_plot(pipeline), f"{pipeline} confusion matrix (row shares)", figure + 1)
    return figure + 2


def _add_cluster_composition(doc, run_dir: Path) -> None:
    path = run_dir / layout.CLUSTER_COMPOSITION
    if not path.exists():
        return
    add_subsection_heading(doc, "Cluster composition (training data)")
    rows = []
    for cluster in _load_json(path):
        shares = sorted(cluster["shares"].items(), key=lambda kv: -kv[1])
        top = ", ".join(f"{name} {share:.2f}" for name, share in shares[:3])
        rows.append([cluster["cluster"], cluster["label"], cluster["total"], top])
    add_content_table(doc, ["Cluster", "Label", "Members", "Largest shares"], rows)


def build_run_report(run_dir: Path, config: Dict[str, Any], seed: int) -> Path:
    """
    Write report.docx into `run_dir`.

    Args:
        run_dir: Run directory produced by the experiment runner.
        config: Plain-dict run configuration.
        seed: Run seed.

    Returns:
        Path of the report.
    """
    run_dir = Path(run_dir)
    summary = _load_json(run_dir / layout.SUMMARY)

    doc = setup_document()
    add_header_footer(doc, run_dir.name)
    add_title(doc, "Traffic Classification Run Report")
    add_subtitle(doc, run_dir.name)

    add_section_heading(doc, "Run settings")
    add_key_value_table(doc, _settings(config, seed))

    add_section_heading(doc, "Data")
    add_content_table(doc, ["Class", "Train flows", "Test flows"], _class_count_rows(run_dir, summary["classes"]))
    background = summary.get("background")
    add_caption(
        doc,
        f"Relevant coverage excludes {background} samples." if background else "No background class in this run.",
    )

    figure = 1
    for pipeline, result in summary["pipelines"].items():
        add_page_break(doc)
        figure = _add_pipeline(doc, run_dir, pipeline, result, figure)
        if pipeline == "gmm":
            _add_cluster_composition(doc, run_dir)

    if summary.get("softmax_errors"):
        errors = summary["softmax_errors"]
        add_body_paragraph(
            doc,
            f"{errors['misclassified']} test samples are misclassified by the softmax baseline; "
            f"{errors['share_passing_report_threshold']:.2%} of them clear the reporting threshold.",
        )
        add_figure(doc, run_dir / layout.ERROR_CDF_PLOT, "Confidence of misclassified softmax predictions", figure)
        figure += 1

    if summary.get("matched_f1"):
        add_page_break(doc)
        add_section_heading(doc, "Coverage at matched macro F1")
        add_content_table(
            doc,
            ["Softmax thr.", "Softmax F1", "Softmax rel. cov.", "GMM pct.", "GMM F1", "GMM rel. cov.", "GMM overall cov."],
            [
                [
                    row["baseline_threshold"],
                    row["baseline_macro_f1"],
                    row["baseline_relevant_coverage"],
                    row["primary_threshold"],
                    row["primary_macro_f1"],
                    row["primary_relevant_coverage"],
                    row["primary_overall_coverage"],
                ]
                for row in summary["matched_f1"]
            ],
        )
        add_caption(doc, "For each softmax threshold, the best GMM coverage at a macro F1 at least as high.")
        add_figure(doc, run_dir / layout.F1_VS_OVERALL_PLOT, "Macro F1 against overall coverage", figure)
        add_figure(doc, run_dir / layout.F1_VS_RELEVANT_PLOT, "Macro F1 against relevant coverage", figure + 1)

    path = run_dir / layout.REPORT
    save_document(doc, path)
    return path
