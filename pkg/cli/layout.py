"""
File layout of a run directory, relative to its root.
"""

FLOWS = "flows.jsonl"
ASSIGNMENT = "assignment.json"
LABELED_FLOWS = "labeled_flows.jsonl"
CLASSES = "classes.json"

TRAIN_FEATURES = "features/train.csv"
TEST_FEATURES = "features/test.csv"
TRAIN_SIZESEQ = "features/train_sizeseq.csv"
TEST_SIZESEQ = "features/test_sizeseq.csv"
BALANCED_FEATURES = "features/train_balanced.csv"

SOFTMAX_MODEL = "models/softmax_encoder.pt"
CONTRASTIVE_MODEL = "models/contrastive_encoder.pt"
GMM_MODEL = "models/gmm.json"

TRAIN_EMBEDDINGS = "embeddings/train.csv"
TEST_EMBEDDINGS = "embeddings/test.csv"

CLUSTER_COMPOSITION = "cluster_composition.json"
SUMMARY = "metrics/summary.json"
COMPARISON = "sweeps/matched_f1.csv"
REPORT = "report.docx"

F1_VS_OVERALL_PLOT = "plots/f1_vs_overall_coverage.png"
F1_VS_RELEVANT_PLOT = "plots/f1_vs_relevant_coverage.png"
ERROR_CDF_PLOT = "plots/softmax_error_confidence_cdf.png"


def decisions(pipeline: str) -> str:
    """Decisions at the pipeline's reporting threshold."""
    return f"decisions/{pipeline}.csv"


def unfiltered_decisions(pipeline: str) -> str:
    """Decisions with abstention disabled."""
    return f"decisions/{pipeline}_all.csv"


def sweep(pipeline: str) -> str:
    return f"sweeps/{pipeline}.csv"


def confusion_csv(pipeline: str) -> str:
    return f"confusion/{pipeline}.csv"


def confusion_json(pipeline: str) -> str:
    return f"confusion/{pipeline}.json"


def sweep_plot(pipeline: str) -> str:
    return f"plots/sweep_{pipeline}.png"


def confusion_plot(pipeline: str) -> str:
    return f"plots/confusion_{pipeline}.png"
