"""
Experiment configuration.

A run is described by one TOML file. Every key has a default, so an empty
file describes the default synthetic experiment. Relative paths are resolved
against the directory that holds the config file.
"""

import dataclasses
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from utils.errors import ConfigurationError

LABEL_SCHEMES = ("session", "domain", "comprehensive")
PIPELINES = ("softmax", "gmm")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    pipelines: Tuple[str, ...] = PIPELINES


@dataclass(frozen=True)
class DataSection:
    source: str = "synth"                 # "synth" or "flows"
    flows: Optional[str] = None           # JSONL written by `ingest`
    assignment: Optional[str] = None      # JSON map session_id -> train|test
    profiles: Optional[str] = None        # synthetic profile document
    sessions_per_class: int = 5
    flows_per_session: int = 20
    test_fraction: float = 0.3
    background_share: float = 0.0


@dataclass(frozen=True)
class LabelSection:
    scheme: str = "comprehensive"
    rules: Optional[str] = None


@dataclass(frozen=True)
class FeatureSection:
    balance: str = "augment"              # "augment" or "oversample"
    target_count: Optional[int] = None
    max_shift: int = 10
    export_size_sequences: bool = False


@dataclass(frozen=True)
class EncoderSection:
    lstm1_units: int = 128
    lstm2_units: int = 64
    dense_units: int = 64
    dropout: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    temperature: float = 0.07
    threads: int = 1


@dataclass(frozen=True)
class GmmSection:
    k: Optional[int] = None               # defaults to the number of classes
    feature_space: str = "cosine"         # "cosine" or "embedding"
    max_iters: int = 200
    tol: float = 1e-6
    cov_regularization: float = 1e-6
    ridge_mode: str = "prior"             # "prior" or "fixed"
    percentiles: Optional[Tuple[float, ...]] = None
    report_percentile: float = 5.0


@dataclass(frozen=True)
class SoftmaxSection:
    thresholds: Optional[Tuple[float, ...]] = None
    report_threshold: float = 0.9


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    labels: LabelSection = field(default_factory=LabelSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    gmm: GmmSection = field(default_factory=GmmSection)
    softmax: SoftmaxSection = field(default_factory=SoftmaxSection)
    base_dir: str = "."

    def section_dict(self, name: str) -> Dict[str, Any]:
        """Plain-dict view of one section, used for stage cache keys."""
        return dataclasses.asdict(getattr(self, name))

    def to_dict(self) -> Dict[str, Any]:
        return {name: self.section_dict(name) for name in _SECTIONS}

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        """Resolve a config-relative path."""
        if path is None:
            return None
        candidate = Path(path)
        return candidate if candidate.is_absolute() else Path(self.base_dir) / candidate


_SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "labels": LabelSection,
    "features": FeatureSection,
    "encoder": EncoderSection,
    "gmm": GmmSection,
    "softmax": SoftmaxSection,
}


def _build_section(cls, raw: Dict[str, Any], name: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in [{name}]: {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        # TOML arrays arrive as lists; sections store tuples so configs stay hashable
        values[key] = tuple(value) if isinstance(value, list) else value
    return cls(**values)


def config_from_dict(raw: Dict[str, Any], base_dir: Path = Path(".")) -> RunConfig:
    """
    Build a RunConfig from a parsed TOML document.

    Args:
        raw: Parsed document.
        base_dir: Directory relative paths are resolved against.

    Returns:
        Validated configuration.
    """
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"Unknown config section(s): {', '.join(unknown)}")
    sections = {
        name: _build_section(cls, raw.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    }
    config = RunConfig(**sections, base_dir=str(base_dir))
    _check_values(config)
    return config


def load_config(path: Path) -> RunConfig:
    """Load and validate an experiment TOML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Invalid TOML in {path}: {e}") from e
    return config_from_dict(raw, base_dir=path.parent)


def _check_values(config: RunConfig) -> None:
    bad_pipelines = set(config.run.pipelines) - set(PIPELINES)
    if bad_pipelines or not config.run.pipelines:
        raise ConfigurationError(f"run.pipelines must be a non-empty subset of {PIPELINES}")
    if config.data.source not in ("synth", "flows"):
        raise ConfigurationError("data.source must be 'synth' or 'flows'")
    if config.data.source == "flows" and not config.data.flows:
        raise ConfigurationError("data.flows is required when data.source = 'flows'")
    if not 0.0 < config.data.test_fraction < 1.0:
        raise ConfigurationError("data.test_fraction must lie in (0, 1)")
    if config.labels.scheme not in LABEL_SCHEMES:
        raise ConfigurationError(f"labels.scheme must be one of {LABEL_SCHEMES}")
    if config.features.balance not in ("augment", "oversample"):
        raise ConfigurationError("features.balance must be 'augment' or 'oversample'")
    if not 1 <= config.features.max_shift < 40:
        raise ConfigurationError("features.max_shift must satisfy 1 <= n < 40")
    if not 0.0 <= config.encoder.dropout < 1.0:
        raise ConfigurationError("encoder.dropout must lie in [0, 1)")
    if config.encoder.temperature <= 0:
        raise ConfigurationError("encoder.temperature must be positive")
    if config.gmm.feature_space not in ("cosine", "embedding"):
        raise ConfigurationError("gmm.feature_space must be 'cosine' or 'embedding'")
    if config.gmm.ridge_mode not in ("prior", "fixed"):
        raise ConfigurationError("gmm.ridge_mode must be 'prior' or 'fixed'")
    percentiles = config.gmm.percentiles or ()
    if any(not 0.0 <= p <= 100.0 for p in (*percentiles, config.gmm.report_percentile)):
        raise ConfigurationError("GMM percentiles must lie in [0, 100]")


def validate_inputs(config: RunConfig) -> None:
    """
    Check that every input file the config references exists.

    Called before the first stage runs, so a missing rules file fails fast.
    """
    referenced = {
        "data.flows": config.data.flows,
        "data.assignment": config.data.assignment,
        "data.profiles": config.data.profiles,
        "labels.rules": config.labels.rules,
    }
    for key, value in referenced.items():
        if value is None:
            continue
        path = config.resolve(value)
        if not path.exists():
            raise ConfigurationError(f"{key} references a missing file: {path}")
