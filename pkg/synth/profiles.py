"""
Synthetic class profiles, loaded from a JSON document
(knowledge/synth_profiles.json by default).
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ingest.records import BACKGROUND, Transport
from utils.errors import ConfigurationError

PROFILES_SCHEMA_VERSION = 1
DEFAULT_PROFILES_PATH = Path(__file__).parent.parent / "knowledge" / "synth_profiles.json"

MIN_SIZE = 40
MAX_SIZE = 1500
MIN_FLOW_LENGTH = 40


@dataclass(frozen=True)
class SizeDistribution:
    mean: float
    std: float


@dataclass(frozen=True)
class ClassProfile:
    """
    Generative parameters of one traffic type.

    Sizes are truncated normals on [40, 1500] per direction; inter-arrival
    times are exponential with mean `inter_arrival`; each packet after the
    first switches direction with probability `switch_prob`; flow lengths are
    uniform on [min_length, max_length].
    """

    name: str
    transport: Transport
    server_port: int
    domains: Tuple[str, ...]
    c2s_size: SizeDistribution
    s2c_size: SizeDistribution
    inter_arrival: float
    switch_prob: float
    min_length: int
    max_length: int
    held_out: bool = False

    def __post_init__(self):
        if self.c2s_size.std <= 0 or self.s2c_size.std <= 0:
            raise ConfigurationError(f"Profile {self.name}: size std must be positive")
        if self.inter_arrival <= 0:
            raise ConfigurationError(f"Profile {self.name}: inter_arrival must be positive")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ConfigurationError(f"Profile {self.name}: switch_prob must lie in [0, 1]")
        if not MIN_FLOW_LENGTH <= self.min_length <= self.max_length:
            raise ConfigurationError(f"Profile {self.name}: lengths must satisfy 40 <= min <= max")
        if not self.domains:
            raise ConfigurationError(f"Profile {self.name}: at least one domain is required")


@dataclass(frozen=True)
class ProfileSet:
    """Application profiles in class order plus the background sub-profiles."""

    classes: Tuple[ClassProfile, ...]
    background: Tuple[ClassProfile, ...]
    background_name: str = BACKGROUND

    @property
    def class_names(self) -> List[str]:
        names = [p.name for p in self.classes]
        return names + [self.background_name] if self.background else names

    def background_profiles(self, held_out: bool) -> Tuple[ClassProfile, ...]:
        chosen = tuple(p for p in self.background if p.held_out == held_out)
        # fall back to every sub-profile when one side is empty
        return chosen or self.background


def _profile(item: Dict, name: Optional[str] = None) -> ClassProfile:
    try:
        return ClassProfile(
            name=name or str(item["name"]),
            transport=Transport(item.get("transport", "TCP")),
            server_port=int(item.get("server_port", 443)),
            domains=tuple(item["domains"]),
            c2s_size=SizeDistribution(float(item["c2s_size"]["mean"]), float(item["c2s_size"]["std"])),
            s2c_size=SizeDistribution(float(item["s2c_size"]["mean"]), float(item["s2c_size"]["std"])),
            inter_arrival=float(item["inter_arrival"]),
            switch_prob=float(item["switch_prob"]),
            min_length=int(item["length"]["min"]),
            max_length=int(item["length"]["max"]),
            held_out=bool(item.get("held_out", False)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"Malformed profile {item.get('name', '?')}: {e}") from e


def profiles_from_dict(document: Dict) -> ProfileSet:
    version = document.get("schema_version", PROFILES_SCHEMA_VERSION)
    if version != PROFILES_SCHEMA_VERSION:
        raise ConfigurationError(f"Unsupported synth profile schema_version: {version}")
    classes = tuple(_profile(item) for item in document.get("classes", []))
    if not classes:
        raise ConfigurationError("A profile document needs at least one class")
    background = document.get("background") or {}
    background_name = background.get("name", BACKGROUND)
    # every sub-profile generates flows of the background class
    subs = tuple(_profile(item, name=background_name) for item in background.get("sub_profiles", []))
    names = [p.name for p in classes]
    if len(set(names)) != len(names) or background_name in names:
        raise ConfigurationError("Profile class names must be unique")
    return ProfileSet(classes=classes, background=subs, background_name=background_name)


def load_profiles(path: Optional[Path] = None) -> ProfileSet:
    """Load a profile document; the bundled default when no path is given."""
    profiles_path = Path(path) if path is not None else DEFAULT_PROFILES_PATH
    if not profiles_path.exists():
        raise ConfigurationError(f"Synthetic profile file not found: {profiles_path}")
    with open(profiles_path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in {profiles_path}: {e}") from e
    return profiles_from_dict(document)
