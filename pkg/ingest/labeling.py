"""
Flow labeling by domain-name substring rules.

Three schemes reproduce the labeling experiments:

- session:        every flow takes its session's application type
- domain:         first matching substring rule; flows without a match are dropped
- comprehensive:  first matching substring rule; flows without a match are Background
"""

import json
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from ingest.records import BACKGROUND, Flow
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

RULES_SCHEMA_VERSION = 1
DEFAULT_RULES_PATH = Path(__file__).parent.parent / "knowledge" / "label_rules.json"


@dataclass(frozen=True)
class LabelRule:
    pattern: str
    label: str


@dataclass(frozen=True)
class LabelRuleSet:
    """Ordered substring rules; the first matching rule wins."""

    rules: Tuple[LabelRule, ...]
    keep_all_session_types: FrozenSet[str] = frozenset()
    fallback: str = BACKGROUND

    def match(self, domain: Optional[str]) -> Optional[str]:
        if not domain:
            return None
        domain = domain.lower()
        for rule in self.rules:
            if rule.pattern in domain:
                return rule.label
        return None

    @property
    def labels(self) -> Tuple[str, ...]:
        seen: Dict[str, None] = {}
        for rule in self.rules:
            seen.setdefault(rule.label)
        for session_type in sorted(self.keep_all_session_types):
            seen.setdefault(session_type)
        seen.setdefault(self.fallback)
        return tuple(seen)


def rules_from_dict(document: Dict) -> LabelRuleSet:
    """Validate and build a rule set from a parsed rules document."""
    version = document.get("schema_version", RULES_SCHEMA_VERSION)
    if version != RULES_SCHEMA_VERSION:
        raise ConfigurationError(f"Unsupported label rules schema_version: {version}")
    try:
        rules = tuple(
            LabelRule(pattern=str(item["pattern"]).lower(), label=str(item["label"]))
            for item in document.get("rules", [])
        )
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"Malformed label rule: {e}") from e
    if any(not rule.pattern for rule in rules):
        raise ConfigurationError("Label rule patterns must be non-empty")
    return LabelRuleSet(
        rules=rules,
        keep_all_session_types=frozenset(document.get("keep_all_session_types", [])),
        fallback=document.get("fallback", BACKGROUND),
    )


def load_label_rules(path: Optional[Path] = None) -> LabelRuleSet:
    """Load a rules JSON document; the bundled default when no path is given."""
    rules_path = Path(path) if path is not None else DEFAULT_RULES_PATH
    if not rules_path.exists():
        raise ConfigurationError(f"Label rules file not found: {rules_path}")
    with open(rules_path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in {rules_path}: {e}") from e
    return rules_from_dict(document)


def apply_labels(
    flows: Sequence[Flow],
    rules: LabelRuleSet,
    scheme: str = "comprehensive",
) -> List[Flow]:
    """
    Label flows.

    Args:
        flows: Flows with domains (and session types where a rule needs them).
        rules: Ordered rule set.
        scheme: "session", "domain" or "comprehensive".

    Returns:
        Labeled flows. Under "domain" the flows matching no rule are omitted;
        under the other schemes every input flow is returned labeled.
    """
    if scheme not in ("session", "domain", "comprehensive"):
        raise ConfigurationError(f"Unknown labeling scheme: {scheme}")

    labeled = []
    for flow in flows:
        if scheme == "session":
            if flow.session_type is None:
                raise ConfigurationError(
                    f"Flow {flow.flow_id} has no session type; session labeling needs one"
                )
            label = flow.session_type
        elif flow.session_type in rules.keep_all_session_types:
            label = flow.session_type
        else:
            label = rules.match(flow.domain)
            if label is None:
                if scheme == "domain":
                    continue
                label = rules.fallback
        labeled.append(dataclasses.replace(flow, label=label))

    if scheme == "domain":
        logger.info("Domain labeling kept %d of %d flows", len(labeled), len(flows))
    return labeled
