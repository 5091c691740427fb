"""
Flow persistence as JSONL, one flow per line.

Every line carries `schema_version` so downstream stages can reject flows
written by an incompatible version.
"""

import json
from pathlib import Path
from typing import Dict, Iterable, List

from ingest.records import Direction, Flow, FlowKey, FlowPacket, Transport
from utils.errors import DataError

FLOW_SCHEMA_VERSION = 1


def flow_to_dict(flow: Flow) -> Dict:
    return {
        "schema_version": FLOW_SCHEMA_VERSION,
        "flow_id": flow.flow_id,
        "key": {
            "client_addr": flow.key.client_addr,
            "client_port": flow.key.client_port,
            "server_addr": flow.key.server_addr,
            "server_port": flow.key.server_port,
            "transport": flow.key.transport.value,
        },
        "start_time": flow.start_time,
        "session_id": flow.session_id,
        "session_type": flow.session_type,
        "domain": flow.domain,
        "label": flow.label,
        "packets": [[p.relative_time, p.size, p.direction.value] for p in flow.packets],
    }


def flow_from_dict(record: Dict) -> Flow:
    version = record.get("schema_version")
    if version != FLOW_SCHEMA_VERSION:
        raise DataError(f"Unsupported flow schema_version: {version}")
    key = record["key"]
    return Flow(
        flow_id=record["flow_id"],
        key=FlowKey(
            client_addr=key["client_addr"],
            client_port=int(key["client_port"]),
            server_addr=key["server_addr"],
            server_port=int(key["server_port"]),
            transport=Transport(key["transport"]),
        ),
        start_time=float(record["start_time"]),
        packets=tuple(
            FlowPacket(float(t), int(size), Direction(direction))
            for t, size, direction in record["packets"]
        ),
        session_id=record["session_id"],
        session_type=record.get("session_type"),
        domain=record.get("domain"),
        label=record.get("label"),
    )


def write_flows(path: Path, flows: Iterable[Flow]) -> int:
    """Write flows as JSONL. Returns the number of flows written."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for flow in flows:
            f.write(json.dumps(flow_to_dict(flow), sort_keys=True))
            f.write("\n")
            count += 1
    return count


def read_flows(path: Path) -> List[Flow]:
    """Read a JSONL flow file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Flow file not found: {path}")
    flows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                flows.append(flow_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
                raise DataError(f"{path}:{line_number}: malformed flow record ({e})") from e
    return flows
