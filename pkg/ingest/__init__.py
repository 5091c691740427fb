"""
Ingest: captures to labeled, session-split flows.
"""

from ingest.dns import associate_dns
from ingest.flow_assembler import CaptureMode, assemble_flows
from ingest.flow_io import read_flows, write_flows
from ingest.labeling import LabelRule, LabelRuleSet, apply_labels, load_label_rules
from ingest.pcap_reader import Capture, parse_capture, parse_captures, read_capture
from ingest.records import (
    ABSTAIN,
    BACKGROUND,
    DEFAULT_CLASSES,
    ClassLabel,
    ClassSet,
    Direction,
    DnsResponse,
    Flow,
    FlowKey,
    FlowPacket,
    PacketRecord,
    Transport,
)
from ingest.sessions import make_session_assignment, split_sessions
