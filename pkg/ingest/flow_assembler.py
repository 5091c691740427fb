"""
Flow assembly.

Groups time-ordered packets into bidirectional flows the way a flow tracker
does: TCP flows close once both directions have sent FIN (or on RST), UDP
flows close after an idle timeout. Flows are then gated on a preceding DNS
response and filtered by length.
"""

import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

from ingest.records import (
    Direction,
    DnsResponse,
    Flow,
    FlowKey,
    FlowPacket,
    PacketRecord,
    Transport,
    conversation_key,
)

logger = logging.getLogger(__name__)

MIN_FLOW_PACKETS = 40
UDP_IDLE_TIMEOUT = 60.0


class CaptureMode(str, Enum):
    DNS_GATED = "dns_gated"
    KEEP_ALL = "keep_all"


@dataclass
class _FlowBuilder:
    key: FlowKey
    start_time: float
    last_time: float
    packets: List[FlowPacket] = field(default_factory=list)
    fin_directions: Set[Direction] = field(default_factory=set)
    closed: bool = False

    def add(self, packet: PacketRecord) -> None:
        direction = self.key.direction_of(packet)
        if packet.has_flag("FIN"):
            if direction in self.fin_directions:
                # retransmitted FIN: the retained prefix keeps one FIN per direction
                return
            self.fin_directions.add(direction)
        self.packets.append(FlowPacket(packet.timestamp - self.start_time, packet.payload_len, direction))
        self.last_time = packet.timestamp
        if len(self.fin_directions) == 2 or packet.has_flag("RST"):
            self.closed = True


def _opens_connection(packet: PacketRecord) -> bool:
    return packet.has_flag("SYN") and not packet.has_flag("ACK")


class _DnsIndex:
    """Per-address sorted timestamps of DNS responses that resolved the address."""

    def __init__(self, responses: Sequence[DnsResponse]):
        self._times: Dict[str, List[float]] = defaultdict(list)
        for response in responses:
            for address in response.addresses:
                self._times[address].append(response.timestamp)
        for times in self._times.values():
            times.sort()

    def resolved_before(self, address: str, timestamp: float) -> bool:
        times = self._times.get(address)
        return bool(times) and bisect.bisect_right(times, timestamp) > 0


def assemble_flows(
    packets: Sequence[PacketRecord],
    mode: CaptureMode = CaptureMode.DNS_GATED,
    dns_responses: Sequence[DnsResponse] = (),
    *,
    session_id: str = "",
    session_type: Optional[str] = None,
    min_packets: int = MIN_FLOW_PACKETS,
    udp_idle_timeout: float = UDP_IDLE_TIMEOUT,
) -> List[Flow]:
    """
    Assemble flows from time-ordered packets.

    Args:
        packets: Packets in non-decreasing timestamp order.
        mode: dns_gated drops flows whose server address was never resolved by
            a DNS response at or before the flow's first packet; keep_all
            retains every flow.
        dns_responses: DNS responses of the same capture (dns_gated mode).
        session_id: Session the capture belongs to.
        session_type: Application type of the session.
        min_packets: Flows shorter than this are dropped.
        udp_idle_timeout: Gap in seconds after which a UDP conversation starts a new flow.

    Returns:
        Flows ordered by start time, with ids `<session_id>:<n>`.
    """
    mode = CaptureMode(mode)
    active: Dict[Tuple, _FlowBuilder] = {}
    finished: List[_FlowBuilder] = []

    for packet in packets:
        conv = conversation_key(packet)
        builder = active.get(conv)

        if builder is not None:
            if packet.transport == Transport.TCP and builder.closed:
                if not _opens_connection(packet):
                    continue
                finished.append(builder)
                builder = None
            elif (packet.transport == Transport.UDP
                    and packet.timestamp - builder.last_time > udp_idle_timeout):
                finished.append(builder)
                builder = None

        if builder is None:
            builder = _FlowBuilder(FlowKey.from_packet(packet), packet.timestamp, packet.timestamp)
            active[conv] = builder
        builder.add(packet)

    finished.extend(active.values())
    finished.sort(key=lambda b: (b.start_time, b.key.client_addr, b.key.client_port,
                                 b.key.server_addr, b.key.server_port, b.key.transport.value))

    dns_index = _DnsIndex(dns_responses)
    flows: List[Flow] = []
    dropped_dns = dropped_short = 0
    for builder in finished:
        if mode == CaptureMode.DNS_GATED and not dns_index.resolved_before(
                builder.key.server_addr, builder.start_time):
            dropped_dns += 1
            continue
        if len(builder.packets) < min_packets:
            dropped_short += 1
            continue
        flows.append(Flow(
            flow_id=f"{session_id}:{len(flows)}",
            key=builder.key,
            start_time=builder.start_time,
            packets=tuple(builder.packets),
            session_id=session_id,
            session_type=session_type,
        ))

    logger.info(
        "Assembled %d flows (%d without preceding DNS response, %d shorter than %d packets)",
        len(flows), dropped_dns, dropped_short, min_packets,
    )
    return flows
