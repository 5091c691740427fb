"""
Shared builders for packets, flows and small labeled datasets.
"""

import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from ingest.records import Direction, Flow, FlowKey, FlowPacket, PacketRecord, Transport  # noqa: E402

CLIENT = ("10.0.0.2", 50000)
SERVER = ("93.184.216.34", 443)


def tcp_packet(t: float, size: int, c2s: bool = True, flags=("ACK",), client=CLIENT, server=SERVER) -> PacketRecord:
    src, dst = (client, server) if c2s else (server, client)
    return PacketRecord(
        timestamp=t,
        src_addr=src[0],
        dst_addr=dst[0],
        src_port=src[1],
        dst_port=dst[1],
        transport=Transport.TCP,
        payload_len=size,
        tcp_flags=frozenset(flags),
    )


def udp_packet(t: float, size: int, c2s: bool = True, client=CLIENT, server=SERVER) -> PacketRecord:
    src, dst = (client, server) if c2s else (server, client)
    return PacketRecord(t, src[0], dst[0], src[1], dst[1], Transport.UDP, size)


def tcp_conversation(
    start: float,
    n_data: int,
    step: float = 0.01,
    client=CLIENT,
    server=SERVER,
    close: bool = True,
) -> List[PacketRecord]:
    """SYN, n_data alternating data packets, then a FIN from each side."""
    packets = [tcp_packet(start, 60, True, ("SYN",), client, server)]
    t = start
    for i in range(n_data):
        t += step
        packets.append(tcp_packet(t, 100 + i, i % 2 == 1, ("ACK",), client, server))
    if close:
        packets.append(tcp_packet(t + step, 52, True, ("FIN", "ACK"), client, server))
        packets.append(tcp_packet(t + 2 * step, 52, False, ("FIN", "ACK"), client, server))
    return packets


def make_flow(
    flow_id: str,
    sizes,
    gaps=None,
    directions=None,
    session_id: str = "s1",
    label: Optional[str] = None,
    domain: Optional[str] = None,
    session_type: Optional[str] = None,
) -> Flow:
    sizes = list(sizes)
    gaps = list(gaps) if gaps is not None else [0.01] * len(sizes)
    directions = list(directions) if directions is not None else [
        Direction.CLIENT_TO_SERVER if i % 2 == 0 else Direction.SERVER_TO_CLIENT for i in range(len(sizes))
    ]
    times, t = [], 0.0
    for i in range(len(sizes)):
        if i:
            t += gaps[i]
        times.append(t)
    key = FlowKey(CLIENT[0], CLIENT[1], SERVER[0], SERVER[1], Transport.TCP)
    packets = tuple(FlowPacket(tm, s, d) for tm, s, d in zip(times, sizes, directions))
    return Flow(flow_id, key, 100.0, packets, session_id, session_type, domain, label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
