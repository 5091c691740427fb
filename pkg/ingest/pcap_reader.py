"""
Capture parsing.

Reads classic libpcap files (either byte order) with dpkt and yields the TCP
and UDP packets plus the DNS responses needed to gate and label flows.
"""

import ipaddress
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple

import dpkt
from joblib import Parallel, delayed
from tqdm import tqdm

from ingest.records import DnsResponse, PacketRecord, Transport
from utils.errors import CaptureFormatError
from utils.logging_setup import progress_disabled

logger = logging.getLogger(__name__)

MDNS_PORT = 5353
DNS_PORT = 53

TCP_FLAG_BITS = (
    (dpkt.tcp.TH_FIN, "FIN"),
    (dpkt.tcp.TH_SYN, "SYN"),
    (dpkt.tcp.TH_RST, "RST"),
    (dpkt.tcp.TH_PUSH, "PSH"),
    (dpkt.tcp.TH_ACK, "ACK"),
    (dpkt.tcp.TH_URG, "URG"),
    (dpkt.tcp.TH_ECE, "ECE"),
    (dpkt.tcp.TH_CWR, "CWR"),
)

DLT_EN10MB = 1
DLT_RAW = (12, 101)
DLT_LINUX_SLL = 113


@dataclass(frozen=True)
class Capture:
    packets: List[PacketRecord]
    dns_responses: List[DnsResponse]


def _tcp_flags(flags: int) -> FrozenSet[str]:
    return frozenset(name for bit, name in TCP_FLAG_BITS if flags & bit)


def _network_layer(datalink: int, buf: bytes):
    """Return the dpkt IP/IP6 object for a frame, or None for non-IP frames."""
    if datalink == DLT_EN10MB:
        frame = dpkt.ethernet.Ethernet(buf)
        ip = frame.data
    elif datalink in DLT_RAW:
        version = buf[0] >> 4 if buf else 0
        ip = dpkt.ip.IP(buf) if version == 4 else dpkt.ip6.IP6(buf) if version == 6 else None
    elif datalink == DLT_LINUX_SLL:
        ip = dpkt.sll.SLL(buf).data
    else:
        raise CaptureFormatError(f"Unsupported pcap link type: {datalink}")
    return ip if isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)) else None


def _datagram_length(ip) -> int:
    if isinstance(ip, dpkt.ip.IP):
        return ip.len
    return ip.plen + 40


def _dns_response(timestamp: float, payload: bytes) -> Optional[DnsResponse]:
    try:
        message = dpkt.dns.DNS(payload)
    except (dpkt.UnpackError, IndexError):
        return None
    if message.qr != dpkt.dns.DNS_R or not message.qd:
        return None
    addresses = set()
    # CNAME chains are not followed; any A/AAAA answer in the message counts
    for answer in message.an:
        if answer.type == dpkt.dns.DNS_A:
            addresses.add(str(ipaddress.ip_address(answer.ip)))
        elif answer.type == dpkt.dns.DNS_AAAA:
            addresses.add(str(ipaddress.ip_address(answer.ip6)))
    if not addresses:
        return None
    return DnsResponse(timestamp, message.qd[0].name.lower(), frozenset(addresses))


def read_capture(path: Path) -> Capture:
    """
    Parse one capture file.

    Args:
        path: pcap file (classic libpcap format, either endianness).

    Returns:
        Capture with TCP/UDP packets in file order (mDNS excluded) and the
        DNS responses carrying A/AAAA answers.

    Raises:
        CaptureFormatError: If the file header is not a pcap header.
    """
    path = Path(path)
    packets: List[PacketRecord] = []
    responses: List[DnsResponse] = []

    with open(path, "rb") as f:
        try:
            reader = dpkt.pcap.Reader(f)
        except (ValueError, dpkt.NeedData, dpkt.UnpackError) as e:
            raise CaptureFormatError(f"{path}: not a valid pcap file ({e})") from e

        datalink = reader.datalink()
        snaplen = reader.snaplen
        records = iter(reader)
        progress = tqdm(desc=f"parse {path.name}", unit="pkt", disable=progress_disabled(logger))

        while True:
            try:
                ts, buf = next(records)
            except StopIteration:
                break
            except (dpkt.NeedData, ValueError):
                logger.warning("%s: truncated packet record header, stopping after %d packets", path, len(packets))
                break
            progress.update(1)

            try:
                ip = _network_layer(datalink, buf)
            except (dpkt.NeedData, dpkt.UnpackError):
                logger.warning("%s: truncated trailing packet, stopping after %d packets", path, len(packets))
                break
            if ip is None:
                continue

            wire_len = _datagram_length(ip)
            if len(ip) < wire_len and len(buf) < snaplen:
                logger.warning("%s: truncated trailing packet, stopping after %d packets", path, len(packets))
                break

            segment = ip.data
            if isinstance(segment, dpkt.tcp.TCP):
                transport, flags = Transport.TCP, _tcp_flags(segment.flags)
            elif isinstance(segment, dpkt.udp.UDP):
                transport, flags = Transport.UDP, None
            else:
                continue

            if transport == Transport.UDP and MDNS_PORT in (segment.sport, segment.dport):
                continue

            packets.append(PacketRecord(
                timestamp=float(ts),
                src_addr=str(ipaddress.ip_address(ip.src)),
                dst_addr=str(ipaddress.ip_address(ip.dst)),
                src_port=segment.sport,
                dst_port=segment.dport,
                transport=transport,
                payload_len=wire_len,
                tcp_flags=flags,
            ))

            if transport == Transport.UDP and segment.sport == DNS_PORT:
                response = _dns_response(float(ts), bytes(segment.data))
                if response is not None:
                    responses.append(response)

        progress.close()

    logger.info("%s: %d packets, %d DNS responses", path, len(packets), len(responses))
    return Capture(packets, responses)


def parse_capture(path: Path) -> List[PacketRecord]:
    """Ordered TCP/UDP packet records of one capture file."""
    return read_capture(path).packets


def parse_captures(paths: Sequence[Path], n_jobs: int = 1) -> List[Capture]:
    """Parse several capture files, in parallel when n_jobs != 1. Output keeps input order."""
    if n_jobs == 1 or len(paths) <= 1:
        return [read_capture(p) for p in paths]
    return Parallel(n_jobs=n_jobs)(delayed(read_capture)(p) for p in paths)


def merge_captures(captures: Sequence[Capture]) -> Tuple[List[PacketRecord], List[DnsResponse]]:
    """Merge per-file results into one time-ordered packet list and response list."""
    packets = sorted(
        (p for c in captures for p in c.packets), key=lambda p: p.timestamp
    )
    responses = sorted(
        (r for c in captures for r in c.dns_responses), key=lambda r: r.timestamp
    )
    return packets, responses
