"""
Minimal pcap writer for test captures.

Builds Ethernet/IPv4|IPv6/TCP|UDP frames with dpkt so that each IP datagram
length equals the record's payload_len, and can interleave DNS responses.
"""

import ipaddress
import socket
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import dpkt

from ingest.pcap_reader import DNS_PORT, TCP_FLAG_BITS
from ingest.records import DnsResponse, PacketRecord, Transport
from utils.errors import ConfigurationError

IPV4_HEADER = 20
IPV6_HEADER = 40
TCP_HEADER = 20
UDP_HEADER = 8

RESOLVER_ADDR = "192.0.2.53"
RESOLVER_CLIENT = ("10.255.255.1", 53000)

_FLAG_BITS = {name: bit for bit, name in TCP_FLAG_BITS}
_CLIENT_MAC = b"\x02\x00\x00\x00\x00\x01"
_SERVER_MAC = b"\x02\x00\x00\x00\x00\x02"


def _ip_packet(src: str, dst: str, proto: int, segment) -> Union[dpkt.ip.IP, dpkt.ip6.IP6]:
    src_ip, dst_ip = ipaddress.ip_address(src), ipaddress.ip_address(dst)
    if src_ip.version != dst_ip.version:
        raise ConfigurationError(f"Mixed address families: {src} -> {dst}")
    if src_ip.version == 4:
        ip = dpkt.ip.IP(
            src=socket.inet_pton(socket.AF_INET, src),
            dst=socket.inet_pton(socket.AF_INET, dst),
            p=proto,
            ttl=64,
            data=segment,
        )
        ip.len = IPV4_HEADER + len(segment)
        return ip
    ip6 = dpkt.ip6.IP6(
        src=socket.inet_pton(socket.AF_INET6, src),
        dst=socket.inet_pton(socket.AF_INET6, dst),
        nxt=proto,
        hlim=64,
        data=segment,
    )
    ip6.plen = len(segment)
    return ip6


def _frame(ip) -> bytes:
    ether_type = dpkt.ethernet.ETH_TYPE_IP if isinstance(ip, dpkt.ip.IP) else dpkt.ethernet.ETH_TYPE_IP6
    return bytes(dpkt.ethernet.Ethernet(src=_CLIENT_MAC, dst=_SERVER_MAC, type=ether_type, data=ip))


def packet_frame(packet: PacketRecord) -> bytes:
    """Ethernet frame whose IP datagram is exactly packet.payload_len bytes."""
    v6 = ipaddress.ip_address(packet.src_addr).version == 6
    header = (IPV6_HEADER if v6 else IPV4_HEADER) + (TCP_HEADER if packet.transport == Transport.TCP else UDP_HEADER)
    if packet.payload_len < header:
        raise ConfigurationError(f"payload_len {packet.payload_len} is below the {header}-byte header size")
    body = b"\x00" * (packet.payload_len - header)
    if packet.transport == Transport.TCP:
        flags = 0
        for name in packet.tcp_flags or ():
            flags |= _FLAG_BITS[name]
        segment = dpkt.tcp.TCP(sport=packet.src_port, dport=packet.dst_port, flags=flags, data=body)
        proto = dpkt.ip.IP_PROTO_TCP
    else:
        segment = dpkt.udp.UDP(sport=packet.src_port, dport=packet.dst_port, data=body)
        segment.ulen = UDP_HEADER + len(body)
        proto = dpkt.ip.IP_PROTO_UDP
    return _frame(_ip_packet(packet.src_addr, packet.dst_addr, proto, segment))


def dns_frame(response: DnsResponse, client: Tuple[str, int] = RESOLVER_CLIENT) -> bytes:
    """A DNS response from RESOLVER_ADDR:53 answering response.domain."""
    message = dpkt.dns.DNS(id=1)
    message.qr = dpkt.dns.DNS_R
    message.qd = [dpkt.dns.DNS.Q(name=response.domain, type=dpkt.dns.DNS_A, cls=dpkt.dns.DNS_IN)]
    answers = []
    for address in sorted(response.addresses):
        parsed = ipaddress.ip_address(address)
        rr_type = dpkt.dns.DNS_A if parsed.version == 4 else dpkt.dns.DNS_AAAA
        answers.append(
            dpkt.dns.DNS.RR(name=response.domain, type=rr_type, cls=dpkt.dns.DNS_IN, ttl=60, rdata=parsed.packed)
        )
    message.an = answers
    payload = bytes(message)
    segment = dpkt.udp.UDP(sport=DNS_PORT, dport=client[1], data=payload)
    segment.ulen = UDP_HEADER + len(payload)
    return _frame(_ip_packet(RESOLVER_ADDR, client[0], dpkt.ip.IP_PROTO_UDP, segment))


def write_pcap(
    path: Path,
    packets: Sequence[PacketRecord],
    dns_responses: Iterable[DnsResponse] = (),
    snaplen: int = 65535,
) -> int:
    """
    Write packets and DNS responses, merged by timestamp, to a pcap file.

    Returns:
        Number of records written.
    """
    records: List[Tuple[float, int, bytes]] = [(r.timestamp, 0, dns_frame(r)) for r in dns_responses]
    records += [(p.timestamp, 1, packet_frame(p)) for p in packets]
    # stable: DNS answers precede packets sharing their timestamp
    records.sort(key=lambda r: (r[0], r[1]))
    with open(path, "wb") as f:
        writer = dpkt.pcap.Writer(f, snaplen=snaplen, linktype=dpkt.pcap.DLT_EN10MB)
        for ts, _, frame in records:
            writer.writepkt(frame, ts=ts)
    return len(records)
