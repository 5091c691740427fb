"""
Record types shared by every stage: packets, flows, DNS responses and the
class set.
"""

from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, Iterable, Iterator, NamedTuple, Optional, Tuple

from utils.errors import ConfigurationError, DataError

ABSTAIN = "ABSTAIN"


class ClassLabel(str, Enum):
    """The ten application types of the default experiment, in class order."""

    WEB_BROWSING = "WebBrowsing"
    SOCIAL_MEDIA = "SocialMedia"
    VIDEO = "Video"
    EMAIL = "Email"
    VOIP = "VoIP"
    CHAT = "Chat"
    GAMING = "Gaming"
    ONLINE_DOCS = "OnlineDocs"
    AZURE = "Azure"
    BACKGROUND = "Background"


DEFAULT_CLASSES: Tuple[str, ...] = tuple(label.value for label in ClassLabel)
BACKGROUND = ClassLabel.BACKGROUND.value


@dataclass(frozen=True)
class ClassSet:
    """
    Ordered set of class names.

    The order fixes matrix rows/columns, similarity-vector entries and every
    tie-break. `background` names the member the relevant-coverage metric
    excludes; it is None for label schemes without a background class.
    """

    names: Tuple[str, ...]
    background: Optional[str] = BACKGROUND

    def __post_init__(self):
        if not self.names:
            raise ConfigurationError("A class set needs at least one class.")
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError(f"Duplicate class names: {self.names}")
        if ABSTAIN in self.names:
            raise ConfigurationError(f"'{ABSTAIN}' is reserved and cannot be a class name.")
        if self.background is not None and self.background not in self.names:
            object.__setattr__(self, "background", None)

    @classmethod
    def default(cls) -> "ClassSet":
        return cls(DEFAULT_CLASSES, BACKGROUND)

    @classmethod
    def from_labels(cls, labels: Iterable[str], background: Optional[str] = BACKGROUND) -> "ClassSet":
        """Class set of the labels present, default classes first in enum order."""
        present = set(labels)
        known = [name for name in DEFAULT_CLASSES if name in present]
        extra = sorted(present - set(DEFAULT_CLASSES))
        return cls(tuple(known + extra), background)

    def index(self, label: str) -> int:
        try:
            return self.names.index(label)
        except ValueError:
            raise DataError(f"Label '{label}' is not in the class set {self.names}") from None

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)


class Transport(str, Enum):
    TCP = "TCP"
    UDP = "UDP"


class Direction(str, Enum):
    CLIENT_TO_SERVER = "c2s"
    SERVER_TO_CLIENT = "s2c"


@dataclass(frozen=True)
class PacketRecord:
    """One IP packet carrying TCP or UDP. `payload_len` is the IP datagram length."""

    timestamp: float
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    transport: Transport
    payload_len: int
    tcp_flags: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise DataError(f"Negative packet timestamp: {self.timestamp}")
        if self.payload_len < 0:
            raise DataError(f"Negative payload length: {self.payload_len}")
        if (self.tcp_flags is not None) != (self.transport == Transport.TCP):
            raise DataError("tcp_flags must be present exactly for TCP packets")
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 65535:
                raise DataError(f"Port out of range: {port}")

    def has_flag(self, flag: str) -> bool:
        return bool(self.tcp_flags) and flag in self.tcp_flags


@dataclass(frozen=True)
class FlowKey:
    """Canonical 5-tuple; the client is the originator of the first observed packet."""

    client_addr: str
    client_port: int
    server_addr: str
    server_port: int
    transport: Transport

    @classmethod
    def from_packet(cls, packet: PacketRecord) -> "FlowKey":
        return cls(packet.src_addr, packet.src_port, packet.dst_addr, packet.dst_port, packet.transport)

    def direction_of(self, packet: PacketRecord) -> Direction:
        if (packet.src_addr, packet.src_port) == (self.client_addr, self.client_port):
            return Direction.CLIENT_TO_SERVER
        return Direction.SERVER_TO_CLIENT


def conversation_key(packet: PacketRecord) -> Tuple:
    """Direction-independent key: both directions of a conversation map to the same value."""
    a = (packet.src_addr, packet.src_port)
    b = (packet.dst_addr, packet.dst_port)
    return (packet.transport.value, min(a, b), max(a, b))


class FlowPacket(NamedTuple):
    relative_time: float
    size: int
    direction: Direction


@dataclass(frozen=True)
class Flow:
    """An ordered packet sequence under one FlowKey."""

    flow_id: str
    key: FlowKey
    start_time: float
    packets: Tuple[FlowPacket, ...]
    session_id: str
    session_type: Optional[str] = None
    domain: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self):
        times = [p.relative_time for p in self.packets]
        if times and times[0] != 0.0:
            raise DataError(f"Flow {self.flow_id}: first packet must have relative time 0")
        if any(later < earlier for earlier, later in zip(times, times[1:])):
            raise DataError(f"Flow {self.flow_id}: packets are not time-ordered")

    def __len__(self) -> int:
        return len(self.packets)


@dataclass(frozen=True)
class DnsResponse:
    timestamp: float
    domain: str
    addresses: FrozenSet[str]
