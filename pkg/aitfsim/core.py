"""Domain types shared by every aitfsim module.

Addresses are IPv4 (``ipaddress``), virtual time is integer milliseconds and
flow labels are wildcardable 5-tuples whose destination is always exact.
"""

import ipaddress
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

NodeId = str
SimTime = int
Duration = int

Address = ipaddress.IPv4Address
Prefix = ipaddress.IPv4Network

WILDCARD = "*"
NONCE_BITS = 64

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ms|s|sec|min|m)?\s*$")
_DURATION_UNITS = {None: 1, "ms": 1, "s": 1000, "sec": 1000, "min": 60000, "m": 60000}


def parse_duration(value: Union[int, float, str]) -> Duration:
    """Convert ``600``, ``"600ms"``, ``"60s"`` or ``"1min"`` to milliseconds."""
    if isinstance(value, bool):
        raise ProtocolError(f"invalid duration: {value!r}")
    if isinstance(value, (int, float)):
        if value < 0 or value != int(value):
            raise ProtocolError(f"invalid duration: {value!r}")
        return int(value)
    match = _DURATION_RE.match(str(value))
    if not match:
        raise ProtocolError(f"invalid duration: {value!r}")
    amount = float(match.group(1)) * _DURATION_UNITS[match.group(2)]
    if amount != int(amount):
        raise ProtocolError(f"duration {value!r} is not a whole number of milliseconds")
    return int(amount)


def format_duration(ms: Duration) -> str:
    if ms % 60000 == 0 and ms:
        return f"{ms // 60000}min"
    if ms % 1000 == 0 and ms:
        return f"{ms // 1000}s"
    return f"{ms}ms"


def parse_address(text: Union[str, Address]) -> Address:
    try:
        return ipaddress.IPv4Address(str(text).strip())
    except ValueError as e:
        raise ProtocolError(f"invalid address {text!r}: {e}") from None


def parse_prefix(text: str) -> Optional[Prefix]:
    """``*`` is the wildcard (None); a bare address is a /32."""
    text = str(text).strip()
    if text == WILDCARD:
        return None
    try:
        return ipaddress.IPv4Network(text, strict=False)
    except ValueError as e:
        raise ProtocolError(f"invalid source {text!r}: {e}") from None


def _parse_port(text: str) -> Optional[int]:
    text = text.strip()
    if text == WILDCARD:
        return None
    if not text.isdigit() or not 0 <= int(text) <= 65535:
        raise ProtocolError(f"invalid port {text!r}")
    return int(text)


def _render_optional(value) -> str:
    return WILDCARD if value is None else str(value)


class PacketAction(str, Enum):
    PASS = "PASS"
    DROP = "DROP"
    FORWARD = "FORWARD"


@dataclass(frozen=True)
class PacketHeader:
    src: Address
    dst: Address
    proto: str = "udp"
    sport: Optional[int] = None
    dport: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "proto", str(self.proto).lower())

    def key(self) -> tuple:
        return (self.src, self.dst, self.proto, self.sport, self.dport)

    def __str__(self) -> str:
        ports = ""
        if self.sport is not None or self.dport is not None:
            ports = f" {_render_optional(self.sport)}>{_render_optional(self.dport)}"
        return f"{self.src}>{self.dst} {self.proto}{ports}"


@dataclass
class DataPacket:
    header: PacketHeader
    size_bytes: int
    flow_id: str
    sent_at: SimTime
    recorded_route: List[NodeId] = field(default_factory=list)

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ProtocolError(f"packet size must be positive, got {self.size_bytes}")

    def record(self, node_id: NodeId) -> None:
        """Append a traversed border router; the route never shrinks."""
        self.recorded_route.append(node_id)


@dataclass(frozen=True)
class FlowLabel:
    """Wildcardable flow description; ``None`` fields match anything."""

    dst: Address
    src: Optional[Prefix] = None
    proto: Optional[str] = None
    sport: Optional[int] = None
    dport: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.dst, ipaddress.IPv4Address):
            object.__setattr__(self, "dst", parse_address(self.dst))
        if self.src is not None and not isinstance(self.src, ipaddress.IPv4Network):
            object.__setattr__(self, "src", parse_prefix(self.src))
        if self.proto is not None:
            object.__setattr__(self, "proto", str(self.proto).lower())
        for name in ("sport", "dport"):
            port = getattr(self, name)
            if port is not None and not 0 <= int(port) <= 65535:
                raise ProtocolError(f"{name} out of range: {port}")

    @classmethod
    def parse(cls, text: str) -> "FlowLabel":
        """Parse ``src>dst[:proto[:sport>dport]]``."""
        parts = str(text).strip().split(":")
        if not 1 <= len(parts) <= 3 or ">" not in parts[0]:
            raise ProtocolError(f"invalid flow label {text!r}")
        src_text, _, dst_text = parts[0].partition(">")
        if dst_text.strip() == WILDCARD:
            raise ProtocolError(f"flow label destination must be exact: {text!r}")
        if "/" in dst_text:
            raise ProtocolError(f"flow label destination must be an address: {text!r}")
        proto = None
        sport = dport = None
        if len(parts) >= 2:
            proto = None if parts[1].strip() == WILDCARD else parts[1].strip().lower()
        if len(parts) == 3:
            if ">" not in parts[2]:
                raise ProtocolError(f"invalid port pair in {text!r}")
            sport_text, _, dport_text = parts[2].partition(">")
            sport, dport = _parse_port(sport_text), _parse_port(dport_text)
        return cls(dst=parse_address(dst_text), src=parse_prefix(src_text),
                   proto=proto, sport=sport, dport=dport)

    @classmethod
    def exact(cls, header: PacketHeader) -> "FlowLabel":
        return cls(dst=header.dst, src=ipaddress.IPv4Network(f"{header.src}/32"),
                   proto=header.proto, sport=header.sport, dport=header.dport)

    def __str__(self) -> str:
        if self.src is None:
            src = WILDCARD
        elif self.src.prefixlen == 32:
            src = str(self.src.network_address)
        else:
            src = str(self.src)
        text = f"{src}>{self.dst}"
        has_ports = self.sport is not None or self.dport is not None
        if self.proto is not None or has_ports:
            text += f":{_render_optional(self.proto)}"
        if has_ports:
            text += f":{_render_optional(self.sport)}>{_render_optional(self.dport)}"
        return text

    def is_exact(self) -> bool:
        return (self.src is not None and self.src.prefixlen == 32
                and self.proto is not None and self.sport is not None
                and self.dport is not None)

    def exact_key(self) -> Optional[tuple]:
        """Header key this label matches exactly, if it is fully specified."""
        if not self.is_exact():
            return None
        return (self.src.network_address, self.dst, self.proto, self.sport, self.dport)

    def matches(self, header: PacketHeader) -> bool:
        if header.dst != self.dst:
            return False
        if self.src is not None and header.src not in self.src:
            return False
        if self.proto is not None and header.proto != self.proto:
            return False
        if self.sport is not None and header.sport != self.sport:
            return False
        if self.dport is not None and header.dport != self.dport:
            return False
        return True

    def subsumes(self, other: "FlowLabel") -> bool:
        if self.dst != other.dst:
            return False
        if self.src is not None:
            if other.src is None or not other.src.subnet_of(self.src):
                return False
        for name in ("proto", "sport", "dport"):
            mine = getattr(self, name)
            if mine is not None and getattr(other, name) != mine:
                return False
        return True


def flow_label_matches(label: FlowLabel, header: PacketHeader) -> bool:
    """True iff every specified field of ``label`` covers ``header``."""
    return label.matches(header)


def flow_label_subsumes(general: FlowLabel, specific: FlowLabel) -> bool:
    """True iff every header matched by ``specific`` is matched by ``general``."""
    return general.subsumes(specific)


class MessageKind(str, Enum):
    FILTER_REQ = "FILTER_REQ"
    VERIFY_QUERY = "VERIFY_QUERY"
    VERIFY_REPLY = "VERIFY_REPLY"


class RequestType(str, Enum):
    TO_VICTIM_GW = "TO_VICTIM_GW"
    TO_ATTACKER_GW = "TO_ATTACKER_GW"
    TO_ATTACKER = "TO_ATTACKER"


@dataclass(frozen=True)
class AitfMessage:
    """Filtering request or verification query/reply.

    ``requester`` is the claimed sender; ``destination`` is the node the
    message is routed to. ``round_index`` numbers the escalation round a
    FILTER_REQ belongs to.
    """

    kind: MessageKind
    flow_label: FlowLabel
    requester: NodeId
    destination: NodeId
    req_type: Optional[RequestType] = None
    nonce: Optional[int] = None
    attack_path: Tuple[NodeId, ...] = ()
    round_index: int = 1

    def __post_init__(self):
        if self.kind == MessageKind.FILTER_REQ:
            if self.req_type is None:
                raise ProtocolError("FILTER_REQ needs a request type")
        else:
            if self.nonce is None:
                raise ProtocolError(f"{self.kind.value} needs a nonce")
        if self.nonce is not None and (isinstance(self.nonce, bool) or not isinstance(self.nonce, int)):
            raise ProtocolError(f"nonce must be an integer, got {self.nonce!r}")
        if self.nonce is not None and not 0 <= self.nonce < 2 ** NONCE_BITS:
            raise ProtocolError(f"nonce out of range: {self.nonce}")
        if self.round_index < 1:
            raise ProtocolError(f"round index must be >= 1, got {self.round_index}")
        object.__setattr__(self, "attack_path", tuple(self.attack_path))

    def describe(self) -> str:
        if self.kind == MessageKind.FILTER_REQ:
            return f"{self.req_type.value} {self.flow_label} round={self.round_index}"
        return f"{self.kind.value} {self.flow_label} nonce={self.nonce:016x}"


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol timers, all in milliseconds.

    ``timeout`` is T (attacker's-gateway filter lifetime and shadow retention),
    ``temp_timeout`` is T_tmp. ``disconnect_duration`` of None lasts the rest
    of the run.
    """

    timeout: Duration = 60000
    temp_timeout: Duration = 600
    grace_attacker: Duration = 200
    grace_victim_gw: Duration = 500
    handshake_timeout: Duration = 1000
    disconnect_duration: Optional[Duration] = None

    def __post_init__(self):
        for name in ("timeout", "temp_timeout", "grace_attacker",
                     "grace_victim_gw", "handshake_timeout"):
            if getattr(self, name) <= 0:
                raise ProtocolError(f"{name} must be positive")
        if self.disconnect_duration is not None and self.disconnect_duration <= 0:
            raise ProtocolError("disconnect_duration must be positive")
        if self.temp_timeout >= self.timeout:
            raise ProtocolError("T_tmp must be smaller than T")

    @classmethod
    def from_mapping(cls, values: dict) -> "ProtocolParams":
        """Build from ``{"T": "60s", "T_tmp": "600ms", ...}``."""
        names = {
            "T": "timeout",
            "T_tmp": "temp_timeout",
            "grace_attacker": "grace_attacker",
            "grace_victim_gw": "grace_victim_gw",
            "handshake_timeout": "handshake_timeout",
            "disconnect_duration": "disconnect_duration",
        }
        kwargs = {}
        for key, value in values.items():
            if key not in names:
                raise ProtocolError(f"unknown protocol parameter {key!r}")
            if value is None:
                if key != "disconnect_duration":
                    raise ProtocolError(f"{key} must be set")
                kwargs[names[key]] = None
            else:
                kwargs[names[key]] = parse_duration(value)
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {
            "T": self.timeout,
            "T_tmp": self.temp_timeout,
            "grace_attacker": self.grace_attacker,
            "grace_victim_gw": self.grace_victim_gw,
            "handshake_timeout": self.handshake_timeout,
            "disconnect_duration": self.disconnect_duration,
        }


class ProtocolError(Exception):
    """Malformed label, message, duration or parameter set."""
    pass
