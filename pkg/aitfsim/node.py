"""AITF node state machines.

End-hosts play the victim (detect, request, answer verification queries) and
the attacker (react to a TO_ATTACKER request according to their behaviour).
Border routers play the victim's gateway (temporary filter, shadow log,
escalation) and the attacker's gateway (3-way handshake, long-term filter,
grace period, disconnection). Internal routers only forward.

Nodes never touch the event queue directly: every side effect goes through
the ``Network`` they are bound to (``bind``), which routes messages and
packets and fires timers back into ``on_timer``.
"""

import math
import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .contract import RequestPolicer, Verdict
from .core import (NONCE_BITS, Address, AitfMessage, Duration, FlowLabel,
                   MessageKind, NodeId, PacketAction, PacketHeader,
                   ProtocolParams, RequestType, SimTime, DataPacket)
from .logger import Logger
from .tables import (EntryKey, FilterEntry, FilterTable, InstallResult,
                     Origin, ShadowLog)


class HostBehavior(str, Enum):
    COMPLIANT = "compliant"
    IGNORE = "ignore"
    ON_OFF = "on_off"
    SPOOFER = "spoofer"


class RouterBehavior(str, Enum):
    COOPERATIVE = "cooperative"
    IGNORE = "ignore"


class Outcome(str, Enum):
    """What a node did with an event; also the protocol event names."""

    REQUESTED = "requested"
    SCHEDULED = "scheduled"
    DUPLICATE = "duplicate"
    NOT_UNDESIRED = "not-undesired"
    POLICED = "policed"
    INGRESS_REJECTED = "ingress-rejected"
    NO_PATH = "no-path"
    IGNORED = "ignored"
    UNAUTHORIZED = "unauthorized"
    TABLE_FULL = "table-full"
    BUDGET_DENIED = "budget-denied"
    TEMP_INSTALLED = "temp-installed"
    QUERY_SENT = "query-sent"
    REPLIED = "replied"
    SILENT = "silent"
    BAD_NONCE = "bad-nonce"
    INSTALLED = "installed"
    HANDSHAKE_TIMEOUT = "handshake-timeout"
    STOPPED = "stopped"
    PAUSED = "paused"
    DISCONNECTED = "disconnected"
    WATCHING = "watching"
    QUIET = "quiet"
    ESCALATED = "escalated"
    REARMED = "rearmed"
    TAKEN_OVER = "taken-over"
    STALE = "stale"


class TimerKind(str, Enum):
    DETECTION = "detection"
    HANDSHAKE_TIMEOUT = "handshake-timeout"
    GRACE = "grace"
    GRACE_CLEANUP = "grace-cleanup"
    ESCALATION = "escalation"
    FORGE = "forge"


@dataclass(frozen=True)
class Timer:
    kind: TimerKind
    ref: object = None


def node_rng(seed: int, node_id: NodeId) -> random.Random:
    """Per-node generator; string seeding is stable across processes."""
    return random.Random(f"{seed}:{node_id}")


# ---------------------------------------------------------------- end hosts

@dataclass
class OnOffSchedule:
    """Alternating on/off emission starting with an on-phase at ``anchor``."""

    on_ms: Duration
    off_ms: Duration
    anchor: SimTime = 0

    def __post_init__(self):
        if self.on_ms <= 0 or self.off_ms <= 0:
            raise ValueError("on_ms and off_ms must be positive")

    @property
    def period(self) -> Duration:
        return self.on_ms + self.off_ms

    def is_on(self, t: SimTime) -> bool:
        if t < self.anchor:
            return False
        return (t - self.anchor) % self.period < self.on_ms

    def next_on(self, t: SimTime) -> SimTime:
        if t < self.anchor:
            return self.anchor
        if self.is_on(t):
            return t
        return self.anchor + ((t - self.anchor) // self.period + 1) * self.period

    def pause(self, now: SimTime) -> SimTime:
        """Go silent for ``off_ms`` and restart the cycle afterwards."""
        self.anchor = now + self.off_ms
        return self.anchor


@dataclass
class Flow:
    """Constant-rate outbound flow; packet k leaves at start + floor(k*1000/rate)."""

    flow_id: str
    src: NodeId
    header: PacketHeader
    rate_pps: Fraction
    size_bytes: int = 1000
    start: SimTime = 0
    stop: Optional[SimTime] = None
    undesired: bool = False
    group: Optional[str] = None
    schedule: Optional[OnOffSchedule] = None
    stopped_until: Optional[SimTime] = None
    next_index: int = 0
    emitted: int = 0

    def __post_init__(self):
        self.rate_pps = Fraction(self.rate_pps).limit_denominator(10 ** 6)
        if self.rate_pps <= 0:
            raise ValueError(f"flow {self.flow_id}: rate must be positive")
        if self.stop is not None and self.stop <= self.start:
            raise ValueError(f"flow {self.flow_id}: stop must be after start")

    @property
    def label(self) -> FlowLabel:
        return FlowLabel.exact(self.header)

    @property
    def interval_ms(self) -> Fraction:
        return 1000 / self.rate_pps

    def emission_time(self, k: int) -> SimTime:
        return self.start + math.floor(k * 1000 / self.rate_pps)

    def first_index_at_or_after(self, t: SimTime) -> int:
        if t <= self.start:
            return 0
        return math.ceil((t - self.start) * self.rate_pps / 1000)

    def active_from(self, t: SimTime) -> Optional[SimTime]:
        """Earliest time >= t at which the flow may emit, None once it is over."""
        candidate = t
        if self.stopped_until is not None and candidate < self.stopped_until:
            candidate = self.stopped_until
        if self.schedule is not None:
            candidate = self.schedule.next_on(candidate)
        if self.stop is not None and candidate >= self.stop:
            return None
        return candidate


class Classifier:
    """Labels a victim considers undesired.

    Exact labels are looked up by header; wildcard labels are scanned in the
    order they were added.
    """

    def __init__(self, labels: Sequence[FlowLabel] = ()):
        self._exact: Dict[tuple, FlowLabel] = {}
        self._wildcard: List[FlowLabel] = []
        for label in labels:
            self.add(label)

    def add(self, label: FlowLabel) -> None:
        key = label.exact_key()
        if key is not None:
            self._exact.setdefault(key, label)
        elif label not in self._wildcard:
            self._wildcard.append(label)

    def classify(self, header: PacketHeader) -> Optional[FlowLabel]:
        label = self._exact.get(header.key())
        if label is not None:
            return label
        for label in self._wildcard:
            if label.matches(header):
                return label
        return None

    def __contains__(self, label: FlowLabel) -> bool:
        key = label.exact_key()
        if key is not None:
            return key in self._exact
        return label in self._wildcard

    def __len__(self) -> int:
        return len(self._exact) + len(self._wildcard)


@dataclass(frozen=True)
class ForgedRequest:
    """One forged control message a spoofer emits ``count`` times."""

    at: SimTime
    kind: MessageKind
    flow_label: FlowLabel
    destination: NodeId
    requester: NodeId
    req_type: Optional[RequestType] = None
    attack_path: Tuple[NodeId, ...] = ()
    nonce: Optional[int] = None
    count: int = 1
    every: Duration = 1


class EndHost:
    """Victim and attacker roles of an end-host."""

    kind = "host"

    def __init__(self, node_id: NodeId, address: Address, params: ProtocolParams,
                 behavior: HostBehavior = HostBehavior.COMPLIANT,
                 on_off: Optional[Tuple[Duration, Duration]] = None,
                 detection_delay: Duration = 0,
                 forged: Sequence[ForgedRequest] = (), seed: int = 1):
        if behavior == HostBehavior.ON_OFF and on_off is None:
            raise ValueError(f"{node_id}: on_off behaviour needs on_ms/off_ms")
        if detection_delay < 0:
            raise ValueError(f"{node_id}: detection delay must be non-negative")
        self.node_id = node_id
        self.address = address
        self.params = params
        self.behavior = behavior
        self.on_off = on_off
        self.detection_delay = detection_delay
        self.forged = list(forged)
        self.rng = node_rng(seed, node_id)
        self.flows: List[Flow] = []
        self.classifier = Classifier()
        self.requested: Dict[FlowLabel, SimTime] = {}
        self._requested_wildcard: Dict[FlowLabel, None] = {}
        self.pending_requests: Dict[FlowLabel, Tuple[NodeId, ...]] = {}
        self.gateway: Optional[NodeId] = None
        self.policer: Optional[RequestPolicer] = None
        self.net = None
        self.stats: Counter = Counter()
        self.logger = Logger()

    def bind(self, net, gateway: NodeId) -> None:
        self.net = net
        self.gateway = gateway
        self.policer = RequestPolicer(self.node_id, net.book)

    def add_flow(self, flow: Flow) -> None:
        if self.behavior == HostBehavior.ON_OFF:
            flow.schedule = OnOffSchedule(self.on_off[0], self.on_off[1], anchor=flow.start)
        self.flows.append(flow)

    def start(self) -> None:
        for flow in self.flows:
            self.net.schedule_flow_tick(flow, flow.start)
        for index, forged in enumerate(self.forged):
            self.net.set_timer(self.node_id, forged.at, Timer(TimerKind.FORGE, (index, 0)))

    # -- emission

    def on_flow_tick(self, flow: Flow, now: SimTime) -> Optional[DataPacket]:
        active = flow.active_from(now)
        if active is None:
            return None
        if active > now:
            flow.next_index = max(flow.next_index, flow.first_index_at_or_after(active))
            self._schedule_next(flow)
            return None
        packet = DataPacket(header=flow.header, size_bytes=flow.size_bytes,
                            flow_id=flow.flow_id, sent_at=now)
        flow.next_index += 1
        flow.emitted += 1
        self.net.send_packet(self.node_id, packet)
        self._schedule_next(flow)
        return packet

    def _schedule_next(self, flow: Flow) -> None:
        at = flow.emission_time(flow.next_index)
        if flow.stop is None or at < flow.stop:
            self.net.schedule_flow_tick(flow, at)

    # -- victim role

    def _is_outstanding(self, label: FlowLabel, now: SimTime) -> bool:
        if label in self.pending_requests:
            return True
        requested_at = self.requested.get(label)
        return requested_at is not None and requested_at + self.params.timeout > now

    def on_data_packet(self, packet: DataPacket, now: SimTime) -> Optional[AitfMessage]:
        self.stats["packets_received"] += 1
        return self.victim_detect(packet, now)

    def victim_detect(self, packet: DataPacket, now: SimTime) -> Optional[AitfMessage]:
        """Request blocking of an undesired flow, at most once per T per label."""
        label = self.classifier.classify(packet.header)
        if label is None or self.gateway is None:
            return None
        if self._is_outstanding(label, now):
            return None
        path = tuple(packet.recorded_route)
        if self.detection_delay == 0:
            return self._send_filter_request(label, path, now)
        self.pending_requests[label] = path
        self.net.set_timer(self.node_id, now + self.detection_delay, Timer(TimerKind.DETECTION, label))
        return None

    def _send_filter_request(self, label: FlowLabel, path: Tuple[NodeId, ...],
                             now: SimTime) -> AitfMessage:
        msg = AitfMessage(kind=MessageKind.FILTER_REQ, flow_label=label, requester=self.node_id,
                          destination=self.gateway, req_type=RequestType.TO_VICTIM_GW,
                          attack_path=path, round_index=1)
        self.requested[label] = now
        if not label.is_exact():
            self._requested_wildcard[label] = None
        self.stats["requests_sent"] += 1
        self.net.log_event(self.node_id, Outcome.REQUESTED.value, f"{label} via {self.gateway}")
        self.net.send_message(self.node_id, msg)
        return msg

    def _requested_within(self, query: FlowLabel, now: SimTime) -> bool:
        at = self.requested.get(query)
        if at is not None and now < at + self.params.timeout:
            return True
        for label in self._requested_wildcard:
            at = self.requested[label]
            if now < at + self.params.timeout and label.subsumes(query):
                return True
        return False

    def victim_on_verify_query(self, msg: AitfMessage, now: SimTime) -> Optional[AitfMessage]:
        """Answer with the same label and nonce only for flows this host asked to block."""
        if not self._requested_within(msg.flow_label, now):
            self.stats["queries_unanswered"] += 1
            return None
        reply = AitfMessage(kind=MessageKind.VERIFY_REPLY, flow_label=msg.flow_label,
                            requester=self.node_id, destination=msg.requester, nonce=msg.nonce)
        self.stats["replies_sent"] += 1
        self.net.send_message(self.node_id, reply)
        return reply

    # -- attacker role

    def attacker_on_filter_req(self, msg: AitfMessage, from_neighbor: NodeId,
                               now: SimTime) -> Outcome:
        if msg.requester != from_neighbor or from_neighbor != self.gateway:
            self.stats["requests_unauthorized"] += 1
            return Outcome.UNAUTHORIZED
        if self.policer.admit(from_neighbor, now) == Verdict.DROP:
            return Outcome.POLICED
        matching = [f for f in self.flows if msg.flow_label.matches(f.header)]
        if self.behavior == HostBehavior.COMPLIANT:
            for flow in matching:
                until = now + self.params.timeout
                flow.stopped_until = max(flow.stopped_until or 0, until)
            self.net.log_event(self.node_id, Outcome.STOPPED.value, f"{msg.flow_label} flows={len(matching)}")
            return Outcome.STOPPED
        if self.behavior == HostBehavior.ON_OFF:
            for flow in matching:
                flow.schedule.pause(now)
            self.net.log_event(self.node_id, Outcome.PAUSED.value,
                               f"{msg.flow_label} until={now + self.on_off[1]}")
            return Outcome.PAUSED
        self.net.log_event(self.node_id, Outcome.IGNORED.value, str(msg.flow_label))
        return Outcome.IGNORED

    # -- dispatch

    def on_message(self, msg: AitfMessage, from_neighbor: NodeId, now: SimTime):
        self.stats[f"received_{msg.kind.value.lower()}"] += 1
        if msg.kind == MessageKind.VERIFY_QUERY:
            return self.victim_on_verify_query(msg, now)
        if msg.kind == MessageKind.FILTER_REQ and msg.req_type == RequestType.TO_ATTACKER:
            return self.attacker_on_filter_req(msg, from_neighbor, now)
        return Outcome.IGNORED

    def on_timer(self, timer: Timer, now: SimTime):
        if timer.kind == TimerKind.DETECTION:
            label = timer.ref
            path = self.pending_requests.pop(label, None)
            if path is not None:
                return self._send_filter_request(label, path, now)
            return None
        if timer.kind == TimerKind.FORGE:
            return self._emit_forged(timer.ref, now)
        return None

    def _emit_forged(self, ref: Tuple[int, int], now: SimTime) -> AitfMessage:
        index, sent = ref
        forged = self.forged[index]
        nonce = forged.nonce
        if forged.kind != MessageKind.FILTER_REQ and nonce is None:
            nonce = self.rng.getrandbits(NONCE_BITS)
        msg = AitfMessage(kind=forged.kind, flow_label=forged.flow_label, requester=forged.requester,
                          destination=forged.destination, req_type=forged.req_type,
                          nonce=nonce, attack_path=forged.attack_path)
        self.stats["forged_sent"] += 1
        self.net.send_message(self.node_id, msg)
        if sent + 1 < forged.count:
            self.net.set_timer(self.node_id, now + forged.every, Timer(TimerKind.FORGE, (index, sent + 1)))
        return msg


# ---------------------------------------------------------------- routers

@dataclass(frozen=True)
class AttackPathView:
    """Round arithmetic over a recorded route, attacker end first.

    In round k the attacker-side participant is the k-th node from the
    attacker end and the victim-side one the k-th from the victim end. When
    both positions coincide the gateway is shared.
    """

    path: Tuple[NodeId, ...]

    def __len__(self) -> int:
        return len(self.path)

    def has_round(self, k: int) -> bool:
        return 1 <= k and k - 1 <= len(self.path) - k

    def attacker_side(self, k: int) -> NodeId:
        return self.path[k - 1]

    def victim_side(self, k: int) -> NodeId:
        return self.path[-k]

    def toward_attacker(self, k: int) -> Optional[NodeId]:
        """The node the round-k attacker's gateway asks to stop the flow."""
        return self.path[k - 2] if k >= 2 else None

    def _index(self, node_id: NodeId) -> Optional[int]:
        try:
            return self.path.index(node_id)
        except ValueError:
            return None

    def victim_round(self, node_id: NodeId) -> Optional[int]:
        i = self._index(node_id)
        if i is None:
            return None
        k = len(self.path) - i
        return k if self.has_round(k) else None

    def attacker_round(self, node_id: NodeId) -> Optional[int]:
        i = self._index(node_id)
        if i is None:
            return None
        k = i + 1
        return k if self.has_round(k) else None

    def beyond_victim_side(self, k: int) -> Optional[NodeId]:
        """Next node toward the attacker from the round-k victim-side node."""
        i = len(self.path) - k - 1
        return self.path[i] if i >= 0 else None


@dataclass
class PendingHandshake:
    label: FlowLabel
    requester: NodeId
    attack_path: Tuple[NodeId, ...]
    round_index: int
    sent_at: SimTime
    nonce: int

    @property
    def key(self) -> EntryKey:
        return (self.label, self.requester)


@dataclass
class EscalationWatch:
    label: FlowLabel
    requester: NodeId
    view: AttackPathView
    round_index: int
    entry: FilterEntry

    @property
    def key(self) -> EntryKey:
        return (self.label, self.requester)


@dataclass
class GraceWatch:
    entry_key: EntryKey
    neighbor: NodeId
    deadline: SimTime
    last_seen: Optional[SimTime] = None
    overdue: bool = False

    @property
    def key(self) -> Tuple[EntryKey, NodeId]:
        return (self.entry_key, self.neighbor)


class BorderRouter:
    """Victim's-gateway and attacker's-gateway roles of an AITF border router."""

    kind = "border"

    def __init__(self, node_id: NodeId, params: ProtocolParams,
                 behavior: RouterBehavior = RouterBehavior.COOPERATIVE,
                 filter_capacity: int = 10000, shadow_capacity: int = 100000,
                 seed: int = 1):
        self.node_id = node_id
        self.params = params
        self.behavior = behavior
        self.filters = FilterTable(filter_capacity, owner=node_id)
        self.shadow = ShadowLog(shadow_capacity, owner=node_id)
        self.rng = node_rng(seed, node_id)
        self.hosts: Dict[NodeId, Address] = {}
        self.pending_handshakes: Dict[int, PendingHandshake] = {}
        self._pending_by_key: Dict[EntryKey, int] = {}
        self.escalation_watches: Dict[EntryKey, EscalationWatch] = {}
        self.grace_watches: Dict[Tuple[EntryKey, NodeId], GraceWatch] = {}
        self.disconnected: Dict[NodeId, Optional[SimTime]] = {}
        self.policer: Optional[RequestPolicer] = None
        self.net = None
        self.stats: Counter = Counter()
        self.logger = Logger()

    def bind(self, net, hosts: Dict[NodeId, Address]) -> None:
        self.net = net
        self.hosts = dict(hosts)
        self.policer = RequestPolicer(self.node_id, net.book)

    @property
    def cooperative(self) -> bool:
        return self.behavior == RouterBehavior.COOPERATIVE

    def _send(self, msg: AitfMessage) -> None:
        if msg.kind == MessageKind.FILTER_REQ:
            self.stats["requests_sent"] += 1
        self.net.send_message(self.node_id, msg)

    def _event(self, outcome: Outcome, detail: str) -> Outcome:
        self.net.log_event(self.node_id, outcome.value, detail)
        return outcome

    # -- transit checks

    def admit_transit(self, msg: AitfMessage, from_neighbor: NodeId) -> bool:
        """Drop control messages an attached host sends in someone else's name."""
        if from_neighbor in self.hosts and msg.requester != from_neighbor:
            self.stats["spoofed_dropped"] += 1
            return False
        return True

    def ingress_verify(self, msg: AitfMessage, from_neighbor: NodeId) -> bool:
        """The requester must sit behind the edge this router uses to reach the label's destination."""
        return self.net.next_hop_to_address(self.node_id, msg.flow_label.dst) == from_neighbor

    def is_disconnected(self, neighbor: NodeId, now: SimTime) -> bool:
        if neighbor not in self.disconnected:
            return False
        until = self.disconnected[neighbor]
        return until is None or now < until

    def disconnect(self, neighbor: NodeId, now: SimTime, reason: str) -> Outcome:
        if self.is_disconnected(neighbor, now):
            return Outcome.DUPLICATE
        duration = self.params.disconnect_duration
        until = None if duration is None else now + duration
        self.disconnected[neighbor] = until
        self.stats["disconnections"] += 1
        self.logger.info(f"{self.node_id} disconnects from {neighbor} at {now}ms ({reason})")
        self.net.on_disconnect(self.node_id, neighbor, now, until, reason)
        return Outcome.DISCONNECTED

    # -- data path

    def on_data_packet(self, packet: DataPacket, from_neighbor: NodeId, now: SimTime) -> PacketAction:
        if self.is_disconnected(from_neighbor, now):
            self.stats["dropped_disconnected"] += 1
            return PacketAction.DROP
        header = packet.header
        matched = self.filters.match_entries(header, now)
        if matched:
            self.stats["dropped_filtered"] += 1
            if self.grace_watches:
                for entry in matched:
                    self._grace_evidence(entry, from_neighbor, now)
            return PacketAction.DROP
        if self.cooperative and len(self.shadow):
            hit = self.shadow.lookup(header, now)
            if hit is not None:
                self._on_shadow_hit(hit, now)
                self.stats["dropped_filtered"] += 1
                return PacketAction.DROP
        packet.record(self.node_id)
        return PacketAction.FORWARD

    def _on_shadow_hit(self, hit, now: SimTime) -> None:
        """A logged flow is back without a live filter: the other side reneged."""
        self.stats["onoff_detected"] += 1
        origin = Origin(hit.requester, hit.attack_path)
        self.filters.install(hit.label, now, self.params.temp_timeout, origin, temporary=True)
        self._event(Outcome.TEMP_INSTALLED, f"{hit.label} shadow-hit round={hit.round_index}")
        self._escalate(hit.label, AttackPathView(hit.attack_path), hit.round_index, now)

    def _grace_evidence(self, entry: FilterEntry, from_neighbor: NodeId, now: SimTime) -> None:
        watch = self.grace_watches.get((entry.key, from_neighbor))
        if watch is None:
            return
        watch.last_seen = now
        if watch.overdue:
            del self.grace_watches[watch.key]
            self.disconnect(from_neighbor, now, f"still sending {entry.label} after grace")

    # -- message dispatch

    def on_message(self, msg: AitfMessage, from_neighbor: NodeId, now: SimTime):
        self.stats[f"received_{msg.kind.value.lower()}"] += 1
        if msg.kind == MessageKind.FILTER_REQ:
            if not self.cooperative:
                self.stats["requests_ignored"] += 1
                return self._event(Outcome.IGNORED, f"{msg.req_type.value} {msg.flow_label}")
            if msg.req_type == RequestType.TO_VICTIM_GW:
                return self.gw_on_filter_req_as_victim_gw(msg, from_neighbor, now)
            if msg.req_type == RequestType.TO_ATTACKER_GW:
                return self.gw_on_filter_req_as_attacker_gw(msg, from_neighbor, now)
            return self.gw_on_filter_req_to_attacker(msg, from_neighbor, now)
        if msg.kind == MessageKind.VERIFY_REPLY:
            return self.gw_on_verify_reply(msg, from_neighbor, now)
        return Outcome.IGNORED

    def on_timer(self, timer: Timer, now: SimTime):
        if timer.kind == TimerKind.ESCALATION:
            return self.gw_escalation_check(timer.ref, now)
        if timer.kind == TimerKind.GRACE:
            return self.gw_grace_check(timer.ref, now)
        if timer.kind == TimerKind.GRACE_CLEANUP:
            watch = timer.ref
            if self.grace_watches.get(watch.key) is watch:
                del self.grace_watches[watch.key]
            return None
        if timer.kind == TimerKind.HANDSHAKE_TIMEOUT:
            return self._handshake_timeout(timer.ref, now)
        return None

    # -- victim's gateway

    def gw_on_filter_req_as_victim_gw(self, msg: AitfMessage, from_neighbor: NodeId,
                                      now: SimTime) -> Outcome:
        if self.policer.admit(from_neighbor, now) == Verdict.DROP:
            self.logger.debug(f"{self.node_id}: policed request from {from_neighbor}")
            return Outcome.POLICED
        if not self.ingress_verify(msg, from_neighbor):
            self.stats["ingress_rejected"] += 1
            return self._event(Outcome.INGRESS_REJECTED, f"{msg.flow_label} from {from_neighbor}")
        view = AttackPathView(msg.attack_path)
        k = view.victim_round(self.node_id)
        if k is None:
            self.stats["no_path"] += 1
            return Outcome.NO_PATH
        label = msg.flow_label
        result = self.filters.install(label, now, self.params.temp_timeout,
                                      Origin(msg.requester, view.path), temporary=True)
        if result == InstallResult.TABLE_FULL:
            return self._event(Outcome.TABLE_FULL, str(label))
        self.shadow.record(label, msg.requester, now, self.params.timeout,
                           attack_path=view.path, round_index=k)
        self.net.note_round(label, k)
        self._event(Outcome.TEMP_INSTALLED, f"{label} round={k}")
        target = view.attacker_side(k)
        if target == self.node_id:
            self._satisfy(label, msg.requester, view, k, now)
        else:
            self._send(AitfMessage(kind=MessageKind.FILTER_REQ, flow_label=label,
                                   requester=self.node_id, destination=target,
                                   req_type=RequestType.TO_ATTACKER_GW,
                                   attack_path=view.path, round_index=k))
        self._arm_escalation(label, msg.requester, view, k)
        return Outcome.TEMP_INSTALLED

    def _arm_escalation(self, label: FlowLabel, requester: NodeId, view: AttackPathView,
                        k: int) -> None:
        entry = self.filters.peek(label, requester)
        watch = EscalationWatch(label, requester, view, k, entry)
        self.escalation_watches[watch.key] = watch
        self.net.set_timer(self.node_id, entry.expires_at, Timer(TimerKind.ESCALATION, watch))

    def gw_escalation_check(self, watch: EscalationWatch, now: SimTime) -> Outcome:
        """At temp-filter expiry, judge the attacker side by the filter's own hits."""
        if self.escalation_watches.get(watch.key) is not watch:
            return Outcome.STALE
        entry = watch.entry
        current = self.filters.peek(watch.label, watch.requester)
        if current is not None and current is not entry:
            del self.escalation_watches[watch.key]
            return Outcome.STALE
        if not entry.temporary:
            del self.escalation_watches[watch.key]
            return Outcome.TAKEN_OVER
        if entry.expires_at > now:
            self.net.set_timer(self.node_id, entry.expires_at, Timer(TimerKind.ESCALATION, watch))
            return Outcome.REARMED
        del self.escalation_watches[watch.key]
        threshold = entry.expires_at - self.params.grace_victim_gw
        if entry.last_matched_at is not None and entry.last_matched_at >= threshold:
            self.filters.install(watch.label, now, self.params.temp_timeout, entry.origin,
                                 temporary=True)
            return self._escalate(watch.label, watch.view, watch.round_index, now)
        self.filters.remove(watch.label, watch.requester)
        return self._event(Outcome.QUIET, f"{watch.label} round={watch.round_index}")

    def _escalate(self, label: FlowLabel, view: AttackPathView, k: int, now: SimTime) -> Outcome:
        """Hand the request to our own upstream gateway, or cut the attacker side off."""
        if view.has_round(k + 1):
            upstream = view.victim_side(k + 1)
            self.stats["escalations"] += 1
            self._send(AitfMessage(kind=MessageKind.FILTER_REQ, flow_label=label,
                                   requester=self.node_id, destination=upstream,
                                   req_type=RequestType.TO_VICTIM_GW,
                                   attack_path=view.path, round_index=k + 1))
            self.net.on_escalation(self.node_id, label, k + 1, upstream)
            return self._event(Outcome.ESCALATED, f"{label} round={k + 1} to={upstream}")
        toward = view.beyond_victim_side(k)
        if toward is not None:
            neighbors = [self.net.next_hop(self.node_id, toward)]
        else:
            neighbors = [h for h, addr in self.hosts.items() if label.src is None or addr in label.src]
        outcome = Outcome.NO_PATH
        for neighbor in neighbors:
            if neighbor is not None:
                outcome = self.disconnect(neighbor, now, f"attack side keeps sending {label}")
        return outcome

    # -- attacker's gateway

    def gw_on_filter_req_as_attacker_gw(self, msg: AitfMessage, from_neighbor: NodeId,
                                        now: SimTime) -> Outcome:
        if self.policer.admit(from_neighbor, now) == Verdict.DROP:
            return Outcome.POLICED
        view = AttackPathView(msg.attack_path)
        k = view.attacker_round(self.node_id)
        if k is None:
            self.stats["no_path"] += 1
            return Outcome.NO_PATH
        label = msg.flow_label
        key = (label, msg.requester)
        if key in self._pending_by_key or self.filters.live_for_label(label, now):
            self.stats["duplicates"] += 1
            return Outcome.DUPLICATE
        victim = self.net.owner_of(label.dst)
        if victim is None:
            self.stats["no_path"] += 1
            return Outcome.NO_PATH
        nonce = self.rng.getrandbits(NONCE_BITS)
        while nonce in self.pending_handshakes:
            nonce = self.rng.getrandbits(NONCE_BITS)
        pending = PendingHandshake(label, msg.requester, view.path, k, now, nonce)
        self.pending_handshakes[nonce] = pending
        self._pending_by_key[key] = nonce
        self.stats["handshakes_started"] += 1
        self._send(AitfMessage(kind=MessageKind.VERIFY_QUERY, flow_label=label,
                               requester=self.node_id, destination=victim, nonce=nonce))
        self.net.set_timer(self.node_id, now + self.params.handshake_timeout,
                           Timer(TimerKind.HANDSHAKE_TIMEOUT, nonce))
        return self._event(Outcome.QUERY_SENT, f"{label} to={victim} round={k}")

    def _handshake_timeout(self, nonce: int, now: SimTime) -> Optional[Outcome]:
        pending = self.pending_handshakes.pop(nonce, None)
        if pending is None:
            return None
        self._pending_by_key.pop(pending.key, None)
        self.stats["handshakes_timed_out"] += 1
        return self._event(Outcome.HANDSHAKE_TIMEOUT, str(pending.label))

    def gw_on_verify_reply(self, msg: AitfMessage, from_neighbor: NodeId, now: SimTime) -> Outcome:
        pending = self.pending_handshakes.get(msg.nonce)
        if (pending is None or pending.label != msg.flow_label
                or msg.requester != self.net.owner_of(msg.flow_label.dst)):
            self.stats["bad_nonce"] += 1
            return Outcome.BAD_NONCE
        del self.pending_handshakes[msg.nonce]
        self._pending_by_key.pop(pending.key, None)
        self.stats["handshakes_completed"] += 1
        return self._satisfy(pending.label, pending.requester, AttackPathView(pending.attack_path),
                             pending.round_index, now)

    def _attacker_targets(self, label: FlowLabel, view: AttackPathView,
                          k: int) -> List[Tuple[NodeId, NodeId]]:
        """(node asked to stop, neighbour edge the request leaves on)."""
        toward = view.toward_attacker(k)
        if toward is None:
            return [(h, h) for h, addr in self.hosts.items()
                    if label.src is None or addr in label.src]
        edge = self.net.next_hop(self.node_id, toward)
        return [(toward, edge)] if edge is not None else []

    def _satisfy(self, label: FlowLabel, requester: NodeId, view: AttackPathView, k: int,
                 now: SimTime) -> Outcome:
        """Long-term filter for T plus a TO_ATTACKER request within the R_2 budget."""
        targets = self._attacker_targets(label, view, k)
        allowed = [(t, e) for t, e in targets if self.policer.budget(e, now) == Verdict.ACCEPT]
        if targets and not allowed:
            self.stats["budget_denied"] += 1
            return self._event(Outcome.BUDGET_DENIED, f"{label} round={k}")
        group = allowed[0][1] if allowed else None
        result = self.filters.install(label, now, self.params.timeout, Origin(requester, view.path),
                                      group=group)
        if result == InstallResult.TABLE_FULL:
            return self._event(Outcome.TABLE_FULL, str(label))
        self.net.note_round(label, k)
        entry = self.filters.peek(label, requester)
        for target, edge in allowed:
            self._send(AitfMessage(kind=MessageKind.FILTER_REQ, flow_label=label,
                                   requester=self.node_id, destination=target,
                                   req_type=RequestType.TO_ATTACKER,
                                   attack_path=view.path, round_index=k))
            watch = GraceWatch(entry.key, edge, now + self.params.grace_attacker)
            self.grace_watches[watch.key] = watch
            self.net.set_timer(self.node_id, watch.deadline, Timer(TimerKind.GRACE, watch))
        return self._event(Outcome.INSTALLED, f"{label} round={k} group={group}")

    def gw_grace_check(self, watch: GraceWatch, now: SimTime) -> Outcome:
        """Disconnect an edge that keeps sending past the grace deadline."""
        if self.grace_watches.get(watch.key) is not watch:
            return Outcome.STALE
        if watch.last_seen is not None and watch.last_seen >= watch.deadline:
            del self.grace_watches[watch.key]
            return self.disconnect(watch.neighbor, now, "did not stop within grace period")
        watch.overdue = True
        entry = self.filters.peek(*watch.entry_key)
        if entry is None or not entry.is_live(now):
            del self.grace_watches[watch.key]
        else:
            self.net.set_timer(self.node_id, entry.expires_at, Timer(TimerKind.GRACE_CLEANUP, watch))
        return Outcome.WATCHING

    # -- attacker role in escalated rounds

    def gw_on_filter_req_to_attacker(self, msg: AitfMessage, from_neighbor: NodeId,
                                     now: SimTime) -> Outcome:
        if self.net.next_hop(self.node_id, msg.requester) != from_neighbor:
            self.stats["requests_unauthorized"] += 1
            return Outcome.UNAUTHORIZED
        if self.policer.admit(from_neighbor, now) == Verdict.DROP:
            return Outcome.POLICED
        result = self.filters.install(msg.flow_label, now, self.params.timeout,
                                      Origin(msg.requester, msg.attack_path), group=from_neighbor)
        if result == InstallResult.TABLE_FULL:
            return self._event(Outcome.TABLE_FULL, str(msg.flow_label))
        return self._event(Outcome.INSTALLED, f"{msg.flow_label} for={msg.requester}")


class InternalRouter:
    """Plain forwarding router; takes no part in the protocol."""

    kind = "router"

    def __init__(self, node_id: NodeId):
        self.node_id = node_id
        self.net = None
        self.stats: Counter = Counter()

    def bind(self, net) -> None:
        self.net = net

    def on_message(self, msg: AitfMessage, from_neighbor: NodeId, now: SimTime):
        self.stats["messages_ignored"] += 1
        return Outcome.IGNORED

    def on_timer(self, timer: Timer, now: SimTime):
        return None
