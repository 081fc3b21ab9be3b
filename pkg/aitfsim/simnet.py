"""Deterministic discrete-event network simulator.

One virtual clock in integer milliseconds and one event heap ordered by
``(fire_at, seq)``. Payloads (data packets and AITF messages) travel hop by
hop over links with fixed one-way delays; every border router on the way
sees data packets, and only the addressed node handles a control message.
"""

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import (Callable, Dict, Iterable, List, NamedTuple, Optional,
                    TextIO, Tuple)

from .contract import ContractBook
from .core import (Address, AitfMessage, DataPacket, Duration, FlowLabel,
                   NodeId, PacketAction, SimTime)
from .logger import Logger
from .node import BorderRouter, EndHost, Flow, Timer


class EventKind(str, Enum):
    DELIVER = "DELIVER"
    TIMER = "TIMER"
    FLOW_TICK = "FLOW_TICK"


@dataclass
class Event:
    kind: EventKind
    node: NodeId
    payload: object = None
    via: Optional[NodeId] = None
    fire_at: SimTime = 0
    seq: int = 0


class Simulator:
    """Event heap plus the virtual clock."""

    def __init__(self, handler: Callable[[Event], None]):
        self.handler = handler
        self.now: SimTime = 0
        self.executed = 0
        self._queue: List[Tuple[SimTime, int, Event]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._queue)

    def schedule(self, event: Event, fire_at: SimTime) -> Event:
        if fire_at < self.now:
            raise SimulationError(f"cannot schedule {event.kind.value} at {fire_at}ms, clock is at {self.now}ms")
        event.fire_at = fire_at
        event.seq = next(self._seq)
        heapq.heappush(self._queue, (fire_at, event.seq, event))
        return event

    def run_until(self, t_end: SimTime) -> int:
        """Execute every event with ``fire_at <= t_end``; returns how many ran."""
        count = 0
        while self._queue and self._queue[0][0] <= t_end:
            fire_at, _, event = heapq.heappop(self._queue)
            self.now = fire_at
            self.handler(event)
            count += 1
        self.now = max(self.now, t_end)
        self.executed += count
        return count


@dataclass
class Link:
    a: NodeId
    b: NodeId
    delay: Duration
    capacity: Optional[int] = None
    _next_free: Dict[NodeId, Fraction] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.delay < 0:
            raise SimulationError(f"link {self.a}-{self.b}: delay must be non-negative")
        if self.capacity is not None and self.capacity <= 0:
            raise SimulationError(f"link {self.a}-{self.b}: capacity must be positive")

    def other(self, node: NodeId) -> NodeId:
        return self.b if node == self.a else self.a

    def transmit(self, sender: NodeId, now: SimTime) -> SimTime:
        """Arrival time at the far end; FIFO serialization per direction when capped."""
        if self.capacity is None:
            return now + self.delay
        depart = max(Fraction(now), self._next_free.get(sender, Fraction(0)))
        self._next_free[sender] = depart + Fraction(1000, self.capacity)
        return math.ceil(depart) + self.delay


class Topology:
    """Nodes, links and static shortest-delay routes (ties go to the lowest node ids)."""

    def __init__(self):
        self.kinds: Dict[NodeId, str] = {}
        self.addresses: Dict[NodeId, Address] = {}
        self._owners: Dict[Address, NodeId] = {}
        self._adjacent: Dict[NodeId, Dict[NodeId, Link]] = {}
        self._next_hop: Dict[NodeId, Dict[NodeId, NodeId]] = {}
        self._paths: Dict[NodeId, Dict[NodeId, Tuple[NodeId, ...]]] = {}

    def add_node(self, node_id: NodeId, kind: str, address: Optional[Address] = None) -> None:
        if node_id in self.kinds:
            raise SimulationError(f"duplicate node {node_id}")
        self.kinds[node_id] = kind
        self._adjacent[node_id] = {}
        if address is not None:
            if address in self._owners:
                raise SimulationError(f"address {address} used by {self._owners[address]} and {node_id}")
            self.addresses[node_id] = address
            self._owners[address] = node_id

    def add_link(self, a: NodeId, b: NodeId, delay: Duration, capacity: Optional[int] = None) -> Link:
        for n in (a, b):
            if n not in self.kinds:
                raise SimulationError(f"link endpoint {n} is not a node")
        if a == b or b in self._adjacent[a]:
            raise SimulationError(f"invalid or duplicate link {a}-{b}")
        link = Link(a, b, delay, capacity)
        self._adjacent[a][b] = link
        self._adjacent[b][a] = link
        return link

    @property
    def links(self) -> List[Link]:
        seen = {}
        for a in sorted(self._adjacent):
            for b in sorted(self._adjacent[a]):
                link = self._adjacent[a][b]
                seen.setdefault(id(link), link)
        return list(seen.values())

    def neighbors(self, node: NodeId) -> List[NodeId]:
        return sorted(self._adjacent[node])

    def link(self, a: NodeId, b: NodeId) -> Optional[Link]:
        return self._adjacent.get(a, {}).get(b)

    def owner_of(self, address: Address) -> Optional[NodeId]:
        return self._owners.get(address)

    def compute_routes(self) -> None:
        """All-pairs Dijkstra over (delay, path); the path tuple breaks ties."""
        for src in sorted(self.kinds):
            settled: Dict[NodeId, Tuple[NodeId, ...]] = {}
            heap: List[Tuple[int, Tuple[NodeId, ...]]] = [(0, (src,))]
            while heap:
                dist, path = heapq.heappop(heap)
                node = path[-1]
                if node in settled:
                    continue
                settled[node] = path
                # hosts are never transit
                if node != src and self.kinds[node] == "host":
                    continue
                for nb, link in self._adjacent[node].items():
                    if nb not in settled:
                        heapq.heappush(heap, (dist + link.delay, path + (nb,)))
            missing = set(self.kinds) - set(settled)
            if missing:
                raise SimulationError(f"topology is not connected: {src} cannot reach {', '.join(sorted(missing))}")
            self._paths[src] = settled
            self._next_hop[src] = {dst: p[1] for dst, p in settled.items() if len(p) > 1}

    def next_hop(self, src: NodeId, dst: NodeId) -> Optional[NodeId]:
        return self._next_hop.get(src, {}).get(dst)

    def path(self, src: NodeId, dst: NodeId) -> Tuple[NodeId, ...]:
        return self._paths.get(src, {}).get(dst, ())

    def delay(self, src: NodeId, dst: NodeId) -> Duration:
        path = self.path(src, dst)
        return sum(self._adjacent[a][b].delay for a, b in zip(path, path[1:]))

    def border_routers_on_path(self, src: NodeId, dst: NodeId) -> List[NodeId]:
        return [n for n in self.path(src, dst) if self.kinds[n] == "border"]


class ProtocolEvent(NamedTuple):
    time: SimTime
    node: NodeId
    event: str
    detail: str

    def line(self) -> str:
        return f"{self.time:>9} {self.node:<10} {self.event:<18} {self.detail}".rstrip()


class Disconnection(NamedTuple):
    time: SimTime
    node: NodeId
    neighbor: NodeId
    until: Optional[SimTime]
    reason: str


class Tracer:
    """Line-oriented event trace; packet lines only when asked for."""

    def __init__(self, packets: bool = False):
        self.packets = packets
        self.lines: List[str] = []

    def event(self, event: ProtocolEvent) -> None:
        self.lines.append(event.line())

    def packet(self, now: SimTime, node: NodeId, action: str, packet: DataPacket) -> None:
        if self.packets:
            self.lines.append(f"{now:>9} {node:<10} {action:<18} {packet.flow_id} {packet.header}")

    def dump(self, stream: TextIO) -> None:
        for line in self.lines:
            stream.write(line + "\n")


@dataclass
class FlowStats:
    flow: Flow
    emitted_at: List[SimTime] = field(default_factory=list)
    delivered: List[Tuple[SimTime, SimTime]] = field(default_factory=list)
    dropped: Counter = field(default_factory=Counter)
    in_flight: int = 0

    @property
    def emitted(self) -> int:
        return len(self.emitted_at)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def conserved(self) -> bool:
        return self.emitted == len(self.delivered) + self.dropped_total + self.in_flight


class Network:
    """Binds node state machines to a topology and moves their traffic."""

    def __init__(self, topology: Topology, book: ContractBook, seed: int = 1,
                 tracer: Optional[Tracer] = None, audit: bool = False):
        self.topology = topology
        self.book = book
        self.seed = seed
        self.tracer = tracer
        self.audit = audit
        self.sim = Simulator(self._dispatch)
        self.nodes: Dict[NodeId, object] = {}
        self.flow_stats: Dict[str, FlowStats] = {}
        self.events: List[ProtocolEvent] = []
        self.disconnections: List[Disconnection] = []
        self.escalations: List[Tuple[SimTime, NodeId, str, int, NodeId]] = []
        self.rounds: Dict[FlowLabel, int] = {}
        self.violations: List[str] = []
        self.message_stats: Counter = Counter()
        self.logger = Logger()

    @property
    def now(self) -> SimTime:
        return self.sim.now

    # -- construction

    def add_node(self, node) -> None:
        if node.node_id not in self.topology.kinds:
            raise SimulationError(f"{node.node_id} is not in the topology")
        self.nodes[node.node_id] = node

    def bind_all(self) -> None:
        self.topology.compute_routes()
        for node_id, node in self.nodes.items():
            if isinstance(node, EndHost):
                neighbors = self.topology.neighbors(node_id)
                if len(neighbors) != 1:
                    raise SimulationError(f"host {node_id} must have exactly one link")
                node.bind(self, neighbors[0])
            elif isinstance(node, BorderRouter):
                hosts = {n: self.topology.addresses[n] for n in self.topology.neighbors(node_id)
                         if self.topology.kinds[n] == "host"}
                node.bind(self, hosts)
            else:
                node.bind(self)
        missing = set(self.topology.kinds) - set(self.nodes)
        if missing:
            raise SimulationError(f"no state machine for {', '.join(sorted(missing))}")

    def add_flow(self, flow: Flow) -> None:
        host = self.nodes.get(flow.src)
        if not isinstance(host, EndHost):
            raise SimulationError(f"flow {flow.flow_id}: source {flow.src} is not a host")
        if self.topology.owner_of(flow.header.dst) is None:
            raise SimulationError(f"flow {flow.flow_id}: no host owns {flow.header.dst}")
        if flow.flow_id in self.flow_stats:
            raise SimulationError(f"duplicate flow id {flow.flow_id}")
        self.flow_stats[flow.flow_id] = FlowStats(flow)
        host.add_flow(flow)

    def start(self) -> None:
        for node in self.nodes.values():
            if isinstance(node, EndHost):
                node.start()

    def run(self, until: SimTime) -> int:
        executed = self.sim.run_until(until)
        self.logger.debug(f"ran {executed} events up to {until}ms")
        return executed

    # -- services used by nodes

    def set_timer(self, node_id: NodeId, at: SimTime, timer: Timer) -> None:
        self.sim.schedule(Event(EventKind.TIMER, node_id, timer), at)

    def schedule_flow_tick(self, flow: Flow, at: SimTime) -> None:
        self.sim.schedule(Event(EventKind.FLOW_TICK, flow.src, flow), at)

    def next_hop(self, node_id: NodeId, target: NodeId) -> Optional[NodeId]:
        return self.topology.next_hop(node_id, target)

    def next_hop_to_address(self, node_id: NodeId, address: Address) -> Optional[NodeId]:
        owner = self.topology.owner_of(address)
        if owner is None:
            return None
        return self.topology.next_hop(node_id, owner)

    def owner_of(self, address: Address) -> Optional[NodeId]:
        return self.topology.owner_of(address)

    def log_event(self, node_id: NodeId, event: str, detail: str) -> None:
        record = ProtocolEvent(self.now, node_id, event, detail)
        self.events.append(record)
        if self.tracer is not None:
            self.tracer.event(record)

    def note_round(self, label: FlowLabel, k: int) -> None:
        if k > self.rounds.get(label, 0):
            self.rounds[label] = k

    def on_escalation(self, node_id: NodeId, label: FlowLabel, k: int, upstream: NodeId) -> None:
        self.escalations.append((self.now, node_id, str(label), k, upstream))

    def on_disconnect(self, node_id: NodeId, neighbor: NodeId, now: SimTime,
                      until: Optional[SimTime], reason: str) -> None:
        self.disconnections.append(Disconnection(now, node_id, neighbor, until, reason))
        self.log_event(node_id, "disconnected", f"{neighbor} until={'end' if until is None else until}")

    def edge_down(self, a: NodeId, b: NodeId, now: SimTime) -> bool:
        for x, y in ((a, b), (b, a)):
            node = self.nodes.get(x)
            if isinstance(node, BorderRouter) and node.is_disconnected(y, now):
                return True
        return False

    def send_message(self, src: NodeId, msg: AitfMessage) -> None:
        self.message_stats[f"sent_{msg.kind.value.lower()}"] += 1
        self._route(src, msg.destination, msg)

    def send_packet(self, src: NodeId, packet: DataPacket) -> None:
        stats = self.flow_stats[packet.flow_id]
        stats.emitted_at.append(self.now)
        stats.in_flight += 1
        dst = self.topology.owner_of(packet.header.dst)
        self._route(src, dst, packet)

    # -- transport

    def _route(self, at: NodeId, dst: Optional[NodeId], payload) -> None:
        nxt = self.topology.next_hop(at, dst) if dst is not None else None
        if nxt is None:
            self._drop(payload, at, "no-route")
            return
        if self.edge_down(at, nxt, self.now):
            self._drop(payload, at, "disconnected")
            return
        arrival = self.topology.link(at, nxt).transmit(at, self.now)
        self.sim.schedule(Event(EventKind.DELIVER, nxt, payload, via=at), arrival)

    def _drop(self, payload, at: NodeId, reason: str) -> None:
        if isinstance(payload, DataPacket):
            stats = self.flow_stats[payload.flow_id]
            stats.dropped[reason] += 1
            stats.in_flight -= 1
            if self.tracer is not None:
                self.tracer.packet(self.now, at, f"drop-{reason}", payload)
        else:
            self.message_stats[f"dropped_{reason}"] += 1

    def _dispatch(self, event: Event) -> None:
        node = self.nodes[event.node]
        now = self.sim.now
        if event.kind == EventKind.DELIVER:
            if isinstance(event.payload, DataPacket):
                self._deliver_packet(event.node, node, event.payload, event.via, now)
            else:
                self._deliver_message(event.node, node, event.payload, event.via, now)
        elif event.kind == EventKind.TIMER:
            node.on_timer(event.payload, now)
        else:
            node.on_flow_tick(event.payload, now)

    def _deliver_packet(self, node_id: NodeId, node, packet: DataPacket, via: NodeId,
                        now: SimTime) -> None:
        dst = self.topology.owner_of(packet.header.dst)
        if isinstance(node, BorderRouter):
            if node.on_data_packet(packet, via, now) == PacketAction.DROP:
                self._drop(packet, node_id, f"filtered@{node_id}")
                return
            if self.audit and node.filters.covering(packet.header, now) is not None:
                self.violations.append(f"{now}ms {node_id} forwarded {packet.flow_id} matching a live filter")
        if node_id == dst:
            stats = self.flow_stats[packet.flow_id]
            stats.in_flight -= 1
            stats.delivered.append((packet.sent_at, now))
            if self.tracer is not None:
                self.tracer.packet(now, node_id, "deliver", packet)
            if self.audit:
                expected = self.topology.border_routers_on_path(stats.flow.src, dst)
                if packet.recorded_route != expected:
                    self.violations.append(f"{now}ms {packet.flow_id} recorded route {packet.recorded_route} != {expected}")
            node.on_data_packet(packet, now)
            return
        self._route(node_id, dst, packet)

    def _deliver_message(self, node_id: NodeId, node, msg: AitfMessage, via: NodeId,
                         now: SimTime) -> None:
        if isinstance(node, BorderRouter):
            if node.is_disconnected(via, now):
                self.message_stats["dropped_disconnected"] += 1
                return
            if not node.admit_transit(msg, via):
                self.message_stats["dropped_spoofed"] += 1
                return
        if msg.destination == node_id:
            self.message_stats[f"delivered_{msg.kind.value.lower()}"] += 1
            node.on_message(msg, via, now)
            return
        self._route(node_id, msg.destination, msg)

    # -- end-of-run checks

    def check_conservation(self) -> List[str]:
        problems = []
        for flow_id, stats in self.flow_stats.items():
            if not stats.conserved():
                problems.append(f"flow {flow_id}: emitted {stats.emitted} != delivered {len(stats.delivered)}"
                                f" + dropped {stats.dropped_total} + in flight {stats.in_flight}")
        return problems

    def routers(self) -> Iterable[BorderRouter]:
        return (n for n in self.nodes.values() if isinstance(n, BorderRouter))

    def hosts(self) -> Iterable[EndHost]:
        return (n for n in self.nodes.values() if isinstance(n, EndHost))


class SimulationError(Exception):
    """Scheduling in the past, unknown node or unroutable topology."""
    pass
