"""Scenario loading, validation, network construction and runs.

A scenario is a YAML or JSON document (JSON parses as YAML) or one of the
built-in scenarios. Validation failures raise ``ScenarioError`` naming the
offending field and, for files, its line.
"""

import copy
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from .config import Config
from .contract import ContractBook, ContractError, FilteringContract
from .core import (NONCE_BITS, Address, Duration, FlowLabel, MessageKind, NodeId,
                   PacketHeader, ProtocolError, ProtocolParams, RequestType,
                   SimTime, parse_address, parse_duration)
from .logger import Logger
from .node import (BorderRouter, EndHost, Flow, ForgedRequest, HostBehavior,
                   InternalRouter, RouterBehavior)
from .simnet import Network, SimulationError, Topology, Tracer

NODE_KINDS = ("host", "border", "router")
TOP_LEVEL_KEYS = {"name", "description", "seed", "duration", "duration_ms", "params", "defaults",
                  "nodes", "links", "contracts", "flows", "classifiers"}
DEFAULT_PORT_BASE = 1024

Path = Tuple[Union[str, int], ...]


@dataclass
class NodeSpec:
    node_id: NodeId
    kind: str
    address: Optional[Address] = None
    behavior: str = ""
    on_off: Optional[Tuple[Duration, Duration]] = None
    detection_delay: Duration = 0
    filter_capacity: Optional[int] = None
    shadow_capacity: Optional[int] = None
    params: Optional[ProtocolParams] = None
    forged: Tuple[ForgedRequest, ...] = ()


@dataclass
class LinkSpec:
    a: NodeId
    b: NodeId
    delay: Duration
    capacity: Optional[int] = None
    provider: Optional[NodeId] = None


@dataclass
class FlowSpec:
    flow_id: str
    src: NodeId
    header: PacketHeader
    rate: Fraction
    size: int = 1000
    start: SimTime = 0
    stop: Optional[SimTime] = None
    duration: Optional[Duration] = None
    undesired: bool = False
    group: Optional[str] = None
    repeat_count: int = 1
    repeat_every: Duration = 0

    @property
    def templated(self) -> bool:
        return self.repeat_count > 1

    def expand(self) -> List[Flow]:
        """One Flow per repetition, each with its own source port."""
        flows = []
        for i in range(self.repeat_count):
            start = self.start + i * self.repeat_every
            header = self.header
            flow_id = self.flow_id
            if self.templated:
                sport = (header.sport if header.sport is not None else DEFAULT_PORT_BASE) + i
                header = replace(header, sport=sport)
                flow_id = f"{self.flow_id}#{i}"
            stop = self.stop
            if self.duration is not None:
                stop = start + self.duration
            flows.append(Flow(flow_id=flow_id, src=self.src, header=header, rate_pps=self.rate,
                              size_bytes=self.size, start=start, stop=stop,
                              undesired=self.undesired,
                              group=self.group or (self.flow_id if self.templated else None)))
        return flows


@dataclass
class ClassifierSpec:
    host: NodeId
    labels: Tuple[FlowLabel, ...] = ()
    detection_delay: Optional[Duration] = None


@dataclass
class ScenarioConfig:
    name: str
    nodes: List[NodeSpec]
    links: List[LinkSpec]
    contracts: List[FilteringContract]
    params: ProtocolParams
    flows: List[FlowSpec]
    classifiers: List[ClassifierSpec]
    duration: Duration
    seed: int = 1
    description: str = ""
    source: str = ""
    filter_capacity: int = 10000
    shadow_capacity: int = 100000

    def node(self, node_id: NodeId) -> NodeSpec:
        for spec in self.nodes:
            if spec.node_id == node_id:
                return spec
        raise KeyError(node_id)

    def host_by_address(self, address: Address) -> Optional[NodeSpec]:
        for spec in self.nodes:
            if spec.kind == "host" and spec.address == address:
                return spec
        return None

    def neighbors(self, node_id: NodeId) -> List[NodeId]:
        result = []
        for link in self.links:
            if link.a == node_id:
                result.append(link.b)
            elif link.b == node_id:
                result.append(link.a)
        return sorted(result)

    def link(self, a: NodeId, b: NodeId) -> Optional[LinkSpec]:
        for link in self.links:
            if {link.a, link.b} == {a, b}:
                return link
        return None

    @property
    def has_ignoring_routers(self) -> bool:
        return any(n.kind == "border" and n.behavior == RouterBehavior.IGNORE.value for n in self.nodes)

    def without_adversaries(self) -> "ScenarioConfig":
        """Same scenario with every spoofer silenced, for baselines."""
        clone = copy.deepcopy(self)
        for spec in clone.nodes:
            if spec.behavior == HostBehavior.SPOOFER.value:
                spec.forged = ()
        return clone

    def params_for(self, spec: NodeSpec) -> ProtocolParams:
        return spec.params or self.params


class _Reader:
    """Field access with error locations."""

    def __init__(self, lines: Dict[Path, int], origin: str):
        self.lines = lines
        self.origin = origin

    @staticmethod
    def name(path: Path) -> str:
        text = ""
        for part in path:
            if isinstance(part, int):
                text += f"[{part}]"
            else:
                text += f".{part}" if text else str(part)
        return text or "<root>"

    def line(self, path: Path) -> Optional[int]:
        path = tuple(path)
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())

    def error(self, path: Path, message: str) -> "ScenarioError":
        return ScenarioError(message, field=self.name(path), line=self.line(path), source=self.origin)

    def mapping(self, value: Any, path: Path) -> dict:
        if not isinstance(value, dict):
            raise self.error(path, "expected a mapping")
        return value

    def sequence(self, value: Any, path: Path) -> list:
        if value is None:
            return []
        if not isinstance(value, list):
            raise self.error(path, "expected a list")
        return value

    def duration(self, value: Any, path: Path) -> Duration:
        try:
            return parse_duration(value)
        except ProtocolError as e:
            raise self.error(path, str(e)) from None

    def positive_int(self, value: Any, path: Path) -> int:
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            raise self.error(path, f"expected a positive integer, got {value!r}")
        return value

    def rate(self, value: Any, path: Path) -> Fraction:
        try:
            rate = Fraction(str(value)) if not isinstance(value, (int, float)) else Fraction(value)
        except (TypeError, ValueError, ZeroDivisionError):
            raise self.error(path, f"invalid rate {value!r}") from None
        rate = rate.limit_denominator(10 ** 6)
        if rate <= 0:
            raise self.error(path, "rate must be positive")
        return rate

    def label(self, value: Any, path: Path) -> FlowLabel:
        try:
            return FlowLabel.parse(str(value))
        except ProtocolError as e:
            raise self.error(path, str(e)) from None

    def params(self, value: Any, path: Path, base: Optional[dict] = None) -> ProtocolParams:
        merged = dict(base or {})
        merged.update(self.mapping(value or {}, path))
        try:
            return ProtocolParams.from_mapping(merged)
        except ProtocolError as e:
            raise self.error(path, str(e)) from None


def _line_index(text: str) -> Dict[Path, int]:
    """Map each key/item path of a YAML document to its 1-based line."""
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    lines: Dict[Path, int] = {}

    def walk(node, path: Path) -> None:
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                child = path + (str(key_node.value),)
                walk(value_node, child)
                lines[child] = key_node.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                walk(item, path + (i,))

    if root is not None:
        walk(root, ())
    return lines


def load_scenario(source: str, settings: Optional[Config] = None) -> ScenarioConfig:
    """Load a built-in scenario by name or a YAML/JSON scenario file by path."""
    from .scenarios import BUILTIN_SCENARIOS

    if source in BUILTIN_SCENARIOS and not os.path.exists(source):
        return parse_scenario(copy.deepcopy(BUILTIN_SCENARIOS[source]), origin=f"builtin:{source}",
                              settings=settings)
    try:
        with open(source, "r") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e.strerror or e}", source=source) from None
    return load_scenario_text(text, origin=source, settings=settings)


def load_scenario_text(text: str, origin: str = "<string>",
                       settings: Optional[Config] = None) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
        lines = _line_index(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"malformed scenario: {getattr(e, 'problem', None) or e}",
                            line=mark.line + 1 if mark else None, source=origin) from None
    return parse_scenario(data, lines=lines, origin=origin, settings=settings)


def parse_scenario(data: Any, lines: Optional[Dict[Path, int]] = None, origin: str = "<dict>",
                   settings: Optional[Config] = None) -> ScenarioConfig:
    settings = settings or Config()
    r = _Reader(lines or {}, origin)
    data = r.mapping(data, ())
    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise r.error((unknown[0],), "unknown top-level key")

    defaults = dict(settings.contract_defaults)
    defaults.setdefault("filter_capacity", settings.filter_capacity)
    defaults.setdefault("shadow_capacity", settings.shadow_capacity)
    defaults.update(r.mapping(data.get("defaults") or {}, ("defaults",)))

    base_params = settings.protocol_defaults
    params = r.params(data.get("params"), ("params",), base_params)
    scenario_params = dict(base_params)
    scenario_params.update(data.get("params") or {})

    if "duration_ms" in data:
        duration = r.duration(data["duration_ms"], ("duration_ms",))
    else:
        duration = r.duration(data.get("duration", settings.default_duration), ("duration",))
    if duration <= 0:
        raise r.error(("duration",), "duration must be positive")
    seed = data.get("seed", settings.default_seed)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise r.error(("seed",), f"seed must be an integer, got {seed!r}")

    nodes = _parse_nodes(r, data.get("nodes"), scenario_params)
    by_id = {n.node_id: n for n in nodes}
    links = _parse_links(r, data.get("links"), by_id)
    _check_attachment(r, nodes, links)
    contracts = _parse_contracts(r, data.get("contracts"), by_id, links, defaults)
    flows = _parse_flows(r, data.get("flows"), by_id)
    classifiers = _parse_classifiers(r, data.get("classifiers"), by_id)
    _parse_forged(r, data.get("nodes"), nodes, by_id)

    try:
        filter_capacity = int(defaults["filter_capacity"])
        shadow_capacity = int(defaults["shadow_capacity"])
    except (TypeError, ValueError):
        raise r.error(("defaults",), "table capacities must be integers") from None

    config = ScenarioConfig(
        name=str(data.get("name") or os.path.splitext(os.path.basename(origin))[0]),
        description=str(data.get("description") or ""),
        nodes=nodes, links=links, contracts=contracts, params=params, flows=flows,
        classifiers=classifiers, duration=duration, seed=seed, source=origin,
        filter_capacity=filter_capacity, shadow_capacity=shadow_capacity,
    )
    try:
        _topology(config).compute_routes()
    except SimulationError as e:
        raise r.error(("links",), str(e)) from None
    return config


def _parse_nodes(r: _Reader, raw: Any, scenario_params: dict) -> List[NodeSpec]:
    items = r.sequence(raw, ("nodes",))
    if not items:
        raise r.error(("nodes",), "scenario needs at least one node")
    nodes: List[NodeSpec] = []
    seen = set()
    for i, item in enumerate(items):
        path = ("nodes", i)
        item = r.mapping(item, path)
        node_id = item.get("id")
        if not isinstance(node_id, str) or not node_id:
            raise r.error(path + ("id",), "node id must be a non-empty string")
        if node_id in seen:
            raise r.error(path + ("id",), f"duplicate node id {node_id!r}")
        seen.add(node_id)
        kind = item.get("kind")
        if kind not in NODE_KINDS:
            raise r.error(path + ("kind",), f"kind must be one of {', '.join(NODE_KINDS)}")
        spec = NodeSpec(node_id=node_id, kind=kind)
        if kind == "host":
            if "address" not in item:
                raise r.error(path, "host needs an address")
            try:
                spec.address = parse_address(item["address"])
            except ProtocolError as e:
                raise r.error(path + ("address",), str(e)) from None
            behavior = item.get("behavior", HostBehavior.COMPLIANT.value)
            if behavior not in {b.value for b in HostBehavior}:
                raise r.error(path + ("behavior",), f"unknown host behavior {behavior!r}")
            if behavior == HostBehavior.ON_OFF.value:
                on_ms = r.duration(item.get("on_ms"), path + ("on_ms",))
                off_ms = r.duration(item.get("off_ms"), path + ("off_ms",))
                if on_ms <= 0 or off_ms <= 0:
                    raise r.error(path, "on_ms and off_ms must be positive")
                spec.on_off = (on_ms, off_ms)
            spec.detection_delay = r.duration(item.get("detection_delay", 0), path + ("detection_delay",))
        elif kind == "border":
            behavior = item.get("behavior", RouterBehavior.COOPERATIVE.value)
            if behavior not in {b.value for b in RouterBehavior}:
                raise r.error(path + ("behavior",), f"unknown router behavior {behavior!r}")
            for name in ("filter_capacity", "shadow_capacity"):
                if item.get(name) is not None:
                    setattr(spec, name, r.positive_int(item[name], path + (name,)))
        else:
            behavior = ""
        spec.behavior = behavior
        if item.get("params"):
            spec.params = r.params(item["params"], path + ("params",), scenario_params)
        nodes.append(spec)
    return nodes


def _parse_links(r: _Reader, raw: Any, by_id: Dict[NodeId, NodeSpec]) -> List[LinkSpec]:
    links: List[LinkSpec] = []
    seen = set()
    for i, item in enumerate(r.sequence(raw, ("links",))):
        path = ("links", i)
        item = r.mapping(item, path)
        if "edge" in item:
            edge = item["edge"]
            if not isinstance(edge, list) or len(edge) != 2:
                raise r.error(path + ("edge",), "edge must list exactly two node ids")
            a, b = edge
        else:
            a, b = item.get("a"), item.get("b")
        for end in (a, b):
            if end not in by_id:
                raise r.error(path, f"unknown node {end!r}")
        if a == b or frozenset((a, b)) in seen:
            raise r.error(path, f"invalid or duplicate link {a}-{b}")
        seen.add(frozenset((a, b)))
        delay = r.duration(item.get("delay", 1), path + ("delay",))
        capacity = item.get("capacity")
        if capacity is not None:
            capacity = r.positive_int(capacity, path + ("capacity",))
        provider = item.get("provider")
        if provider is not None and provider not in (a, b):
            raise r.error(path + ("provider",), f"provider must be {a} or {b}, got {provider!r}")
        links.append(LinkSpec(a, b, delay, capacity, provider))
    return links


def _check_attachment(r: _Reader, nodes: List[NodeSpec], links: List[LinkSpec]) -> None:
    kinds = {n.node_id: n.kind for n in nodes}
    for i, spec in enumerate(nodes):
        if spec.kind != "host":
            continue
        ends = [l.b if l.a == spec.node_id else l.a for l in links if spec.node_id in (l.a, l.b)]
        if len(ends) != 1 or kinds[ends[0]] != "border":
            raise r.error(("nodes", i), f"host {spec.node_id} must attach to exactly one border router")


def host_depths(by_id: Dict[NodeId, NodeSpec], links: List[LinkSpec]) -> Dict[NodeId, int]:
    """Hop distance from each node to its nearest end-host (hosts are 0)."""
    adjacent: Dict[NodeId, List[NodeId]] = {node_id: [] for node_id in by_id}
    for link in links:
        adjacent[link.a].append(link.b)
        adjacent[link.b].append(link.a)
    depth = {node_id: 0 for node_id, spec in by_id.items() if spec.kind == "host"}
    frontier = sorted(depth)
    while frontier:
        following = []
        for node_id in frontier:
            for neighbor in adjacent[node_id]:
                if neighbor not in depth:
                    depth[neighbor] = depth[node_id] + 1
                    following.append(neighbor)
        frontier = following
    return depth


def _parse_contracts(r: _Reader, raw: Any, by_id: Dict[NodeId, NodeSpec], links: List[LinkSpec],
                     defaults: dict) -> List[FilteringContract]:
    linked = {frozenset((l.a, l.b)): l for l in links}
    book = ContractBook()
    for i, item in enumerate(r.sequence(raw, ("contracts",))):
        path = ("contracts", i)
        item = dict(r.mapping(item, path))
        for key in ("r1", "r2", "burst1", "burst2"):
            item.setdefault(key, defaults.get(key))
        try:
            contract = FilteringContract.from_mapping(item)
        except ContractError as e:
            raise r.error(path, str(e)) from None
        if contract.edge not in linked:
            raise r.error(path + ("edge",), f"{contract.party_a} and {contract.party_b} are not linked")
        try:
            book.add(contract)
        except ContractError as e:
            raise r.error(path, str(e)) from None
    # every adjacency gets a contract; the side farther from the end-hosts provides
    depth = host_depths(by_id, links)
    for link in links:
        if (link.a, link.b) in book:
            continue
        provider = link.provider
        if provider is None:
            provider = link.b if depth.get(link.b, 0) > depth.get(link.a, 0) else link.a
        client = link.b if provider == link.a else link.a
        try:
            book.add(FilteringContract.from_mapping({
                "edge": [provider, client], "r1": defaults.get("r1"), "r2": defaults.get("r2"),
                "burst1": defaults.get("burst1"), "burst2": defaults.get("burst2"),
            }))
        except ContractError as e:
            raise r.error(("defaults",), str(e)) from None
    return list(book)


def _resolve_address(r: _Reader, value: Any, path: Path, by_id: Dict[NodeId, NodeSpec]) -> Address:
    if isinstance(value, str) and value in by_id:
        spec = by_id[value]
        if spec.address is None:
            raise r.error(path, f"{value} has no address")
        return spec.address
    try:
        return parse_address(value)
    except ProtocolError as e:
        raise r.error(path, str(e)) from None


def _parse_port(r: _Reader, value: Any, path: Path) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= 65535:
        raise r.error(path, f"invalid port {value!r}")
    return value


def _parse_flows(r: _Reader, raw: Any, by_id: Dict[NodeId, NodeSpec]) -> List[FlowSpec]:
    flows: List[FlowSpec] = []
    seen = set()
    addresses = {n.address for n in by_id.values() if n.address is not None}
    for i, item in enumerate(r.sequence(raw, ("flows",))):
        path = ("flows", i)
        item = r.mapping(item, path)
        flow_id = str(item.get("id") or f"flow{i}")
        if flow_id in seen:
            raise r.error(path + ("id",), f"duplicate flow id {flow_id!r}")
        seen.add(flow_id)
        src = item.get("src")
        if src not in by_id or by_id[src].kind != "host":
            raise r.error(path + ("src",), f"flow source must be a host, got {src!r}")
        dst = _resolve_address(r, item.get("dst"), path + ("dst",), by_id)
        if dst not in addresses:
            raise r.error(path + ("dst",), f"no host owns {dst}")
        src_address = by_id[src].address
        if item.get("src_address") is not None:
            src_address = _resolve_address(r, item["src_address"], path + ("src_address",), by_id)
        proto = str(item.get("proto", "udp")).lower()
        header = PacketHeader(src=src_address, dst=dst, proto=proto,
                              sport=_parse_port(r, item.get("sport"), path + ("sport",)),
                              dport=_parse_port(r, item.get("dport"), path + ("dport",)))
        start = r.duration(item.get("start", 0), path + ("start",))
        stop = item.get("stop")
        stop = None if stop is None else r.duration(stop, path + ("stop",))
        duration = item.get("duration")
        duration = None if duration is None else r.duration(duration, path + ("duration",))
        if stop is not None and stop <= start:
            raise r.error(path + ("stop",), "stop must be after start")
        if duration is not None and duration <= 0:
            raise r.error(path + ("duration",), "duration must be positive")
        spec = FlowSpec(flow_id=flow_id, src=src, header=header,
                        rate=r.rate(item.get("rate"), path + ("rate",)),
                        size=r.positive_int(item.get("size", 1000), path + ("size",)),
                        start=start, stop=stop, duration=duration,
                        undesired=bool(item.get("undesired", False)),
                        group=item.get("group"))
        repeat = item.get("repeat")
        if repeat is not None:
            repeat = r.mapping(repeat, path + ("repeat",))
            spec.repeat_count = r.positive_int(repeat.get("count"), path + ("repeat", "count"))
            spec.repeat_every = r.duration(repeat.get("every", 0), path + ("repeat", "every"))
            if stop is not None and spec.repeat_count > 1:
                raise r.error(path + ("stop",), "repeated flows take a duration, not an absolute stop")
        flows.append(spec)
    return flows


def _parse_classifiers(r: _Reader, raw: Any, by_id: Dict[NodeId, NodeSpec]) -> List[ClassifierSpec]:
    classifiers: List[ClassifierSpec] = []
    for i, item in enumerate(r.sequence(raw, ("classifiers",))):
        path = ("classifiers", i)
        item = r.mapping(item, path)
        host = item.get("host")
        if host not in by_id or by_id[host].kind != "host":
            raise r.error(path + ("host",), f"classifier host must be a host, got {host!r}")
        labels = []
        for j, text in enumerate(r.sequence(item.get("labels"), path + ("labels",))):
            label = r.label(text, path + ("labels", j))
            if label.dst != by_id[host].address:
                raise r.error(path + ("labels", j), f"a victim can only name itself as destination ({by_id[host].address})")
            labels.append(label)
        delay = item.get("detection_delay")
        delay = None if delay is None else r.duration(delay, path + ("detection_delay",))
        classifiers.append(ClassifierSpec(host=host, labels=tuple(labels), detection_delay=delay))
    return classifiers


def _parse_forged(r: _Reader, raw_nodes: Any, nodes: List[NodeSpec], by_id: Dict[NodeId, NodeSpec]) -> None:
    for i, (item, spec) in enumerate(zip(raw_nodes, nodes)):
        entries = item.get("forged")
        if not entries:
            continue
        if spec.behavior != HostBehavior.SPOOFER.value:
            raise r.error(("nodes", i, "forged"), "only spoofer hosts forge messages")
        forged = []
        for j, entry in enumerate(r.sequence(entries, ("nodes", i, "forged"))):
            path = ("nodes", i, "forged", j)
            entry = r.mapping(entry, path)
            try:
                kind = MessageKind(str(entry.get("kind", "FILTER_REQ")).upper())
                req_type = entry.get("req_type")
                req_type = None if req_type is None else RequestType(str(req_type).upper())
            except ValueError as e:
                raise r.error(path, str(e)) from None
            if kind == MessageKind.FILTER_REQ and req_type is None:
                raise r.error(path + ("req_type",), "forged FILTER_REQ needs a req_type")
            if "destination" not in entry:
                raise r.error(path + ("destination",), "forged message needs a destination")
            for name in ("destination", "requester"):
                if entry.get(name, spec.node_id) not in by_id:
                    raise r.error(path + (name,), f"unknown node {entry.get(name)!r}")
            nonce = entry.get("nonce")
            if nonce is not None and (isinstance(nonce, bool) or not isinstance(nonce, int)
                                      or not 0 <= nonce < 2 ** NONCE_BITS):
                raise r.error(path + ("nonce",), f"nonce must be an integer in [0, 2^{NONCE_BITS}), got {nonce!r}")
            attack_path = tuple(entry.get("attack_path") or ())
            for node_id in attack_path:
                if node_id not in by_id:
                    raise r.error(path + ("attack_path",), f"unknown node {node_id!r}")
            every = r.duration(entry.get("every", 1), path + ("every",))
            forged.append(ForgedRequest(
                at=r.duration(entry.get("at", 0), path + ("at",)),
                kind=kind, flow_label=r.label(entry.get("label"), path + ("label",)),
                destination=entry["destination"], requester=entry.get("requester", spec.node_id),
                req_type=req_type, attack_path=attack_path, nonce=nonce,
                count=r.positive_int(entry.get("count", 1), path + ("count",)),
                every=max(every, 1),
            ))
        spec.forged = tuple(forged)


def _topology(config: ScenarioConfig) -> Topology:
    topology = Topology()
    for spec in config.nodes:
        topology.add_node(spec.node_id, spec.kind, spec.address)
    for link in config.links:
        topology.add_link(link.a, link.b, link.delay, link.capacity)
    return topology


def build_network(config: ScenarioConfig, seed: Optional[int] = None, tracer: Optional[Tracer] = None,
                  audit: bool = False) -> Network:
    """Instantiate nodes, contracts, flows and classifiers; the network is ready to start."""
    seed = config.seed if seed is None else seed
    net = Network(_topology(config), ContractBook(config.contracts), seed=seed, tracer=tracer, audit=audit)
    for spec in config.nodes:
        params = config.params_for(spec)
        if spec.kind == "host":
            node = EndHost(spec.node_id, spec.address, params, behavior=HostBehavior(spec.behavior),
                           on_off=spec.on_off, detection_delay=spec.detection_delay,
                           forged=spec.forged, seed=seed)
        elif spec.kind == "border":
            node = BorderRouter(spec.node_id, params, behavior=RouterBehavior(spec.behavior),
                                filter_capacity=spec.filter_capacity or config.filter_capacity,
                                shadow_capacity=spec.shadow_capacity or config.shadow_capacity,
                                seed=seed)
        else:
            node = InternalRouter(spec.node_id)
        net.add_node(node)
    net.bind_all()
    for classifier in config.classifiers:
        host = net.nodes[classifier.host]
        for label in classifier.labels:
            host.classifier.add(label)
        if classifier.detection_delay is not None:
            host.detection_delay = classifier.detection_delay
    for spec in config.flows:
        for flow in spec.expand():
            net.add_flow(flow)
            if flow.undesired:
                victim = net.nodes[net.owner_of(flow.header.dst)]
                victim.classifier.add(flow.label)
    return net


def run_scenario(config: ScenarioConfig, seed: Optional[int] = None, trace: bool = False,
                 trace_packets: bool = False, audit: Optional[bool] = None,
                 adversaries: bool = True, duration: Optional[Duration] = None,
                 settings: Optional[Config] = None):
    """Build, run to the scenario duration and measure; returns a MetricsReport."""
    from .metrics import measure

    settings = settings or Config()
    logger = Logger()
    seed = config.seed if seed is None else seed
    duration = config.duration if duration is None else duration
    if duration <= 0:
        raise ScenarioError("duration must be positive", field="duration", source=config.source)
    if not adversaries:
        config = config.without_adversaries()
    audit = settings.audit if audit is None else audit
    tracer = Tracer(packets=trace_packets) if (trace or trace_packets) else None
    with logger.run_context(config.name, seed):
        try:
            net = build_network(config, seed=seed, tracer=tracer, audit=audit)
            net.start()
            executed = net.run(duration)
        except (SimulationError, ValueError) as e:
            raise ScenarioError(str(e), source=config.source) from None
        logger.info(f"{executed} events in {duration}ms")
        report = measure(net, config, seed=seed, duration=duration,
                         burst_gap_packets=settings.burst_gap_packets)
    if tracer is not None:
        report.trace = list(tracer.lines)
    return report


class ScenarioError(Exception):
    """Scenario validation failure; carries the field path and source line."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None,
                 source: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line
        self.source = source

    def __str__(self) -> str:
        where = self.source or ""
        if self.line is not None:
            where += f":{self.line}"
        prefix = f"{where}: " if where else ""
        if self.field:
            prefix += f"{self.field}: "
        return prefix + self.message
