"""Closed-form oracles and the metrics report of a completed run.

Effective bandwidth compares what reached the victim (B_e) with what the
flow would have offered on its own (B): a flow's offered packets in a window
are the indices its constant-rate schedule places there, regardless of stop
requests or off periods, so ``0 <= r <= 1`` always holds.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

from .core import Duration, NodeId, SimTime
from .logger import Logger
from .node import BorderRouter, EndHost, Flow, HostBehavior, RouterBehavior

Number = Union[int, float]

REPORT_FORMATS = ("text", "json", "csv")


def _number(value: Union[Fraction, int, float]) -> Number:
    """Integral values as ints so reports read 6000, not 6000.0."""
    value = Fraction(value).limit_denominator(10 ** 9) if isinstance(value, float) else Fraction(value)
    return int(value) if value.denominator == 1 else float(value)


def oracle_r(n: int, t_d: Duration, t_r: Duration, timeout: Duration) -> float:
    """Predicted effective-bandwidth ratio ``n * (T_d + T_r) / T``."""
    if timeout <= 0:
        raise ValueError(f"T must be positive, got {timeout}")
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    return float(Fraction(n * (t_d + t_r)) / Fraction(timeout))


@dataclass(frozen=True)
class Provisioning:
    """Resources a victim's gateway and an attacker's gateway must provision."""

    N_v: Number  # simultaneous undesired flows a victim is protected against
    n_v: Number  # wire-speed filters at the victim's gateway
    m_v: Number  # shadow-log entries at the victim's gateway
    n_a: Number  # filters an attacker's gateway holds for one client

    def to_dict(self) -> Dict[str, Number]:
        return {"N_v": self.N_v, "n_v": self.n_v, "m_v": self.m_v, "n_a": self.n_a}


def oracle_provisioning(r1, r2, timeout: Duration, temp_timeout: Duration) -> Provisioning:
    """Rates in requests/s, timeouts in ms."""
    r1, r2 = Fraction(str(r1)), Fraction(str(r2))
    if min(r1, r2) <= 0 or min(timeout, temp_timeout) <= 0:
        raise ValueError("rates and timeouts must be positive")
    t = Fraction(timeout) / 1000
    t_tmp = Fraction(temp_timeout) / 1000
    return Provisioning(N_v=_number(r1 * t), n_v=_number(r1 * t_tmp), m_v=_number(r1 * t),
                        n_a=_number(r2 * t))


def offered_between(flow: Flow, begin: SimTime, end: SimTime) -> int:
    """Packets the flow's schedule places in ``[begin, end)``."""
    begin = max(begin, flow.start)
    if flow.stop is not None:
        end = min(end, flow.stop)
    if end <= begin:
        return 0
    return flow.first_index_at_or_after(end) - flow.first_index_at_or_after(begin)


def _ratio(delivered: int, offered: int) -> Optional[float]:
    if offered <= 0:
        return None
    return float(Fraction(delivered, offered))


def delivered_bursts(arrivals: List[SimTime], interval: Fraction, gap_packets: int) -> List[Dict[str, int]]:
    """Group arrival times into bursts separated by more than ``gap_packets`` intervals."""
    bursts: List[Dict[str, int]] = []
    gap = interval * gap_packets
    for at in sorted(arrivals):
        if bursts and at - bursts[-1]["end"] <= gap:
            bursts[-1]["end"] = at
            bursts[-1]["packets"] += 1
        else:
            bursts.append({"start": at, "end": at, "packets": 1})
    for burst in bursts:
        burst["duration"] = burst["end"] - burst["start"]
    return bursts


@dataclass
class FlowReport:
    flow_id: str
    src: NodeId
    label: str
    rate_pps: Number
    size_bytes: int
    undesired: bool
    group: Optional[str]
    window: Tuple[SimTime, SimTime]
    offered_packets: int
    delivered_packets: int
    r: Optional[float]
    r_periods: List[Optional[float]]
    r_aggregate: Optional[float]
    emitted: int
    dropped: Dict[str, int]
    in_flight: int
    max_round: int
    bursts: List[Dict[str, int]] = field(default_factory=list)

    @property
    def offered_bytes(self) -> int:
        return self.offered_packets * self.size_bytes

    @property
    def delivered_bytes(self) -> int:
        return self.delivered_packets * self.size_bytes

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.flow_id, "src": self.src, "label": self.label, "rate_pps": self.rate_pps,
            "size_bytes": self.size_bytes, "undesired": self.undesired, "group": self.group,
            "window_ms": list(self.window),
            "offered_packets": self.offered_packets, "offered_bytes": self.offered_bytes,
            "delivered_packets": self.delivered_packets, "delivered_bytes": self.delivered_bytes,
            "r": self.r, "r_periods": self.r_periods, "r_aggregate": self.r_aggregate,
            "emitted": self.emitted, "dropped": dict(sorted(self.dropped.items())),
            "in_flight": self.in_flight, "max_round": self.max_round, "bursts": self.bursts,
        }


@dataclass
class GroupReport:
    group: str
    flows: int
    offered_packets: int
    delivered_packets: int
    r: Optional[float]
    max_round: int

    def to_dict(self) -> Dict[str, Any]:
        return {"group": self.group, "flows": self.flows, "offered_packets": self.offered_packets,
                "delivered_packets": self.delivered_packets, "r": self.r, "max_round": self.max_round}


@dataclass
class OracleReport:
    flow: str
    n: int
    t_d: Duration
    t_r: Duration
    timeout: Duration
    predicted_r: float
    measured_r: Optional[float]
    within_quantum: Optional[bool]
    provisioning: Provisioning

    def to_dict(self) -> Dict[str, Any]:
        return {"flow": self.flow, "n": self.n, "T_d": self.t_d, "T_r": self.t_r, "T": self.timeout,
                "predicted_r": self.predicted_r, "measured_r": self.measured_r,
                "within_quantum": self.within_quantum, **self.provisioning.to_dict()}


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    duration: Duration
    flows: List[FlowReport]
    groups: List[GroupReport]
    nodes: Dict[NodeId, Dict[str, Any]]
    escalations: List[Dict[str, Any]]
    disconnections: List[Dict[str, Any]]
    oracle: List[OracleReport]
    violations: List[str]
    messages: Dict[str, int]
    templated: FrozenSet[str] = frozenset()
    trace: List[str] = field(default_factory=list)

    def flow(self, flow_id: str) -> FlowReport:
        for report in self.flows:
            if report.flow_id == flow_id:
                return report
        raise KeyError(flow_id)

    def group(self, name: str) -> GroupReport:
        for report in self.groups:
            if report.group == name:
                return report
        raise KeyError(name)

    def node(self, node_id: NodeId) -> Dict[str, Any]:
        return self.nodes[node_id]

    @property
    def max_round(self) -> int:
        return max((f.max_round for f in self.flows), default=0)

    @property
    def ok(self) -> bool:
        return not self.violations

    def _listed_flows(self) -> List[FlowReport]:
        return [f for f in self.flows if f.flow_id not in self.templated]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "duration_ms": self.duration,
            "flows": [f.to_dict() for f in self._listed_flows()],
            "groups": [g.to_dict() for g in self.groups],
            "nodes": self.nodes,
            "escalations": self.escalations,
            "disconnections": self.disconnections,
            "oracle": [o.to_dict() for o in self.oracle],
            "messages": dict(sorted(self.messages.items())),
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["flow", "src", "label", "group", "undesired", "rate_pps", "offered_packets",
                         "offered_bytes", "delivered_packets", "delivered_bytes", "r", "r_aggregate",
                         "max_round"])
        for f in self.flows:
            writer.writerow([f.flow_id, f.src, f.label, f.group or "", int(f.undesired), f.rate_pps,
                             f.offered_packets, f.offered_bytes, f.delivered_packets, f.delivered_bytes,
                             "" if f.r is None else repr(f.r),
                             "" if f.r_aggregate is None else repr(f.r_aggregate), f.max_round])
        return out.getvalue()

    def to_text(self) -> str:
        lines = [f"Scenario {self.scenario}  seed={self.seed}  duration={self.duration}ms", ""]
        listed = self._listed_flows()
        if listed:
            lines.append(f"{'flow':<16} {'src':<10} {'offered':>9} {'delivered':>9} {'r':>12} {'round':>5}")
            for f in listed:
                r = "-" if f.r is None else f"{f.r:.6g}"
                mark = "*" if f.undesired else " "
                lines.append(f"{f.flow_id:<15}{mark} {f.src:<10} {f.offered_packets:>9} "
                             f"{f.delivered_packets:>9} {r:>12} {f.max_round:>5}")
            lines.append("")
        if self.groups:
            lines.append(f"{'group':<16} {'flows':>6} {'offered':>9} {'delivered':>9} {'r':>12} {'round':>5}")
            for g in self.groups:
                r = "-" if g.r is None else f"{g.r:.6g}"
                lines.append(f"{g.group:<16} {g.flows:>6} {g.offered_packets:>9} {g.delivered_packets:>9} "
                             f"{r:>12} {g.max_round:>5}")
            lines.append("")
        lines.append(f"{'node':<12} {'filters':>8} {'shadow':>8} {'full':>5} {'sent':>6} {'accepted':>8} {'policed':>8}")
        for node_id, n in self.nodes.items():
            lines.append(f"{node_id:<12} {n.get('filter_high_water', '-'):>8} {n.get('shadow_high_water', '-'):>8} "
                         f"{n.get('table_full', '-'):>5} {n['requests_sent']:>6} {n['requests_accepted']:>8} "
                         f"{n['requests_policed']:>8}")
        if self.escalations:
            lines.append("")
            lines.append("Escalations:")
            for e in self.escalations:
                lines.append(f"  {e['time']:>9}ms {e['node']} round {e['round']} -> {e['upstream']} {e['label']}")
        if self.disconnections:
            lines.append("")
            lines.append("Disconnections:")
            for d in self.disconnections:
                until = "end" if d["until"] is None else f"{d['until']}ms"
                lines.append(f"  {d['time']:>9}ms {d['node']} -x- {d['neighbor']} until {until} ({d['reason']})")
        if self.oracle:
            lines.append("")
            lines.append(f"{'oracle':<16} {'n':>3} {'T_d':>6} {'T_r':>6} {'predicted r':>12} {'measured r':>12} "
                         f"{'N_v':>7} {'n_v':>6} {'m_v':>7} {'n_a':>5}")
            for o in self.oracle:
                measured = "-" if o.measured_r is None else f"{o.measured_r:.6g}"
                p = o.provisioning
                lines.append(f"{o.flow:<16} {o.n:>3} {o.t_d:>6} {o.t_r:>6} {o.predicted_r:>12.6g} {measured:>12} "
                             f"{p.N_v:>7} {p.n_v:>6} {p.m_v:>7} {p.n_a:>5}")
        lines.append("")
        if self.violations:
            lines.append(f"VIOLATIONS ({len(self.violations)}):")
            lines.extend(f"  {v}" for v in self.violations)
        else:
            lines.append("No invariant violations.")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str = "text") -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "text":
            return self.to_text()
        raise ValueError(f"unknown report format {fmt!r} (expected one of {', '.join(REPORT_FORMATS)})")


def _flow_report(net, stats, timeout: Duration, duration: Duration, gap_packets: int) -> FlowReport:
    flow = stats.flow
    end = duration if flow.stop is None else min(duration, flow.stop)
    window = (flow.start, min(flow.start + timeout, end))
    sent = sorted(s for s, _ in stats.delivered)

    def delivered_between(begin, finish):
        return sum(1 for s in sent if begin <= s < finish)

    offered = offered_between(flow, *window)
    delivered = delivered_between(*window)
    periods = []
    begin = flow.start
    while begin < end:
        finish = min(begin + timeout, end)
        periods.append(_ratio(delivered_between(begin, finish), offered_between(flow, begin, finish)))
        begin += timeout
    return FlowReport(
        flow_id=flow.flow_id, src=flow.src, label=str(flow.label), rate_pps=_number(flow.rate_pps),
        size_bytes=flow.size_bytes, undesired=flow.undesired, group=flow.group, window=window,
        offered_packets=offered, delivered_packets=delivered, r=_ratio(delivered, offered),
        r_periods=periods,
        r_aggregate=_ratio(delivered_between(flow.start, end), offered_between(flow, flow.start, end)),
        emitted=stats.emitted, dropped=dict(stats.dropped), in_flight=stats.in_flight,
        max_round=net.rounds.get(flow.label, 0),
        bursts=delivered_bursts([a for _, a in stats.delivered], flow.interval_ms, gap_packets)
        if flow.undesired else [],
    )


def _node_report(node) -> Dict[str, Any]:
    policer = node.policer
    report = {
        "kind": node.kind,
        "requests_sent": node.stats["requests_sent"],
        "requests_accepted": sum(policer.accepted.values()) if policer else 0,
        "requests_policed": sum(policer.dropped.values()) if policer else 0,
    }
    if isinstance(node, BorderRouter):
        report.update({
            "behavior": node.behavior.value,
            "filter_high_water": node.filters.high_water,
            "filter_installs": node.filters.installs,
            "table_full": node.filters.table_full_count,
            "shadow_high_water": node.shadow.high_water,
            "shadow_overflow": node.shadow.overflow_count,
            "group_high_water": dict(sorted(node.filters.group_high_water.items())),
            "budget_denied": sum(policer.budget_denied.values()) if policer else 0,
            "disconnections": node.stats["disconnections"],
            "spoofed_dropped": node.stats["spoofed_dropped"],
            "ingress_rejected": node.stats["ingress_rejected"],
            "bad_nonce": node.stats["bad_nonce"],
        })
    elif isinstance(node, EndHost):
        report.update({
            "behavior": node.behavior.value,
            "packets_received": node.stats["packets_received"],
            "requests_unauthorized": node.stats["requests_unauthorized"],
            "forged_sent": node.stats["forged_sent"],
        })
    return report


def non_cooperating(net, flow: Flow) -> int:
    """AITF nodes that fail to stop the flow, counted outward from the attacker."""
    dst = net.owner_of(flow.header.dst)
    host = net.nodes[flow.src]
    if host.behavior == HostBehavior.COMPLIANT:
        return 0
    n = 1
    for node_id in net.topology.border_routers_on_path(flow.src, dst):
        router = net.nodes[node_id]
        if router.behavior != RouterBehavior.IGNORE:
            break
        n += 1
    return n


def _oracle(net, name: str, flow_report: FlowReport, flow: Flow, params) -> OracleReport:
    victim_id = net.owner_of(flow.header.dst)
    victim = net.nodes[victim_id]
    gateway = victim.gateway
    t_r = 2 * net.topology.link(victim_id, gateway).delay
    victim_side = net.book.direction(victim_id, gateway)
    attacker_gw = net.nodes[flow.src].gateway
    attacker_side = net.book.direction(attacker_gw, flow.src)
    predicted = oracle_r(non_cooperating(net, flow), victim.detection_delay, t_r, params.timeout)
    within = None
    if flow_report.r is not None:
        within = abs(Fraction(flow_report.r) - Fraction(predicted)) * flow_report.offered_packets <= 1
    return OracleReport(
        flow=name,
        n=non_cooperating(net, flow), t_d=victim.detection_delay, t_r=t_r, timeout=params.timeout,
        predicted_r=predicted, measured_r=flow_report.r, within_quantum=within,
        provisioning=oracle_provisioning(victim_side.rate, attacker_side.rate, params.timeout,
                                         params.temp_timeout),
    )


def _bound_violations(net, config) -> List[str]:
    """Victim-gateway table bounds; only meaningful when every router cooperates."""
    if config.has_ignoring_routers:
        return []
    victims = {net.owner_of(s.header.dst) for s in config.flows if s.undesired}
    attackers = {s.src for s in config.flows if s.undesired}
    problems = []
    for router in net.routers():
        hosts = [h for h in router.hosts if h in victims]
        if not hosts or any(h in attackers for h in router.hosts):
            continue
        directions = [net.book.direction(h, router.node_id) for h in hosts]
        p = router.params
        filter_bound = sum(d.rate * p.temp_timeout / 1000 + d.burst for d in directions)
        shadow_bound = sum(d.rate * p.timeout / 1000 + d.burst for d in directions)
        if router.filters.high_water > filter_bound:
            problems.append(f"{router.node_id}: filter high-water {router.filters.high_water} exceeds {_number(filter_bound)}")
        if router.shadow.high_water > shadow_bound:
            problems.append(f"{router.node_id}: shadow high-water {router.shadow.high_water} exceeds {_number(shadow_bound)}")
    return problems


def measure(net, config, seed: int, duration: Duration, burst_gap_packets: int = 3) -> MetricsReport:
    """Summarise a completed run; deterministic given the scenario and seed."""
    logger = Logger()
    timeout = config.params.timeout
    flows = [_flow_report(net, stats, timeout, duration, burst_gap_packets)
             for stats in net.flow_stats.values()]
    templated = frozenset(f.flow_id for spec in config.flows if spec.templated
                      for f in flows if f.flow_id.startswith(f"{spec.flow_id}#"))

    grouped: Dict[str, List[FlowReport]] = {}
    for f in flows:
        if f.group:
            grouped.setdefault(f.group, []).append(f)
    groups = []
    for name, members in grouped.items():
        offered = sum(m.offered_packets for m in members)
        delivered = sum(m.delivered_packets for m in members)
        groups.append(GroupReport(group=name, flows=len(members), offered_packets=offered,
                                  delivered_packets=delivered, r=_ratio(delivered, offered),
                                  max_round=max(m.max_round for m in members)))

    oracle = []
    seen_groups = set()
    for f in flows:
        if not f.undesired:
            continue
        flow = net.flow_stats[f.flow_id].flow
        if f.flow_id in templated:
            if flow.group in seen_groups:
                continue
            seen_groups.add(flow.group)
        name = flow.group if f.flow_id in templated else f.flow_id
        oracle.append(_oracle(net, name, f, flow, net.nodes[flow.src].params))

    violations = list(net.violations)
    violations.extend(net.check_conservation())
    for f in flows:
        if f.r is not None and not 0 <= f.r <= 1:
            violations.append(f"flow {f.flow_id}: r={f.r} outside [0, 1]")
        if f.delivered_packets > f.offered_packets:
            violations.append(f"flow {f.flow_id}: delivered {f.delivered_packets} > offered {f.offered_packets}")
    violations.extend(_bound_violations(net, config))
    for v in violations:
        logger.warning(f"{config.name}: {v}")

    return MetricsReport(
        scenario=config.name, seed=seed, duration=duration, flows=flows, groups=groups,
        nodes={node_id: _node_report(node) for node_id, node in sorted(net.nodes.items())
               if isinstance(node, (BorderRouter, EndHost))},
        escalations=[{"time": t, "node": n, "label": label, "round": k, "upstream": up}
                     for t, n, label, k, up in net.escalations],
        disconnections=[{"time": d.time, "node": d.node, "neighbor": d.neighbor, "until": d.until,
                         "reason": d.reason} for d in net.disconnections],
        oracle=oracle, violations=violations, messages=dict(net.message_stats), templated=templated,
    )
