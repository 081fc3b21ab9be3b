"""Shared pytest fixtures for the aitfsim test suite."""

import pytest

from aitfsim.config import Config
from aitfsim.contract import ContractBook
from aitfsim.core import FlowLabel, PacketHeader, ProtocolParams, parse_address
from aitfsim.harness import parse_scenario
from aitfsim.node import BorderRouter, EndHost, HostBehavior, RouterBehavior
from aitfsim.scenarios import ATTACKER, VICTIM, builtin
from aitfsim.simnet import Topology

FIG1_PATH = ("B_gw1", "B_gw2", "B_gw3", "G_gw3", "G_gw2", "G_gw1")


class RecordingNet:
    """Routes over a real topology but records every side effect a node asks for."""

    def __init__(self, config):
        self.topology = Topology()
        for spec in config.nodes:
            self.topology.add_node(spec.node_id, spec.kind, spec.address)
        for link in config.links:
            self.topology.add_link(link.a, link.b, link.delay, link.capacity)
        self.topology.compute_routes()
        self.book = ContractBook(config.contracts)
        self.sent = []
        self.packets = []
        self.timers = []
        self.ticks = []
        self.events = []
        self.rounds = {}
        self.escalations = []
        self.disconnections = []

    def send_message(self, src, msg):
        self.sent.append(msg)

    def send_packet(self, src, packet):
        self.packets.append(packet)

    def set_timer(self, node_id, at, timer):
        self.timers.append((node_id, at, timer))

    def schedule_flow_tick(self, flow, at):
        self.ticks.append((flow.flow_id, at))

    def next_hop(self, node_id, target):
        return self.topology.next_hop(node_id, target)

    def next_hop_to_address(self, node_id, address):
        owner = self.topology.owner_of(address)
        return None if owner is None else self.topology.next_hop(node_id, owner)

    def owner_of(self, address):
        return self.topology.owner_of(address)

    def log_event(self, node_id, event, detail):
        self.events.append((node_id, event, detail))

    def note_round(self, label, k):
        self.rounds[label] = max(k, self.rounds.get(label, 0))

    def on_escalation(self, node_id, label, k, upstream):
        self.escalations.append((node_id, k, upstream))

    def on_disconnect(self, node_id, neighbor, now, until, reason):
        self.disconnections.append((node_id, neighbor, now))

    def sent_of(self, kind, req_type=None):
        return [m for m in self.sent if m.kind == kind and (req_type is None or m.req_type == req_type)]

    def event_names(self, node_id=None):
        return [e for n, e, _ in self.events if node_id is None or n == node_id]


@pytest.fixture
def settings(tmp_path):
    """Built-in defaults only, whatever files exist on the machine."""
    return Config(str(tmp_path / "absent.yaml"))


@pytest.fixture
def fig1_config(settings):
    return parse_scenario(builtin("fig1-cooperative"), settings=settings)


@pytest.fixture
def params():
    return ProtocolParams()


@pytest.fixture
def attack_header():
    return PacketHeader(src=parse_address(ATTACKER), dst=parse_address(VICTIM), proto="udp",
                        sport=4000, dport=80)


@pytest.fixture
def attack_label(attack_header):
    return FlowLabel.exact(attack_header)


@pytest.fixture
def fig1_net(fig1_config):
    return RecordingNet(fig1_config)


def make_router(net, node_id, params=None, behavior=RouterBehavior.COOPERATIVE, seed=1, **kwargs):
    router = BorderRouter(node_id, params or ProtocolParams(), behavior=behavior, seed=seed, **kwargs)
    hosts = {n: net.topology.addresses[n] for n in net.topology.neighbors(node_id)
             if net.topology.kinds[n] == "host"}
    router.bind(net, hosts)
    return router


def make_host(net, node_id, params=None, behavior=HostBehavior.COMPLIANT, **kwargs):
    host = EndHost(node_id, net.topology.addresses[node_id], params or ProtocolParams(),
                   behavior=behavior, **kwargs)
    host.bind(net, net.topology.neighbors(node_id)[0])
    return host
