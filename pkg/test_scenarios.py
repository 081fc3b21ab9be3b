"""End-to-end runs of the built-in scenarios.

Times are virtual milliseconds on the canonical chain, where a message
between G_host and B_gw1 takes 30 ms and the victim access link 25 ms.
"""

import random

import pytest

from aitfsim.core import AitfMessage, MessageKind, RequestType
from aitfsim.harness import load_scenario, run_scenario
from aitfsim.node import Outcome
from aitfsim.scenarios import BUILTIN_SCENARIOS

from conftest import FIG1_PATH, make_router


def events(report, name=None):
    """(time, node, event, detail) tuples parsed from the trace."""
    parsed = []
    for line in report.trace:
        parts = line.split(None, 3)
        record = (int(parts[0]), parts[1], parts[2], parts[3] if len(parts) > 3 else "")
        if name is None or record[2] == name:
            parsed.append(record)
    return parsed


def at(report, name):
    return [(t, node) for t, node, _, _ in events(report, name)]


def run(settings, name, **kwargs):
    return run_scenario(load_scenario(name, settings=settings), trace=True, settings=settings, **kwargs)


class TestEscalationLadder:

    def test_cooperative_gateways_filter_at_the_source_edge(self, settings):
        report = run(settings, "fig1-cooperative")
        assert at(report, "installed") == [(121, "B_gw1")]
        assert (656, "G_gw1") in at(report, "quiet")
        assert [(d["time"], d["node"], d["neighbor"]) for d in report.disconnections] == \
            [(321, "B_gw1", "B_host")]
        assert report.escalations == []
        attack = report.flow("attack")
        assert attack.max_round == 1
        assert attack.delivered_packets == 50
        assert attack.bursts == [{"start": 31, "end": 80, "packets": 50, "duration": 49}]

    def test_effective_bandwidth_matches_oracle(self, settings):
        report = run(settings, "fig1-cooperative")
        attack = report.flow("attack")
        assert attack.window == (0, 60000)
        assert attack.r == pytest.approx(8.33e-4, rel=0.1)
        [oracle] = report.oracle
        assert (oracle.n, oracle.t_d, oracle.t_r, oracle.timeout) == (1, 0, 50, 60000)
        assert oracle.predicted_r == pytest.approx(50 / 60000)
        assert oracle.within_quantum
        assert oracle.provisioning.to_dict() == {"N_v": 6000, "n_v": 60, "m_v": 6000, "n_a": 60}
        assert report.ok

    def test_next_gateway_takes_over(self, settings):
        report = run(settings, "fig1-bgw1-ignores")
        assert (61, "B_gw1") in at(report, "ignored")
        assert [(e["time"], e["node"], e["round"], e["upstream"]) for e in report.escalations] == \
            [(656, "G_gw1", 2, "G_gw2")]
        assert at(report, "installed") == [(718, "B_gw2")]
        assert report.node("B_gw2")["group_high_water"] == {"B_gw1": 1}
        assert [(d["time"], d["node"], d["neighbor"]) for d in report.disconnections] == \
            [(918, "B_gw2", "B_gw1")]
        assert report.flow("attack").max_round == 2
        assert report.flow("attack").delivered_packets == 50

    def test_last_round_disconnects_the_attack_side(self, settings):
        report = run(settings, "fig1-all-ignore")
        assert [(e["time"], e["node"], e["round"], e["upstream"]) for e in report.escalations] == \
            [(656, "G_gw1", 2, "G_gw2"), (1257, "G_gw2", 3, "G_gw3")]
        assert at(report, "installed") == []
        assert [(d["time"], d["node"], d["neighbor"]) for d in report.disconnections] == \
            [(1858, "G_gw3", "B_gw3")]
        attack = report.flow("attack")
        assert attack.max_round == 3
        # nothing reaches the victim after the first leak
        assert attack.delivered_packets == 50
        assert attack.bursts[-1]["end"] == 80
        assert attack.dropped.get("disconnected", 0) > 0


class TestOnOff:

    def test_resumption_is_caught_by_the_shadow_log(self, settings):
        report = run(settings, "on-off")
        attack = report.flow("attack")
        interval = 1000 / attack.rate_pps
        for burst in attack.bursts:
            assert burst["duration"] <= 50 + interval
        assert attack.bursts[0] == {"start": 31, "end": 76, "packets": 10, "duration": 45}
        shadow_hits = [e for e in events(report, "temp-installed") if "shadow-hit" in e[3]]
        assert [(t, node) for t, node, _, _ in shadow_hits][:1] == [(2106, "G_gw1")]
        assert attack.max_round >= 2
        assert report.escalations[0]["node"] == "G_gw1"
        assert report.escalations[0]["round"] == 2
        assert ("B_gw2", "B_gw1") in [(d["node"], d["neighbor"]) for d in report.disconnections]
        assert report.ok


class TestSpoofer:

    def test_forged_requests_install_nothing(self, settings):
        config = load_scenario("spoofer", settings=settings)
        report = run_scenario(config, settings=settings)
        baseline = run_scenario(config, adversaries=False, settings=settings)
        forged = config.node("S_host").forged
        assert sum(f.count for f in forged if f.kind == MessageKind.FILTER_REQ) == 1000
        assert report.node("S_host")["forged_sent"] == 1250
        for node_id, node in report.nodes.items():
            if node["kind"] == "border":
                assert node["filter_installs"] == 0, node_id
        assert report.node("X_gw")["spoofed_dropped"] == 250
        # G_gw2 may send G_gw1 one request per second; the rest are policed
        g_gw1 = report.node("G_gw1")
        assert g_gw1["ingress_rejected"] >= 1
        assert g_gw1["ingress_rejected"] + g_gw1["requests_policed"] == 250
        assert report.node("B_gw1")["bad_nonce"] == 250
        assert report.node("B_host")["requests_unauthorized"] == 250
        legit = report.flow("legit")
        assert legit.r >= 0.99
        assert legit.delivered_packets >= 0.99 * baseline.flow("legit").delivered_packets
        assert report.ok

    def test_guessed_nonces_never_install(self, fig1_net, attack_label):
        rng = random.Random(99)
        for trial in range(1000):
            router = make_router(fig1_net, "B_gw1", seed=trial)
            msg = AitfMessage(kind=MessageKind.FILTER_REQ, flow_label=attack_label, requester="G_gw1",
                              destination="B_gw1", req_type=RequestType.TO_ATTACKER_GW, attack_path=FIG1_PATH)
            assert router.gw_on_filter_req_as_attacker_gw(msg, "B_gw2", 0) == Outcome.QUERY_SENT
            [real] = router.pending_handshakes
            guess = rng.getrandbits(64)
            if guess == real:
                continue
            forged = AitfMessage(kind=MessageKind.VERIFY_REPLY, flow_label=attack_label, requester="G_host",
                                 destination="B_gw1", nonce=guess)
            assert router.gw_on_verify_reply(forged, "B_gw2", 10) == Outcome.BAD_NONCE
            assert len(router.filters) == 0


class TestProvisioning:

    def test_victim_gateway_tables(self, settings):
        report = run_scenario(load_scenario("provisioning-load", settings=settings), settings=settings)
        g_gw1 = report.node("G_gw1")
        assert 54 <= g_gw1["filter_high_water"] <= 66
        assert 5880 <= g_gw1["shadow_high_water"] <= 6120
        assert g_gw1["table_full"] == 0
        assert g_gw1["shadow_overflow"] == 0
        assert report.node("B_gw1")["table_full"] == 0
        assert report.ok

    def test_attacker_gateway_bound_per_client(self, settings):
        report = run_scenario(load_scenario("client-bound", settings=settings), settings=settings)
        b_gw1 = report.node("B_gw1")
        assert b_gw1["group_high_water"]["B_host"] == 60
        assert b_gw1["budget_denied"] > 0
        assert report.ok


@pytest.mark.parametrize("name", list(BUILTIN_SCENARIOS))
def test_builtin_runs_are_reproducible(settings, name):
    config = load_scenario(name, settings=settings)
    first = run_scenario(config, duration=3000, trace=True, settings=settings)
    second = run_scenario(config, duration=3000, trace=True, settings=settings)
    assert first.to_json() == second.to_json()
    assert first.trace == second.trace


@pytest.mark.parametrize("name, duration", [("on-off", None), ("provisioning-load", 70000)])
def test_long_runs_are_reproducible(settings, name, duration):
    config = load_scenario(name, settings=settings)
    first = run_scenario(config, duration=duration, trace=True, settings=settings)
    second = run_scenario(config, duration=duration, trace=True, settings=settings)
    # past the filter lifetime, so expiries and shadow-log hits are part of both runs
    assert first.duration > config.params.timeout
    assert first.to_json() == second.to_json()
    assert first.trace == second.trace
