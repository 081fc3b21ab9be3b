"""Tests for aitfsim.harness: scenario validation, network construction and runs."""

import json
import logging

import pytest

from aitfsim.core import parse_address
from aitfsim.harness import (ScenarioError, build_network, load_scenario,
                             load_scenario_text, parse_scenario, run_scenario)
from aitfsim.logger import Logger
from aitfsim.scenarios import BUILTIN_SCENARIOS, builtin

TINY = """\
name: tiny
duration: 2s
nodes:
  - id: V
    kind: host
    address: 10.1.0.1
  - id: Vgw
    kind: border
  - id: Agw
    kind: border
  - id: A
    kind: host
    address: 10.2.0.1
links:
  - {a: Vgw, b: V, delay: 5}
  - {a: Vgw, b: Agw}
  - {a: Agw, b: A}
flows:
  - {id: f, src: A, dst: V, rate: 100}
"""


def load(text, settings):
    return load_scenario_text(text, origin="tiny.yaml", settings=settings)


def failure(text, settings):
    with pytest.raises(ScenarioError) as info:
        load(text, settings)
    return info.value


class TestValidation:

    def test_valid(self, settings):
        config = load(TINY, settings)
        assert config.name == "tiny"
        assert config.duration == 2000
        assert config.seed == 1
        assert config.node("A").address == parse_address("10.2.0.1")
        assert config.flows[0].header.dst == parse_address("10.1.0.1")
        assert config.params.timeout == 60000

    def test_unknown_kind_names_field_and_line(self, settings):
        err = failure(TINY.replace("kind: border", "kind: switch", 1), settings)
        assert err.field == "nodes[1].kind"
        assert err.line == 8
        assert str(err).startswith("tiny.yaml:8: nodes[1].kind: ")

    def test_unknown_top_level_key(self, settings):
        err = failure(TINY + "colour: red\n", settings)
        assert err.field == "colour"
        assert err.line == 20

    def test_malformed_yaml(self, settings):
        err = failure(TINY + "  - {id: g, src: [\n", settings)
        assert err.line is not None
        assert err.source == "tiny.yaml"

    def test_host_must_attach_to_one_border_router(self, settings):
        err = failure(TINY.replace("  - {a: Agw, b: A}", "  - {a: Agw, b: A}\n  - {a: Vgw, b: A}"), settings)
        assert err.field == "nodes[3]"
        assert "exactly one border router" in err.message

    def test_disconnected_topology(self, settings):
        err = failure(TINY.replace("  - {a: Vgw, b: Agw}\n", ""), settings)
        assert err.field == "links"
        assert "not connected" in err.message

    def test_flow_source_must_be_a_host(self, settings):
        err = failure(TINY.replace("src: A", "src: Agw"), settings)
        assert err.field == "flows[0].src"
        assert err.line == 19

    def test_flow_destination_must_exist(self, settings):
        err = failure(TINY.replace("dst: V", "dst: 10.9.9.9"), settings)
        assert err.field == "flows[0].dst"

    @pytest.mark.parametrize("value", ["0", "-5", "fast"])
    def test_flow_rate(self, settings, value):
        err = failure(TINY.replace("rate: 100", f"rate: {value}"), settings)
        assert err.field == "flows[0].rate"

    def test_contract_needs_a_link(self, settings):
        err = failure(TINY + "contracts:\n  - {edge: [V, Agw], r1: 10, r2: 1}\n", settings)
        assert err.field == "contracts[0].edge"
        assert err.line == 21

    def test_duplicate_contract(self, settings):
        extra = "contracts:\n  - {edge: [Vgw, V], r1: 10, r2: 1}\n  - {edge: [V, Vgw], r1: 10, r2: 1}\n"
        err = failure(TINY + extra, settings)
        assert err.field == "contracts[1]"

    def test_classifier_names_only_its_own_host(self, settings):
        err = failure(TINY + "classifiers:\n  - host: V\n    labels: ['*>10.2.0.1']\n", settings)
        assert err.field == "classifiers[0].labels[0]"

    def test_only_spoofers_forge(self, settings):
        text = TINY.replace("    address: 10.2.0.1\n",
                            "    address: 10.2.0.1\n    forged:\n      - {kind: VERIFY_REPLY, label: '*>10.1.0.1',"
                            " destination: Vgw}\n")
        err = failure(text, settings)
        assert err.field == "nodes[3].forged"

    def spoofer(self, entry):
        return TINY.replace("    address: 10.2.0.1\n",
                            f"    address: 10.2.0.1\n    behavior: spoofer\n    forged:\n      - {entry}\n")

    def test_forged_entry(self, settings):
        config = load(self.spoofer("{kind: VERIFY_REPLY, label: '10.2.0.1>10.1.0.1', destination: Agw, nonce: 7}"),
                      settings)
        [forged] = config.node("A").forged
        assert (forged.destination, forged.requester, forged.nonce) == ("Agw", "A", 7)

    def test_forged_entry_needs_a_destination(self, settings):
        err = failure(self.spoofer("{kind: FILTER_REQ, req_type: TO_VICTIM_GW, label: '10.2.0.1>10.1.0.1'}"),
                      settings)
        assert err.field == "nodes[3].forged[0].destination"
        assert "needs a destination" in err.message

    @pytest.mark.parametrize("nonce", ["abc", "'12'", "-1", "18446744073709551616", "true", "1.5"])
    def test_forged_nonce_must_be_a_64_bit_integer(self, settings, nonce):
        err = failure(self.spoofer("{kind: VERIFY_REPLY, label: '10.2.0.1>10.1.0.1', destination: Agw,"
                                   f" nonce: {nonce}}}"), settings)
        assert err.field == "nodes[3].forged[0].nonce"

    def test_on_off_needs_periods(self, settings):
        err = failure(TINY.replace("    address: 10.2.0.1\n", "    address: 10.2.0.1\n    behavior: on_off\n"),
                      settings)
        assert err.field == "nodes[3].on_ms"

    def test_missing_file(self, settings, tmp_path):
        path = str(tmp_path / "missing.json")
        with pytest.raises(ScenarioError) as info:
            load_scenario(path, settings=settings)
        assert info.value.source == path

    def test_json_file(self, settings, tmp_path):
        path = tmp_path / "fig1.json"
        path.write_text(json.dumps(builtin("fig1-cooperative")))
        config = load_scenario(str(path), settings=settings)
        assert config.name == "fig1-cooperative"
        assert config.source == str(path)

    def test_every_builtin_is_valid(self, settings):
        for name in BUILTIN_SCENARIOS:
            assert load_scenario(name, settings=settings).name == name


class TestContracts:

    def test_defaults_fill_every_adjacency(self, settings):
        config = load(TINY, settings)
        assert len(config.contracts) == 3
        by_edge = {frozenset((c.party_a, c.party_b)): c for c in config.contracts}
        host_side = by_edge[frozenset(("Vgw", "V"))]
        assert host_side.party_a == "Vgw"
        assert host_side.direction("V", "Vgw").rate == 100
        assert host_side.direction("Vgw", "V").rate == 1

    def test_router_provides_for_host_listed_first(self, settings):
        config = load(TINY.replace("{a: Agw, b: A}", "{edge: [A, Agw]}"), settings)
        contract = [c for c in config.contracts if "A" in (c.party_a, c.party_b)][0]
        assert contract.party_a == "Agw"

    def test_both_sides_of_the_chain_point_toward_the_core(self, settings):
        config = load_scenario("fig1-bgw1-ignores", settings=settings)
        by_edge = {frozenset((c.party_a, c.party_b)): c for c in config.contracts}
        victim_side = by_edge[frozenset(("G_gw1", "G_gw2"))]
        attack_side = by_edge[frozenset(("B_gw1", "B_gw2"))]
        assert victim_side.party_a == "G_gw2"
        assert attack_side.party_a == "B_gw2"
        assert victim_side.direction("G_gw1", "G_gw2").rate == 100
        assert victim_side.direction("G_gw1", "G_gw2").rate == attack_side.direction("B_gw1", "B_gw2").rate
        assert victim_side.direction("G_gw2", "G_gw1").rate == attack_side.direction("B_gw2", "B_gw1").rate == 1

    def test_order_of_link_ends_does_not_pick_the_provider(self, settings):
        swapped = load(TINY.replace("{a: Vgw, b: V, delay: 5}", "{a: V, b: Vgw, delay: 5}"), settings)
        contract = [c for c in swapped.contracts if "V" in (c.party_a, c.party_b)][0]
        assert contract.party_a == "Vgw"

    def test_equal_depth_link_falls_back_to_the_a_end(self, settings):
        config = load(TINY, settings)
        contract = [c for c in config.contracts if {c.party_a, c.party_b} == {"Vgw", "Agw"}][0]
        assert contract.party_a == "Vgw"

    def test_link_names_its_provider(self, settings):
        config = load(TINY.replace("{a: Vgw, b: Agw}", "{a: Vgw, b: Agw, provider: Agw}"), settings)
        contract = [c for c in config.contracts if {c.party_a, c.party_b} == {"Vgw", "Agw"}][0]
        assert contract.party_a == "Agw"
        assert contract.direction("Vgw", "Agw").rate == 100

    def test_provider_must_be_an_end_of_the_link(self, settings):
        err = failure(TINY.replace("{a: Vgw, b: Agw}", "{a: Vgw, b: Agw, provider: V}"), settings)
        assert err.field == "links[1].provider"

    def test_scenario_defaults_override_settings(self, settings):
        config = load(TINY + "defaults: {r1: 5, r2: 2}\n", settings)
        assert all(c.rate_b_to_a == 5 and c.rate_a_to_b == 2 for c in config.contracts)


class TestFlows:

    def test_repeat_expands_with_distinct_ports(self, settings):
        text = TINY.replace("{id: f, src: A, dst: V, rate: 100}",
                            "{id: f, src: A, dst: V, rate: 100, sport: 4000, duration: 50ms,"
                            " repeat: {count: 3, every: 100}}")
        [spec] = load(text, settings).flows
        flows = spec.expand()
        assert [f.flow_id for f in flows] == ["f#0", "f#1", "f#2"]
        assert [f.header.sport for f in flows] == [4000, 4001, 4002]
        assert [(f.start, f.stop) for f in flows] == [(0, 50), (100, 150), (200, 250)]
        assert {f.group for f in flows} == {"f"}

    def test_undesired_flows_reach_the_classifier(self, settings):
        config = load(TINY.replace("rate: 100}", "rate: 100, undesired: true}"), settings)
        net = build_network(config)
        flow = net.flow_stats["f"].flow
        assert net.nodes["V"].classifier.classify(flow.header) == flow.label


class TestRuns:

    def test_unfiltered_flow_has_full_bandwidth(self, settings):
        report = run_scenario(load(TINY, settings), settings=settings)
        f = report.flow("f")
        assert f.window == (0, 2000)
        assert f.offered_packets == 200
        assert f.delivered_packets == 200
        assert f.r == 1.0
        assert f.max_round == 0
        assert report.ok

    def test_duration_override(self, settings):
        report = run_scenario(load(TINY, settings), duration=1000, settings=settings)
        assert report.duration == 1000
        assert report.flow("f").offered_packets == 100

    def test_non_positive_duration(self, settings):
        with pytest.raises(ScenarioError):
            run_scenario(load(TINY, settings), duration=0, settings=settings)

    def test_same_seed_same_report(self, settings):
        config = load_scenario("fig1-bgw1-ignores", settings=settings)
        first = run_scenario(config, seed=3, duration=3000, settings=settings).to_json()
        second = run_scenario(config, seed=3, duration=3000, settings=settings).to_json()
        assert first == second

    def test_trace(self, settings):
        config = load_scenario("fig1-cooperative", settings=settings)
        report = run_scenario(config, trace=True, duration=1000, settings=settings)
        assert any("temp-installed" in line for line in report.trace)
        assert not any("deliver" in line.split()[2:3] for line in report.trace)
        quiet = run_scenario(config, duration=1000, settings=settings)
        assert quiet.trace == []

    def test_audit_finds_nothing_in_a_correct_run(self, settings):
        config = load_scenario("fig1-cooperative", settings=settings)
        report = run_scenario(config, audit=True, duration=2000, settings=settings)
        assert report.violations == []

    def test_without_adversaries(self, settings):
        config = load_scenario("spoofer", settings=settings)
        baseline = config.without_adversaries()
        assert baseline.node("S_host").forged == ()
        assert config.node("S_host").forged

    def test_log_records_name_the_run(self, settings, caplog):
        aitf_logger = logging.getLogger("aitfsim")
        level = aitf_logger.level
        aitf_logger.addHandler(caplog.handler)
        aitf_logger.setLevel(logging.INFO)
        try:
            run_scenario(load(TINY, settings), seed=4, duration=500, settings=settings)
        finally:
            aitf_logger.removeHandler(caplog.handler)
            aitf_logger.setLevel(level)
        [record] = [r for r in caplog.records if "events in 500ms" in r.getMessage()]
        assert record.run == "tiny seed=4"
        assert Logger().run == "-"
