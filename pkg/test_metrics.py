"""Tests for aitfsim.metrics: oracles, effective bandwidth and report rendering."""

import csv
import io
import json

import pytest

from aitfsim.config import Config
from aitfsim.harness import load_scenario, run_scenario
from aitfsim.metrics import (delivered_bursts, offered_between, oracle_provisioning,
                             oracle_r)
from aitfsim.node import Flow


class TestOracles:

    def test_one_non_cooperating_node(self):
        assert oracle_r(1, 0, 50, 60000) == pytest.approx(8.33e-4, rel=1e-3)

    def test_two_non_cooperating_nodes(self):
        assert oracle_r(2, 0, 50, 60000) == pytest.approx(1.67e-3, rel=1e-3)

    def test_detection_delay_counts(self):
        assert oracle_r(1, 100, 50, 60000) == pytest.approx(150 / 60000)

    def test_compliant_source_gives_zero(self):
        assert oracle_r(0, 0, 50, 60000) == 0

    @pytest.mark.parametrize("args", [(1, 0, 50, 0), (-1, 0, 50, 60000)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            oracle_r(*args)

    @pytest.mark.parametrize("r1,r2,timeout,temp,expected", [
        (100, 1, 60000, 600, (6000, 60, 6000, 60)),
        (200, 2, 60000, 600, (12000, 120, 12000, 120)),
        (1, 1, 1000, 1000, (1, 1, 1, 1)),
    ])
    def test_provisioning(self, r1, r2, timeout, temp, expected):
        p = oracle_provisioning(r1, r2, timeout, temp)
        assert (p.N_v, p.n_v, p.m_v, p.n_a) == expected
        assert all(isinstance(v, int) for v in p.to_dict().values())

    def test_provisioning_rejects_zero(self):
        with pytest.raises(ValueError):
            oracle_provisioning(0, 1, 60000, 600)


class TestEffectiveBandwidth:

    def test_offered_ignores_pauses(self, attack_header):
        flow = Flow("f", "B_host", attack_header, 1000, start=10, stop=510)
        flow.stopped_until = 400
        assert offered_between(flow, 0, 60000) == 500
        assert offered_between(flow, 110, 210) == 100
        assert offered_between(flow, 600, 700) == 0

    def test_bursts(self):
        arrivals = [0, 1, 2, 3, 100, 101, 500]
        bursts = delivered_bursts(arrivals, interval=1, gap_packets=3)
        assert [(b["start"], b["end"], b["packets"]) for b in bursts] == [(0, 3, 4), (100, 101, 2), (500, 500, 1)]
        assert bursts[0]["duration"] == 3


class TestReport:

    @pytest.fixture(scope="class")
    def report(self):
        settings = Config("/nonexistent/aitfsim.yaml")
        config = load_scenario("client-bound", settings=settings)
        return run_scenario(config, duration=5000, settings=settings)

    def test_templated_flows_are_summarised_by_group(self, report):
        data = json.loads(report.to_json())
        assert data["flows"] == []
        [group] = data["groups"]
        assert group["group"] == "short"
        assert group["flows"] == 180
        assert [o["flow"] for o in data["oracle"]] == ["short"]

    def test_csv_lists_every_flow(self, report):
        rows = list(csv.DictReader(io.StringIO(report.to_csv())))
        assert len(rows) == 180
        assert [row["flow"] for row in rows[:3]] == ["short#0", "short#1", "short#2"]
        assert all(row["group"] == "short" for row in rows)

    def test_text(self, report):
        text = report.render("text")
        assert text.startswith("Scenario client-bound  seed=1  duration=5000ms")
        assert "No invariant violations." in text
        assert "short" in text

    def test_unknown_format(self, report):
        with pytest.raises(ValueError):
            report.render("xml")

    def test_node_counters(self, report):
        bgw1 = report.node("B_gw1")
        assert bgw1["kind"] == "border"
        assert bgw1["filter_installs"] >= 1
        assert report.node("B_host")["behavior"] == "compliant"
