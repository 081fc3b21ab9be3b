"""Tests for aitfsim.tables: filter table and shadow log."""

import random

import pytest

from aitfsim.core import FlowLabel, PacketAction, PacketHeader, parse_address
from aitfsim.tables import (FilterTable, InstallResult, Origin, ShadowLog,
                            expire, filter_install, filter_match,
                            shadow_lookup)

DST = "10.1.1.7"


def header(src="10.0.0.5", sport=4000):
    return PacketHeader(parse_address(src), parse_address(DST), "udp", sport, 80)


def label(src="10.0.0.5", sport=4000):
    return FlowLabel.exact(header(src, sport))


ORIGIN = Origin("G_gw1")


class TestFilterTable:

    def test_full_table_rejects_without_eviction(self):
        table = FilterTable(60)
        for i in range(60):
            assert filter_install(table, label(sport=i), 0, 600, ORIGIN) == InstallResult.OK
        assert filter_install(table, label(sport=60), 0, 600, ORIGIN) == InstallResult.TABLE_FULL
        assert len(table) == 60
        assert table.table_full_count == 1
        assert all(table.peek(label(sport=i), "G_gw1") for i in range(60))

    def test_expiry_is_inclusive(self):
        table = FilterTable(10)
        filter_install(table, label(), 0, 600, ORIGIN)
        assert filter_match(table, header(), 599) == PacketAction.DROP
        assert filter_match(table, header(), 600) == PacketAction.PASS
        assert filter_match(table, header(), 601) == PacketAction.PASS

    def test_expire_count(self):
        table = FilterTable(10)
        filter_install(table, label(), 0, 600, ORIGIN)
        assert expire(table, 599) == 0
        assert expire(table, 600) == 1
        assert expire(table, 600) == 0
        assert len(table) == 0

    def test_refresh_extends_same_key(self):
        table = FilterTable(1)
        filter_install(table, label(), 0, 600, ORIGIN)
        assert filter_install(table, label(), 500, 600, ORIGIN) == InstallResult.OK
        assert len(table) == 1
        assert expire(table, 600) == 0
        assert filter_match(table, header(), 1099) == PacketAction.DROP
        assert expire(table, 1100) == 1

    def test_refresh_never_shortens(self):
        table = FilterTable(1)
        filter_install(table, label(), 0, 60000, ORIGIN, group="B_host")
        filter_install(table, label(), 10, 600, ORIGIN)
        assert table.peek(label(), "G_gw1").expires_at == 60000

    def test_distinct_requesters_are_distinct_entries(self):
        table = FilterTable(2)
        filter_install(table, label(), 0, 600, Origin("G_gw1"))
        filter_install(table, label(), 0, 900, Origin("X_gw"))
        assert len(table) == 2
        assert filter_match(table, header(), 700) == PacketAction.DROP

    def test_wildcard_label(self):
        table = FilterTable(4)
        filter_install(table, FlowLabel.parse(f"10.0.0.0/8>{DST}"), 0, 600, ORIGIN)
        assert filter_match(table, header("10.9.9.9"), 10) == PacketAction.DROP
        assert filter_match(table, header("11.9.9.9"), 10) == PacketAction.PASS

    def test_match_stamps_last_matched(self):
        table = FilterTable(4)
        filter_install(table, label(), 0, 600, ORIGIN)
        table.match(header(), 42)
        assert table.peek(label(), "G_gw1").last_matched_at == 42
        assert table.covering(header(), 50) is not None
        assert table.peek(label(), "G_gw1").last_matched_at == 42

    def test_group_counts_and_high_water(self):
        table = FilterTable(10)
        for i in range(3):
            table.install(label(sport=i), 0, 100 * (i + 1), ORIGIN, group="B_host")
        assert table.group_counts["B_host"] == 3
        table.expire(150)
        assert table.group_counts["B_host"] == 2
        table.expire(300)
        assert "B_host" not in table.group_counts
        assert table.group_high_water["B_host"] == 3

    def test_nonpositive_lifetime(self):
        with pytest.raises(ValueError):
            FilterTable(1).install(label(), 0, 0, ORIGIN)

    def test_randomized_timeline(self):
        rng = random.Random(7)
        table = FilterTable(25)
        model = {}
        now = 0
        for _ in range(2000):
            now += rng.randint(0, 40)
            sport = rng.randint(0, 40)
            if rng.random() < 0.5:
                lifetime = rng.randint(1, 400)
                live = {k: v for k, v in model.items() if now < v}
                result = table.install(label(sport=sport), now, lifetime, ORIGIN)
                if sport in live:
                    assert result == InstallResult.OK
                    model[sport] = max(live[sport], now + lifetime)
                elif len(live) >= 25:
                    assert result == InstallResult.TABLE_FULL
                else:
                    assert result == InstallResult.OK
                    model[sport] = now + lifetime
            else:
                expected = PacketAction.DROP if now < model.get(sport, -1) else PacketAction.PASS
                assert table.match(header(sport=sport), now) == expected
            assert len(table.live_entries(now)) <= 25


class TestShadowLog:

    def test_lookup_within_retention(self):
        log = ShadowLog(10)
        log.record(label(), "G_gw1", 0, 60000)
        assert shadow_lookup(log, header(), 59999) is not None
        assert shadow_lookup(log, header(), 60000) is None
        assert shadow_lookup(log, header(), 60001) is None

    def test_earliest_entry_wins(self):
        log = ShadowLog(10)
        log.record(FlowLabel.parse(f"*>{DST}"), "G_gw1", 100, 60000, round_index=2)
        log.record(label(), "G_gw1", 50, 60000)
        log.record(label(), "X_gw", 50, 60000)
        hit = log.lookup(header(), 200)
        assert (hit.logged_at, hit.requester) == (50, "G_gw1")

    def test_rerecord_moves_to_latest(self):
        log = ShadowLog(10)
        log.record(label(), "G_gw1", 0, 60000, attack_path=("B_gw1", "G_gw1"))
        log.record(label(), "X_gw", 10, 60000)
        log.record(label(), "G_gw1", 20, 60000, round_index=2)
        hit = log.lookup(header(), 30)
        assert hit.requester == "X_gw"
        entry = log.get(label(), "G_gw1", 30)
        assert entry.attack_path == ("B_gw1", "G_gw1")
        assert entry.round_index == 2
        assert entry.expires_at == 60020

    def test_overflow(self):
        log = ShadowLog(2)
        assert log.record(label(sport=1), "G_gw1", 0, 100)
        assert log.record(label(sport=2), "G_gw1", 0, 100)
        assert not log.record(label(sport=3), "G_gw1", 0, 100)
        assert log.overflow_count == 1
        assert log.record(label(sport=3), "G_gw1", 100, 100)
        assert log.high_water == 2
