"""Tests for aitfsim.contract: token-bucket policing and filtering contracts."""

import random
from fractions import Fraction

import pytest

from aitfsim.contract import (ContractBook, ContractDirection, ContractError,
                              FilteringContract, PolicerState, RequestPolicer,
                              Verdict, police)


def run(direction, arrivals):
    state = PolicerState.full(direction, arrivals[0] if arrivals else 0)
    return [police(state, direction, t) for t in arrivals]


def stepwise_replay(direction, arrivals):
    """Millisecond-by-millisecond bucket, independent of ``police``."""
    accepted = []
    tokens = Fraction(direction.burst)
    clock = arrivals[0]
    for t in arrivals:
        while clock < t:
            tokens = min(Fraction(direction.burst), tokens + direction.rate / 1000)
            clock += 1
        if tokens >= 1:
            tokens -= 1
            accepted.append(True)
        else:
            accepted.append(False)
    return accepted


class TestPolice:

    def test_burst_at_time_zero(self):
        direction = ContractDirection(Fraction(100), 100)
        verdicts = run(direction, [0] * 101)
        assert verdicts[:100] == [Verdict.ACCEPT] * 100
        assert verdicts[100] == Verdict.DROP

    def test_one_second_of_uniform_arrivals(self):
        direction = ContractDirection(Fraction(100), 100)
        # one request per millisecond for a full second
        verdicts = run(direction, list(range(1, 1001)))
        assert verdicts.count(Verdict.ACCEPT) == 200

    def test_arrivals_starting_at_zero_leave_last_token_unrefilled(self):
        direction = ContractDirection(Fraction(100), 100)
        verdicts = run(direction, list(range(0, 1000)))
        assert verdicts.count(Verdict.ACCEPT) == 199

    def test_refill_caps_at_burst(self):
        direction = ContractDirection(Fraction(1), 1)
        state = PolicerState.full(direction)
        assert police(state, direction, 0) == Verdict.ACCEPT
        assert police(state, direction, 500) == Verdict.DROP
        assert police(state, direction, 1000) == Verdict.ACCEPT
        assert police(state, direction, 100000) == Verdict.ACCEPT
        assert state.tokens == 0

    def test_clock_backwards(self):
        direction = ContractDirection(Fraction(1), 1)
        state = PolicerState.full(direction, 10)
        with pytest.raises(ContractError):
            police(state, direction, 5)

    def test_random_sequences_against_replay_and_bound(self):
        rng = random.Random(20)
        for _ in range(1000):
            direction = ContractDirection(Fraction(rng.choice([1, 5, 10, 100, 250])), rng.randint(1, 10))
            arrivals = sorted(rng.randint(0, 400) for _ in range(rng.randint(1, 40)))
            verdicts = run(direction, arrivals)
            assert [v == Verdict.ACCEPT for v in verdicts] == stepwise_replay(direction, arrivals)
            times = [t for t, v in zip(arrivals, verdicts) if v == Verdict.ACCEPT]
            for i, start in enumerate(times):
                for j in range(i, len(times)):
                    window = times[j] - start
                    assert j - i + 1 <= direction.burst + direction.rate * window / 1000


class TestFilteringContract:

    def test_directions(self):
        contract = FilteringContract("G_gw1", "G_host", rate_a_to_b=1, rate_b_to_a=100)
        assert contract.direction("G_host", "G_gw1") == ContractDirection(Fraction(100), 100)
        assert contract.direction("G_gw1", "G_host") == ContractDirection(Fraction(1), 1)
        with pytest.raises(ContractError):
            contract.direction("G_gw1", "B_gw1")

    def test_burst_defaults_to_one_second(self):
        contract = FilteringContract("a", "b", rate_a_to_b=Fraction(1, 2), rate_b_to_a=2.5)
        assert contract.burst_a_to_b == 1
        assert contract.burst_b_to_a == 2

    def test_from_mapping(self):
        contract = FilteringContract.from_mapping({"edge": ["B_gw1", "B_host"], "r1": 100, "r2": 1, "burst2": 3})
        assert contract.party_a == "B_gw1"
        assert contract.rate_a_to_b == 1
        assert contract.burst_a_to_b == 3
        assert contract.burst_b_to_a == 100

    @pytest.mark.parametrize("values", [
        {"edge": ["a"], "r1": 1, "r2": 1},
        {"edge": ["a", "a"], "r1": 1, "r2": 1},
        {"edge": ["a", "b"], "r1": 0, "r2": 1},
        {"edge": ["a", "b"], "r1": 1},
        {"edge": ["a", "b"], "r1": 1, "r2": 1, "burst1": 0},
        {"edge": ["a", "b"], "r1": "fast", "r2": 1},
    ])
    def test_invalid(self, values):
        with pytest.raises(ContractError):
            FilteringContract.from_mapping(values)


class TestContractBook:

    def test_one_contract_per_pair(self):
        book = ContractBook([FilteringContract("a", "b", 1, 1)])
        assert ("b", "a") in book
        with pytest.raises(ContractError):
            book.add(FilteringContract("b", "a", 2, 2))

    def test_missing_contract(self):
        with pytest.raises(ContractError):
            ContractBook().direction("a", "b")


class TestRequestPolicer:

    def test_incoming_and_outgoing_are_separate(self):
        book = ContractBook([FilteringContract("B_gw1", "B_host", rate_a_to_b=1, rate_b_to_a=100)])
        policer = RequestPolicer("B_gw1", book)
        assert policer.budget("B_host", 0) == Verdict.ACCEPT
        assert policer.budget("B_host", 0) == Verdict.DROP
        assert policer.budget_denied["B_host"] == 1
        for _ in range(100):
            assert policer.admit("B_host", 0) == Verdict.ACCEPT
        assert policer.admit("B_host", 0) == Verdict.DROP
        assert policer.accepted["B_host"] == 100
        assert policer.dropped["B_host"] == 1
