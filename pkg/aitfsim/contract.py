"""Filtering contracts and token-bucket policing of filtering requests.

A contract binds two adjacent AITF parties. ``party_a`` is the provider:
``rate_b_to_a`` is R_1 (client to provider) and ``rate_a_to_b`` is R_2
(provider to client). Rates are requests per second; buckets start full.
"""

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, Optional, Tuple, Union

from .core import NodeId, SimTime

Rate = Union[int, float, str, Fraction]


def _as_rate(value: Rate) -> Fraction:
    rate = Fraction(value).limit_denominator(10 ** 6) if isinstance(value, float) else Fraction(value)
    return rate


class Verdict(str, Enum):
    ACCEPT = "ACCEPT"
    DROP = "DROP"


@dataclass(frozen=True)
class ContractDirection:
    rate: Fraction
    burst: int


@dataclass
class PolicerState:
    tokens: Fraction
    last_refill: SimTime

    @classmethod
    def full(cls, direction: ContractDirection, now: SimTime = 0) -> "PolicerState":
        return cls(tokens=Fraction(direction.burst), last_refill=now)


def police(state: PolicerState, direction: ContractDirection, now: SimTime) -> Verdict:
    """Refill at ``rate`` up to ``burst`` then spend one token if available."""
    elapsed = now - state.last_refill
    if elapsed < 0:
        raise ContractError(f"policer clock went backwards ({state.last_refill} -> {now})")
    if elapsed:
        state.tokens = min(Fraction(direction.burst), state.tokens + direction.rate * elapsed / 1000)
        state.last_refill = now
    if state.tokens >= 1:
        state.tokens -= 1
        return Verdict.ACCEPT
    return Verdict.DROP


@dataclass(frozen=True)
class FilteringContract:
    party_a: NodeId
    party_b: NodeId
    rate_a_to_b: Fraction
    rate_b_to_a: Fraction
    burst_a_to_b: Optional[int] = None
    burst_b_to_a: Optional[int] = None

    def __post_init__(self):
        if self.party_a == self.party_b:
            raise ContractError(f"contract edge needs two parties, got {self.party_a} twice")
        for name in ("rate_a_to_b", "rate_b_to_a"):
            rate = _as_rate(getattr(self, name))
            if rate <= 0:
                raise ContractError(f"{name} must be positive")
            object.__setattr__(self, name, rate)
        for name, rate_name in (("burst_a_to_b", "rate_a_to_b"), ("burst_b_to_a", "rate_b_to_a")):
            burst = getattr(self, name)
            if burst is None:
                # one second's worth of tokens, at least one
                burst = max(1, int(getattr(self, rate_name)))
            if int(burst) != burst or burst < 1:
                raise ContractError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(burst))

    @classmethod
    def from_mapping(cls, values: dict) -> "FilteringContract":
        """``{"edge": [provider, client], "r1": .., "r2": .., "burst1": .., "burst2": ..}``"""
        edge = values.get("edge")
        if not isinstance(edge, (list, tuple)) or len(edge) != 2:
            raise ContractError("edge must list exactly two node ids")
        try:
            return cls(
                party_a=str(edge[0]),
                party_b=str(edge[1]),
                rate_a_to_b=values["r2"],
                rate_b_to_a=values["r1"],
                burst_a_to_b=values.get("burst2"),
                burst_b_to_a=values.get("burst1"),
            )
        except KeyError as e:
            raise ContractError(f"missing {e.args[0]}") from None
        except (TypeError, ValueError, ZeroDivisionError) as e:
            raise ContractError(str(e)) from None

    @property
    def edge(self) -> FrozenSet[NodeId]:
        return frozenset((self.party_a, self.party_b))

    def direction(self, sender: NodeId, receiver: NodeId) -> ContractDirection:
        if (sender, receiver) == (self.party_a, self.party_b):
            return ContractDirection(self.rate_a_to_b, self.burst_a_to_b)
        if (sender, receiver) == (self.party_b, self.party_a):
            return ContractDirection(self.rate_b_to_a, self.burst_b_to_a)
        raise ContractError(f"{sender}->{receiver} is not covered by contract {self.party_a}<->{self.party_b}")


class ContractBook:
    """All contracts of a topology, one per adjacent pair."""

    def __init__(self, contracts: Iterable[FilteringContract] = ()):
        self._contracts: Dict[FrozenSet[NodeId], FilteringContract] = {}
        for contract in contracts:
            self.add(contract)

    def add(self, contract: FilteringContract) -> None:
        if contract.edge in self._contracts:
            raise ContractError(f"duplicate contract for {contract.party_a}<->{contract.party_b}")
        self._contracts[contract.edge] = contract

    def get(self, a: NodeId, b: NodeId) -> Optional[FilteringContract]:
        return self._contracts.get(frozenset((a, b)))

    def direction(self, sender: NodeId, receiver: NodeId) -> ContractDirection:
        contract = self.get(sender, receiver)
        if contract is None:
            raise ContractError(f"no filtering contract between {sender} and {receiver}")
        return contract.direction(sender, receiver)

    def __contains__(self, edge: Tuple[NodeId, NodeId]) -> bool:
        return frozenset(edge) in self._contracts

    def __iter__(self):
        return iter(self._contracts.values())

    def __len__(self) -> int:
        return len(self._contracts)


class RequestPolicer:
    """Token buckets of one node, per neighbour and per direction.

    ``admit`` polices requests arriving from a neighbour; ``budget`` polices
    requests this node wants to send to a neighbour.
    """

    def __init__(self, owner: NodeId, book: ContractBook):
        self.owner = owner
        self.book = book
        self._incoming: Dict[NodeId, PolicerState] = {}
        self._outgoing: Dict[NodeId, PolicerState] = {}
        self.accepted: Counter = Counter()
        self.dropped: Counter = Counter()
        self.budget_denied: Counter = Counter()

    def _check(self, states: Dict[NodeId, PolicerState], sender: NodeId,
               receiver: NodeId, key: NodeId, now: SimTime) -> Verdict:
        direction = self.book.direction(sender, receiver)
        state = states.get(key)
        if state is None:
            state = states[key] = PolicerState.full(direction, now)
        return police(state, direction, now)

    def admit(self, neighbor: NodeId, now: SimTime) -> Verdict:
        verdict = self._check(self._incoming, neighbor, self.owner, neighbor, now)
        if verdict == Verdict.ACCEPT:
            self.accepted[neighbor] += 1
        else:
            self.dropped[neighbor] += 1
        return verdict

    def budget(self, neighbor: NodeId, now: SimTime) -> Verdict:
        verdict = self._check(self._outgoing, self.owner, neighbor, neighbor, now)
        if verdict == Verdict.DROP:
            self.budget_denied[neighbor] += 1
        return verdict

    def state(self, neighbor: NodeId) -> Optional[PolicerState]:
        return self._incoming.get(neighbor)


class ContractError(Exception):
    """Invalid or missing filtering contract."""
    pass
