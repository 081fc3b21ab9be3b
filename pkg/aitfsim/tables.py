"""Per-router stores: the bounded wire-speed filter table and the shadow log.

Both stores expire entries inclusively: an entry whose ``expires_at`` is at
or before ``now`` is gone, so it is live only while ``now < expires_at``.
Entries are keyed by ``(label, requester)``; a repeated install or record
under the same key refreshes the existing entry.
"""

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Generic, Iterator, List, Optional, Tuple, TypeVar

from .core import (Duration, FlowLabel, NodeId, PacketAction, PacketHeader,
                   SimTime)
from .logger import Logger

EntryKey = Tuple[FlowLabel, NodeId]


class InstallResult(str, Enum):
    OK = "OK"
    TABLE_FULL = "TABLE_FULL"


@dataclass(frozen=True)
class Origin:
    """Provenance of a filter: who asked, and the path the request carried."""

    requester: NodeId
    attack_path: Tuple[NodeId, ...] = ()


@dataclass
class FilterEntry:
    label: FlowLabel
    installed_at: SimTime
    expires_at: SimTime
    origin: Origin
    last_matched_at: Optional[SimTime] = None
    group: Optional[NodeId] = None
    temporary: bool = False

    @property
    def key(self) -> EntryKey:
        return (self.label, self.origin.requester)

    def is_live(self, now: SimTime) -> bool:
        return now < self.expires_at


@dataclass
class ShadowEntry:
    label: FlowLabel
    requester: NodeId
    logged_at: SimTime
    expires_at: SimTime
    attack_path: Tuple[NodeId, ...] = ()
    round_index: int = 1
    seq: int = 0

    @property
    def key(self) -> EntryKey:
        return (self.label, self.requester)

    def is_live(self, now: SimTime) -> bool:
        return now < self.expires_at


E = TypeVar("E", FilterEntry, ShadowEntry)


class _LabelIndex:
    """Candidate lookup by header.

    Fully specified labels sit in a dict keyed by the header tuple they
    match; everything else is bucketed by destination, which is always exact.
    Insertion-ordered dicts keep iteration deterministic.
    """

    def __init__(self):
        self._exact: Dict[tuple, Dict[EntryKey, None]] = {}
        self._by_dst: Dict[object, Dict[EntryKey, None]] = {}

    def _bucket(self, label: FlowLabel, create: bool) -> Optional[Dict[EntryKey, None]]:
        exact_key = label.exact_key()
        store, key = (self._exact, exact_key) if exact_key is not None else (self._by_dst, label.dst)
        bucket = store.get(key)
        if bucket is None and create:
            bucket = store[key] = {}
        return bucket

    def add(self, key: EntryKey) -> None:
        self._bucket(key[0], create=True)[key] = None

    def discard(self, key: EntryKey) -> None:
        label = key[0]
        bucket = self._bucket(label, create=False)
        if bucket is None:
            return
        bucket.pop(key, None)
        if not bucket:
            exact_key = label.exact_key()
            if exact_key is not None:
                del self._exact[exact_key]
            else:
                del self._by_dst[label.dst]

    def candidates(self, header: PacketHeader) -> Iterator[EntryKey]:
        yield from tuple(self._exact.get(header.key(), ()))
        yield from tuple(self._by_dst.get(header.dst, ()))


class _ExpiringStore(Generic[E]):
    """Entries with an expiry heap, a header index and a label index."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.high_water = 0
        self._entries: Dict[EntryKey, E] = {}
        self._expiry: List[Tuple[SimTime, int, EntryKey]] = []
        self._seq = itertools.count()
        self._index = _LabelIndex()
        self._by_label: Dict[FlowLabel, Dict[EntryKey, None]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[E]:
        return iter(list(self._entries.values()))

    def _push_expiry(self, entry: E) -> None:
        heapq.heappush(self._expiry, (entry.expires_at, next(self._seq), entry.key))

    def _insert(self, entry: E) -> None:
        key = entry.key
        self._entries[key] = entry
        self._index.add(key)
        self._by_label.setdefault(entry.label, {})[key] = None
        self._push_expiry(entry)
        self.high_water = max(self.high_water, len(self._entries))

    def _drop(self, key: EntryKey) -> Optional[E]:
        entry = self._entries.pop(key, None)
        if entry is None:
            return None
        self._index.discard(key)
        keys = self._by_label.get(entry.label)
        if keys is not None:
            keys.pop(key, None)
            if not keys:
                del self._by_label[entry.label]
        self._on_drop(entry)
        return entry

    def _on_drop(self, entry: E) -> None:
        pass

    def expire(self, now: SimTime) -> int:
        """Remove every entry with ``expires_at <= now``; idempotent at fixed now."""
        removed = 0
        while self._expiry and self._expiry[0][0] <= now:
            expires_at, _, key = heapq.heappop(self._expiry)
            entry = self._entries.get(key)
            # stale heap item: the entry was refreshed or removed since
            if entry is None or entry.expires_at != expires_at:
                continue
            self._drop(key)
            removed += 1
        return removed

    def get(self, label: FlowLabel, requester: NodeId, now: SimTime) -> Optional[E]:
        entry = self._entries.get((label, requester))
        if entry is not None and entry.is_live(now):
            return entry
        return None

    def with_label(self, label: FlowLabel, now: SimTime) -> List[E]:
        keys = self._by_label.get(label, ())
        return [self._entries[k] for k in keys if self._entries[k].is_live(now)]

    def remove(self, label: FlowLabel, requester: NodeId) -> bool:
        return self._drop((label, requester)) is not None

    def _live_matches(self, header: PacketHeader, now: SimTime) -> Iterator[E]:
        for key in self._index.candidates(header):
            entry = self._entries.get(key)
            if entry is not None and entry.is_live(now) and entry.label.matches(header):
                yield entry


class FilterTable(_ExpiringStore[FilterEntry]):
    """Wire-speed filters of one border router.

    ``capacity`` is the hardware limit; installs beyond it fail with
    TABLE_FULL and nothing is evicted. ``group`` charges an entry to the
    contract edge it serves so per-client bounds can be observed.
    """

    def __init__(self, capacity: int, owner: NodeId = ""):
        super().__init__(capacity)
        self.owner = owner
        self.table_full_count = 0
        self.installs = 0
        self.group_counts: Counter = Counter()
        self.group_high_water: Counter = Counter()
        self.logger = Logger()

    def _on_drop(self, entry: FilterEntry) -> None:
        if entry.group is not None:
            self.group_counts[entry.group] -= 1
            if not self.group_counts[entry.group]:
                del self.group_counts[entry.group]

    def install(self, label: FlowLabel, now: SimTime, lifetime: Duration, origin: Origin,
                group: Optional[NodeId] = None, temporary: bool = False) -> InstallResult:
        if lifetime <= 0:
            raise ValueError(f"filter lifetime must be positive, got {lifetime}")
        self.expire(now)
        expires_at = now + lifetime
        existing = self._entries.get((label, origin.requester))
        if existing is not None:
            if expires_at > existing.expires_at:
                existing.expires_at = expires_at
                self._push_expiry(existing)
            existing.temporary = existing.temporary and temporary
            return InstallResult.OK
        if len(self._entries) >= self.capacity:
            self.table_full_count += 1
            self.logger.warning(f"{self.owner}: filter table full ({self.capacity}), rejecting {label}")
            return InstallResult.TABLE_FULL
        entry = FilterEntry(label=label, installed_at=now, expires_at=expires_at, origin=origin,
                            group=group, temporary=temporary)
        self._insert(entry)
        self.installs += 1
        if group is not None:
            self.group_counts[group] += 1
            self.group_high_water[group] = max(self.group_high_water[group], self.group_counts[group])
        return InstallResult.OK

    def covering(self, header: PacketHeader, now: SimTime) -> Optional[FilterEntry]:
        """First live entry matching ``header``, without touching counters."""
        return next(self._live_matches(header, now), None)

    def match_entries(self, header: PacketHeader, now: SimTime) -> List[FilterEntry]:
        """Live entries matching ``header``; each gets ``last_matched_at = now``."""
        matched = list(self._live_matches(header, now))
        for entry in matched:
            entry.last_matched_at = now
        return matched

    def match(self, header: PacketHeader, now: SimTime) -> PacketAction:
        return PacketAction.DROP if self.match_entries(header, now) else PacketAction.PASS

    def peek(self, label: FlowLabel, requester: NodeId) -> Optional[FilterEntry]:
        """Stored entry for the key, even if it has expired but not been removed."""
        return self._entries.get((label, requester))

    def live_for_label(self, label: FlowLabel, now: SimTime) -> bool:
        return bool(self.with_label(label, now))

    def live_entries(self, now: SimTime) -> List[FilterEntry]:
        return [e for e in self._entries.values() if e.is_live(now)]


class ShadowLog(_ExpiringStore[ShadowEntry]):
    """Logged filtering requests, each retained for T after it was logged."""

    def __init__(self, capacity: int, owner: NodeId = ""):
        super().__init__(capacity)
        self.owner = owner
        self.overflow_count = 0
        self._record_seq = itertools.count()
        self.logger = Logger()

    def record(self, label: FlowLabel, requester: NodeId, now: SimTime, retention: Duration,
               attack_path: Tuple[NodeId, ...] = (), round_index: int = 1) -> bool:
        """Log a request; False when the log is full and it was not kept."""
        if retention <= 0:
            raise ValueError(f"shadow retention must be positive, got {retention}")
        self.expire(now)
        existing = self._entries.get((label, requester))
        if existing is not None:
            existing.logged_at = now
            existing.expires_at = now + retention
            existing.attack_path = tuple(attack_path) or existing.attack_path
            existing.round_index = max(existing.round_index, round_index)
            existing.seq = next(self._record_seq)
            self._push_expiry(existing)
            return True
        if len(self._entries) >= self.capacity:
            self.overflow_count += 1
            self.logger.warning(f"{self.owner}: shadow log full ({self.capacity}), not logging {label}")
            return False
        self._insert(ShadowEntry(label=label, requester=requester, logged_at=now,
                                 expires_at=now + retention, attack_path=tuple(attack_path),
                                 round_index=round_index, seq=next(self._record_seq)))
        return True

    def lookup(self, header: PacketHeader, now: SimTime) -> Optional[ShadowEntry]:
        """Earliest-logged live request whose label matches ``header``."""
        best = None
        for entry in self._live_matches(header, now):
            if best is None or (entry.logged_at, entry.seq) < (best.logged_at, best.seq):
                best = entry
        return best


def filter_install(table: FilterTable, label: FlowLabel, now: SimTime, lifetime: Duration,
                   origin: Origin, group: Optional[NodeId] = None) -> InstallResult:
    return table.install(label, now, lifetime, origin, group=group)


def filter_match(table: FilterTable, header: PacketHeader, now: SimTime) -> PacketAction:
    return table.match(header, now)


def expire(store: _ExpiringStore, now: SimTime) -> int:
    return store.expire(now)


def shadow_lookup(log: ShadowLog, header: PacketHeader, now: SimTime) -> Optional[ShadowEntry]:
    return log.lookup(header, now)
