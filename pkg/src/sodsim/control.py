"""Per-node forwarding decisions: packet classes, forward/cache/drop, cache store, energy ledger."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .model import (CachingParams, CapacityState, LinkSpec, PowerCalibration,
                    caching_threshold, capacity_scaled_power, chunk_delay,
                    transmission_power)

log = logging.getLogger(__name__)

PRIORITIZED_TAGS = frozenset({"audio", "video"})


class Priority(str, Enum):
    PRIORITIZED = "prioritized"
    DONT_CARE = "dont_care"


class Action(str, Enum):
    FORWARD = "forward"
    CACHE = "cache"
    DROP = "drop"
    REROUTE = "reroute"


class RadioState(str, Enum):
    ACTIVE = "active"
    IDLE = "idle"
    SLEEP = "sleep"


class StreamOutcome(str, Enum):
    IN_BOUND = "in_bound"
    BOUND_VIOLATED = "bound_violated"


@dataclass(frozen=True)
class StreamSpec:
    stream_id: str
    chunk_count: int
    total_single_peer_time_s: float
    delay_bound_s: float
    priority: Priority
    intermediate_count: int = 0

    def __post_init__(self):
        if not self.delay_bound_s > 0:
            raise ValueError("delay_bound_s must be > 0")
        if self.chunk_count < 1:
            raise ValueError("chunk_count must be >= 1")


def classify(stream_or_tag, prioritized_tags=PRIORITIZED_TAGS) -> Priority:
    """Priority class for a stream (its configured class) or for a traffic tag.

    Unknown tags are treated as "don't care".
    """
    if isinstance(stream_or_tag, StreamSpec):
        return stream_or_tag.priority
    tag = str(stream_or_tag).lower()
    return Priority.PRIORITIZED if tag in prioritized_tags else Priority.DONT_CARE


@dataclass(eq=False)
class PacketMeta:
    packet_id: int
    stream: StreamSpec
    chunk_index: int
    created_s: float
    deadline_s: float
    src: int
    dst: int
    size_bits: int = 4096
    flow_id: int = -1
    hops: tuple = ()
    hop_index: int = 0
    rerouted: bool = False
    cache_site: Optional[int] = None
    cached_at_s: Optional[float] = None
    sigma: Optional[float] = None
    delay_estimate_s: Optional[float] = None

    def __post_init__(self):
        if self.deadline_s < self.created_s:
            raise ValueError("deadline precedes creation time")

    @property
    def priority(self) -> Priority:
        return self.stream.priority

    @property
    def size_bytes(self) -> float:
        return self.size_bits / 8.0

    @property
    def current(self) -> int:
        return self.hops[self.hop_index]

    @property
    def hops_remaining(self) -> int:
        return len(self.hops) - 1 - self.hop_index

    def expired(self, now: float) -> bool:
        return now > self.deadline_s


# decisions

@dataclass(frozen=True)
class Decision:
    action: Action
    sigma: Optional[float] = None
    delay_estimate_s: Optional[float] = None


@dataclass(frozen=True)
class CachePolicy:
    sigma_low: float = 0.2
    sigma_high: float = 0.99
    sigma_scale: float = 1e-3

    def in_band(self, sigma: float) -> bool:
        return self.sigma_low < sigma < self.sigma_high


def caching_delay_estimate(stream: StreamSpec, remaining_hops: int) -> float:
    """Per-chunk delay for the stream over the peers still ahead (current node included)."""
    peers = max(1, remaining_hops + 1)
    return chunk_delay(CachingParams(stream.total_single_peer_time_s, stream.chunk_count, peers))


def forward_decision(packet: PacketMeta, now: float, remaining_links: Sequence[LinkSpec], *,
                     next_hop_ok: bool = True, active: bool = True,
                     prioritized_queued: bool = False,
                     store: Optional["CacheStore"] = None,
                     policy: CachePolicy = CachePolicy(),
                     evicted: Optional[list] = None) -> Decision:
    """Decide what an intermediate node does with ``packet``.

    ``store`` is the cache the packet would go into; pass None when this node
    is not the chosen cache site. A Cache decision has already admitted the
    packet into ``store``.
    """
    if packet.expired(now) or now - packet.created_s > packet.stream.delay_bound_s:
        return Decision(Action.DROP)
    if not next_hop_ok or not active:
        return Decision(Action.DROP if packet.rerouted else Action.REROUTE)
    if packet.priority is Priority.PRIORITIZED:
        return Decision(Action.FORWARD)
    delay = caching_delay_estimate(packet.stream, len(remaining_links))
    sigma = caching_threshold(remaining_links, delay, policy.sigma_scale)
    if policy.in_band(sigma) and prioritized_queued and store is not None:
        if cache_admit(store, packet, now, evicted):
            return Decision(Action.CACHE, sigma, delay)
    return Decision(Action.FORWARD, sigma, delay)


def nre_cache_site(intermediates: Sequence[int], residual_j, free_bytes, size_bytes: float) -> int:
    """Pick the intermediate node with the most residual energy that has room.

    ``residual_j`` and ``free_bytes`` are indexable by node id. Ties go to the
    lower node id. If nobody has room the highest-residual node is returned and
    eviction applies there.
    """
    if not intermediates:
        raise ValueError("path has no intermediate node")
    roomy = [n for n in intermediates if free_bytes[n] >= size_bytes]
    pool = roomy or list(intermediates)
    return min(pool, key=lambda n: (-residual_j[n], n))


# cache

@dataclass
class CacheEntry:
    packet: PacketMeta
    admitted_s: float
    flush_event: object = None


@dataclass
class CacheStore:
    capacity_bytes: float
    entries: dict = field(default_factory=dict)  # packet_id -> CacheEntry
    occupancy_bytes: float = 0.0

    @property
    def free_bytes(self) -> float:
        return self.capacity_bytes - self.occupancy_bytes

    def capacity_state(self) -> CapacityState:
        return CapacityState(self.capacity_bytes, min(self.occupancy_bytes, self.capacity_bytes))

    def remove(self, packet_id: int) -> CacheEntry:
        entry = self.entries.pop(packet_id)
        self.occupancy_bytes -= entry.packet.size_bytes
        if not self.entries:
            self.occupancy_bytes = 0.0
        return entry

    def purge_expired(self, now: float) -> list[CacheEntry]:
        gone = [pid for pid, e in self.entries.items() if e.packet.expired(now)]
        return [self.remove(pid) for pid in gone]

    def __len__(self) -> int:
        return len(self.entries)


def cache_admit(store: CacheStore, packet: PacketMeta, now: float,
                evicted: Optional[list] = None) -> bool:
    """Try to place ``packet`` in ``store``, evicting if needed.

    Only don't-care entries whose deadline is no earlier than the incoming
    packet's may be displaced, nearest deadline first. Displaced entries are
    appended to ``evicted`` (the caller forwards them); nothing is evicted when
    eviction cannot make enough room.
    """
    if packet.expired(now) or packet.priority is Priority.PRIORITIZED:
        return False
    size = packet.size_bytes
    if size > store.capacity_bytes:
        return False
    if store.free_bytes < size:
        victims = sorted(
            (e for e in store.entries.values()
             if e.packet.priority is Priority.DONT_CARE
             and e.packet.deadline_s >= packet.deadline_s),
            key=lambda e: (e.packet.deadline_s, e.packet.packet_id))
        chosen, room = [], store.free_bytes
        for entry in victims:
            if room >= size:
                break
            chosen.append(entry)
            room += entry.packet.size_bytes
        if room < size:
            return False
        for entry in chosen:
            removed = store.remove(entry.packet.packet_id)
            if evicted is not None:
                evicted.append(removed)
    store.entries[packet.packet_id] = CacheEntry(packet, now)
    store.occupancy_bytes += size
    return True


# energy

@dataclass(frozen=True)
class Transmit:
    link: LinkSpec
    bits: float


@dataclass(frozen=True)
class Receive:
    link: LinkSpec
    bits: float


@dataclass(frozen=True)
class CacheHold:
    bytes: float
    seconds: float


@dataclass(frozen=True)
class IdleTick:
    seconds: float


@dataclass(frozen=True)
class SleepTick:
    seconds: float


@dataclass(frozen=True)
class EnergyModel:
    """Cost coefficients. Receive, idle and sleep are ratios of the active figures."""

    calib: PowerCalibration = PowerCalibration()
    active_power_uw: float = 1600.0
    rx_ratio: float = 0.5
    idle_ratio: float = 0.05
    sleep_ratio: float = 0.01
    hold_j_per_byte_s: float = 1e-9

    def __post_init__(self):
        if not 0 < self.sleep_ratio < self.idle_ratio < 1.0:
            raise ValueError("energy ratios must satisfy 0 < sleep < idle < 1 (active)")
        if not self.rx_ratio > 0 or not self.active_power_uw > 0:
            raise ValueError("rx_ratio and active_power_uw must be > 0")
        if self.hold_j_per_byte_s < 0:
            raise ValueError("hold_j_per_byte_s must be >= 0")

    @property
    def idle_power_w(self) -> float:
        return self.idle_ratio * self.active_power_uw * 1e-6

    @property
    def sleep_power_w(self) -> float:
        return self.sleep_ratio * self.active_power_uw * 1e-6

    def transmit_power_uw(self, link: LinkSpec, capacity: Optional[CapacityState] = None,
                          eff: float = 0.0) -> float:
        base = transmission_power(link, self.calib)
        if capacity is None:
            return base
        return capacity_scaled_power(base, capacity, eff, self.calib)

    def cost(self, activity, capacity: Optional[CapacityState] = None, eff: float = 0.0) -> float:
        """Energy in joules for one activity."""
        if isinstance(activity, Transmit):
            airtime = activity.bits / (activity.link.rate_mbps * 1e6)
            return self.transmit_power_uw(activity.link, capacity, eff) * 1e-6 * airtime
        if isinstance(activity, Receive):
            airtime = activity.bits / (activity.link.rate_mbps * 1e6)
            return self.rx_ratio * transmission_power(activity.link, self.calib) * 1e-6 * airtime
        if isinstance(activity, CacheHold):
            return self.hold_j_per_byte_s * activity.bytes * activity.seconds
        if isinstance(activity, IdleTick):
            return self.idle_power_w * activity.seconds
        if isinstance(activity, SleepTick):
            return self.sleep_power_w * activity.seconds
        raise TypeError(f"unknown activity {activity!r}")


@dataclass
class NodeEnergy:
    initial_j: float
    residual_j: float = -1.0
    radio_state: RadioState = RadioState.ACTIVE
    state_entered_s: float = 0.0
    debits_j: float = 0.0
    anomalies: int = 0

    def __post_init__(self):
        if self.residual_j < 0:
            self.residual_j = self.initial_j

    @property
    def dead(self) -> bool:
        return self.residual_j <= 0.0


def debit_energy(energy: NodeEnergy, activity, model: EnergyModel,
                 capacity: Optional[CapacityState] = None, eff: float = 0.0) -> float:
    """Charge ``activity`` to the node and return the new residual.

    A node that reaches zero is put to sleep for good. Charges against a dead
    node are ignored and counted as anomalies.
    """
    if energy.dead:
        energy.anomalies += 1
        log.debug("debit on depleted node ignored: %r", activity)
        return energy.residual_j
    cost = model.cost(activity, capacity, eff)
    if cost <= 0.0:
        return energy.residual_j
    if cost >= energy.residual_j:
        cost = energy.residual_j
        energy.residual_j = 0.0
        energy.radio_state = RadioState.SLEEP
    else:
        energy.residual_j -= cost
    energy.debits_j += cost
    return energy.residual_j


@dataclass
class RadioTimer:
    """Active/idle/sleep bookkeeping for one node, evaluated lazily.

    The node is Active while it has work. Once work stops it stays Active for
    ``idle_timeout_s``, then Idle for ``sleep_timeout_s``, then Sleeps.
    """

    idle_timeout_s: float = 0.5
    sleep_timeout_s: float = 1.0
    busy: bool = False
    quiet_since_s: float = 0.0
    accounted_to_s: float = 0.0

    def state_at(self, now: float) -> RadioState:
        if self.busy:
            return RadioState.ACTIVE
        quiet = now - self.quiet_since_s
        if quiet < self.idle_timeout_s:
            return RadioState.ACTIVE
        if quiet < self.idle_timeout_s + self.sleep_timeout_s:
            return RadioState.IDLE
        return RadioState.SLEEP

    def awake_and_asleep(self, now: float) -> tuple[float, float]:
        """Split ``[accounted_to_s, now]`` into (awake seconds, asleep seconds)."""
        start = self.accounted_to_s
        if now <= start:
            return 0.0, 0.0
        if self.busy:
            return now - start, 0.0
        sleep_from = self.quiet_since_s + self.idle_timeout_s + self.sleep_timeout_s
        awake = max(0.0, min(now, sleep_from) - start)
        return awake, (now - start) - awake


def radio_state_update(energy: NodeEnergy, timer: RadioTimer, now: float,
                       model: EnergyModel, busy: Optional[bool] = None) -> RadioState:
    """Settle baseline energy up to ``now``, optionally change the busy flag, return the state."""
    if energy.dead:
        timer.accounted_to_s = now
        energy.radio_state = RadioState.SLEEP
        return RadioState.SLEEP
    awake, asleep = timer.awake_and_asleep(now)
    if awake > 0:
        debit_energy(energy, IdleTick(awake), model)
    if asleep > 0 and not energy.dead:
        debit_energy(energy, SleepTick(asleep), model)
    timer.accounted_to_s = max(timer.accounted_to_s, now)
    if busy is not None and busy != timer.busy:
        timer.busy = busy
        if not busy:
            timer.quiet_since_s = now
    state = RadioState.SLEEP if energy.dead else timer.state_at(now)
    if state is not energy.radio_state:
        energy.radio_state = state
        energy.state_entered_s = now
    return state


def stream_complete(stream: StreamSpec, latencies: Sequence[Optional[float]]) -> StreamOutcome:
    """In bound iff every chunk arrived and none took longer than the stream's bound.

    ``latencies`` holds one entry per chunk: end-to-end seconds, or None if dropped.
    """
    if len(latencies) < stream.chunk_count:
        raise ValueError("not every chunk is accounted for")
    for lat in latencies:
        if lat is None or lat > stream.delay_bound_s:
            return StreamOutcome.BOUND_VIOLATED
    return StreamOutcome.IN_BOUND
