"""Discrete-event kernel, seeded random streams and Pareto traffic sources."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional


class SchedulingError(ValueError):
    pass


class FlowError(ValueError):
    pass


class EventKind(str, Enum):
    PACKET_ARRIVAL = "PacketArrival"
    TRANSMISSION_COMPLETE = "TransmissionComplete"
    CACHE_FLUSH = "CacheFlush"
    MOBILITY_STEP = "MobilityStep"
    STATE_TIMER = "StateTimer"
    METRICS_SAMPLE = "MetricsSample"


@dataclass(eq=False)
class Event:
    fire_time_s: float
    kind: EventKind
    payload: Any = None
    sequence_no: int = -1
    cancelled: bool = False

    def sort_key(self):
        return (self.fire_time_s, self.sequence_no)


Handler = Callable[[Event], None]


class Simulator:
    """Single-threaded event loop.

    Events pop in ``(fire_time_s, sequence_no)`` order; the sequence number is
    assigned at scheduling time, so equal-time events fire in the order they
    were scheduled.
    """

    def __init__(self, trace: bool = False):
        self.now = 0.0
        self._queue: list[tuple[float, int, Event]] = []
        self._seq = 0
        self._handlers: dict[EventKind, Handler] = {}
        self.scheduled = 0
        self.processed = 0
        self.cancelled = 0
        self.trace: Optional[list[tuple[float, int, str]]] = [] if trace else None

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[EventKind(kind)] = handler

    def schedule(self, event: Event) -> Event:
        if event.fire_time_s < self.now:
            raise SchedulingError(
                f"cannot schedule {event.kind.value} at {event.fire_time_s!r}, "
                f"clock is {self.now!r}")
        event.sequence_no = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (event.fire_time_s, event.sequence_no, event))
        self.scheduled += 1
        return event

    def at(self, time_s: float, kind: EventKind, payload: Any = None) -> Event:
        return self.schedule(Event(time_s, EventKind(kind), payload))

    def after(self, delay_s: float, kind: EventKind, payload: Any = None) -> Event:
        return self.at(self.now + delay_s, kind, payload)

    def cancel(self, event: Event) -> None:
        if not event.cancelled:
            event.cancelled = True
            self.cancelled += 1

    @property
    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def peek_time(self) -> Optional[float]:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def run_until(self, t_end_s: float) -> int:
        """Process every event with ``fire_time_s <= t_end_s``; leave the clock at ``t_end_s``."""
        if t_end_s < self.now:
            raise SchedulingError(f"t_end_s {t_end_s!r} is before clock {self.now!r}")
        count = 0
        queue = self._queue
        while queue and queue[0][0] <= t_end_s:
            time_s, seq, event = heapq.heappop(queue)
            if event.cancelled:
                continue
            self.now = time_s
            if self.trace is not None:
                self.trace.append((time_s, seq, event.kind.value))
            handler = self._handlers.get(event.kind)
            if handler is not None:
                handler(event)
            self.processed += 1
            count += 1
        self.now = t_end_s
        return count


def stream_seed(base_seed: int, name: str) -> int:
    """Derive an independent 64-bit seed for a named random stream."""
    digest = hashlib.sha256(f"{base_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng_stream(base_seed: int, name: str) -> random.Random:
    return random.Random(stream_seed(base_seed, name))


@dataclass(frozen=True)
class TrafficProfile:
    packet_size_bits: int = 4096
    pareto_shape: float = 2.5
    pareto_scale_s: float = 0.06

    def __post_init__(self):
        if not self.pareto_shape > 1:
            raise ValueError(f"pareto_shape must be > 1, got {self.pareto_shape}")
        if not self.pareto_scale_s > 0:
            raise ValueError(f"pareto_scale_s must be > 0, got {self.pareto_scale_s}")
        if self.packet_size_bits <= 0:
            raise ValueError("packet_size_bits must be > 0")

    @property
    def mean_interarrival_s(self) -> float:
        a = self.pareto_shape
        return a * self.pareto_scale_s / (a - 1.0)

    @property
    def nominal_rate_bps(self) -> float:
        return self.packet_size_bits / self.mean_interarrival_s


def pareto_interarrival(rng: random.Random, profile: TrafficProfile) -> float:
    # 1 - random() lies in (0, 1], so the sample is finite and >= scale
    u = 1.0 - rng.random()
    return profile.pareto_scale_s * u ** (-1.0 / profile.pareto_shape)


@dataclass
class Flow:
    flow_id: int
    src: int
    dst: int
    profile: TrafficProfile
    tag: str = "bulk"
    emitted: int = 0


@dataclass
class FlowTable:
    """Registry of CBR-with-Pareto flows driven by a ``Simulator``."""

    sim: Simulator
    rng: random.Random
    is_alive: Callable[[int], bool]
    node_ids: list[int]
    flows: list[Flow] = field(default_factory=list)

    def spawn_flow(self, src: int, dst: Optional[int], profile: TrafficProfile,
                   tag: str = "bulk", start_s: Optional[float] = None) -> int:
        if not self.is_alive(src):
            raise FlowError(f"source node {src} is not alive")
        if dst is None:
            candidates = [n for n in self.node_ids if n != src and self.is_alive(n)]
            if not candidates:
                raise FlowError(f"no live destination available for source {src}")
            dst = candidates[self.rng.randrange(len(candidates))]
        if dst == src:
            raise FlowError(f"flow source and destination are both {src}")
        if not self.is_alive(dst):
            raise FlowError(f"destination node {dst} is not alive")
        flow = Flow(len(self.flows), src, dst, profile, tag)
        self.flows.append(flow)
        first = self.sim.now + pareto_interarrival(self.rng, profile) if start_s is None else start_s
        self.sim.at(first, EventKind.PACKET_ARRIVAL, ("generate", flow.flow_id))
        return flow.flow_id

    def next_emission(self, flow_id: int) -> None:
        flow = self.flows[flow_id]
        flow.emitted += 1
        self.sim.after(pareto_interarrival(self.rng, flow.profile),
                       EventKind.PACKET_ARRIVAL, ("generate", flow_id))
