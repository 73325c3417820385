"""Packet-level network simulation driven by the event kernel.

Each node has a two-class transmit queue (prioritized first), a cache store,
an energy ledger and a lazily evaluated radio timer. Intermediate nodes run
``forward_decision`` on every packet they receive.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import IO, Optional

from . import control
from .config import Scenario
from .control import (Action, CacheHold, CachePolicy, CacheStore, EnergyModel, NodeEnergy,
                      PacketMeta, Priority, RadioState, RadioTimer, Receive, StreamSpec,
                      Transmit, IdleTick, classify, debit_energy, forward_decision,
                      nre_cache_site, radio_state_update, stream_complete)
from .engine import EventKind, FlowTable, Simulator, TrafficProfile, rng_stream
from .metrics import CacheSample, PowerSample, RunMetrics, StreamCounters
from .model import (CapacitySign, LinkSpec, PowerCalibration, ThroughputStats,
                    effective_throughput)
from .topology import MIN_DISTANCE_M, MobilityParams, OutOfRange, build_topology
from .zrp import NoRoute

log = logging.getLogger(__name__)


class InvariantBreach(RuntimeError):
    """A conservation or ordering invariant failed; this is a simulator bug."""


@dataclass
class _StreamTrack:
    spec: StreamSpec
    latencies: list
    resolved: int = 0


class _EffWindow:
    """Sliding window of per-node send outcomes used for the capacity-scaled power."""

    def __init__(self, window_s: float, rate_bps: float):
        self.window_s = window_s
        self.rate_bps = rate_bps
        self.events: deque = deque()
        self.ok = 0
        self.bits = 0.0

    def add(self, now: float, ok: bool, bits: float) -> None:
        self.events.append((now, ok, bits))
        if ok:
            self.ok += 1
            self.bits += bits

    def value(self, now: float) -> float:
        horizon = now - self.window_s
        ev = self.events
        while ev and ev[0][0] < horizon:
            _, ok, bits = ev.popleft()
            if ok:
                self.ok -= 1
                self.bits -= bits
        if not ev:
            self.bits = 0.0
            return 0.0
        stats = ThroughputStats(len(ev), self.ok, max(self.bits, 0.0), self.window_s, self.rate_bps)
        return effective_throughput(stats)


class NetworkSimulation:
    def __init__(self, scenario: Scenario, decision_log: Optional[IO[str]] = None,
                 trace: bool = False):
        s = self.scenario = scenario
        seed = s.seed
        self.sim = Simulator(trace=trace)
        self.decision_log = decision_log
        self.calib = PowerCalibration(s.calibration.k_power,
                                      CapacitySign(s.calibration.capacity_exponent_sign))
        self.topo = build_topology(
            s.topology.node_count, s.topology.area_m, s.topology.comm_range_m,
            rng=rng_stream(seed, "topology"),
            rates_mbps=s.radio.rate_mbps, loss_exponent=s.radio.loss_exponent,
            fading_factor=s.radio.fading_factor, calib=self.calib,
            zone_radius_hops=s.topology.zone_radius_hops,
            mobility=MobilityParams(s.mobility.v_min_mps, s.mobility.v_max_mps,
                                    s.mobility.mean_epoch_s),
            refresh_s=s.topology.refresh_s)
        self.topo.rng = rng_stream(seed, "mobility")
        n = self.n = self.topo.n
        e = s.energy
        self.energy_model = EnergyModel(self.calib, e.active_power_uw, e.rx_ratio,
                                        e.idle_ratio, e.sleep_ratio, e.hold_j_per_byte_s)
        self.policy = CachePolicy(s.cache.sigma_band[0], s.cache.sigma_band[1],
                                  s.calibration.sigma_scale)
        self.max_hold_s = s.cache.max_hold_fraction * s.stream.delay_bound_s
        self.energy = [NodeEnergy(e.initial_j) for _ in range(n)]
        self.timers = [RadioTimer(e.idle_timeout_s, e.sleep_timeout_s) for _ in range(n)]
        self.caches = [CacheStore(float(s.cache.capacity_bytes)) for _ in range(n)]
        self.prio_q = [deque() for _ in range(n)]
        self.dc_q = [deque() for _ in range(n)]
        self.sending: list[Optional[PacketMeta]] = [None] * n
        self.inbound = [0] * n
        self.dead_handled = [False] * n
        self.eff = [_EffWindow(e.eff_window_s, float(self.topo.rates[i]) * 1e6) for i in range(n)]

        self.profile = TrafficProfile(s.traffic.packet_size_bytes * 8, s.traffic.pareto_shape,
                                      s.traffic.pareto_scale_s)
        self.prioritized_tags = frozenset(t.lower() for t in s.traffic.prioritized_tags)
        self.flows = FlowTable(self.sim, rng_stream(seed, "traffic"),
                               lambda i: not self.energy[i].dead, list(range(n)))
        self._stream_of_flow: dict[int, tuple[StreamSpec, int]] = {}
        self._tracks: dict[str, _StreamTrack] = {}
        self._next_packet_id = 0

        self.metrics = RunMetrics(node_count=n, initial_energy_j=e.initial_j)
        self.metrics.packets = {"generated": 0, "delivered": 0, "dropped": 0}

        sim = self.sim
        sim.on(EventKind.PACKET_ARRIVAL, self._on_generate)
        sim.on(EventKind.TRANSMISSION_COMPLETE, self._on_tx_complete)
        sim.on(EventKind.CACHE_FLUSH, self._on_cache_flush)
        sim.on(EventKind.MOBILITY_STEP, self._on_mobility)
        sim.on(EventKind.METRICS_SAMPLE, self._on_sample)

        self._init_zones()
        self._init_flows()
        self._init_mobility()
        self.n_samples = int(math.floor(s.horizon_s / s.metrics_interval_s + 1e-9))
        if self.n_samples > 0:
            sim.at(0.0, EventKind.METRICS_SAMPLE, 0)

    # setup

    def _init_zones(self) -> None:
        router = self.topo.snapshot(0.0).router
        unassigned = set(range(self.n))
        zones = {}
        for node in range(self.n):
            if node not in unassigned:
                continue
            members = sorted(m for m in router.zone_hops(node) if m in unassigned)
            unassigned.difference_update(members)
            zones[node] = tuple(members)
        self.metrics.zones = zones

    def _init_flows(self) -> None:
        tr = self.scenario.traffic
        rng = self.flows.rng
        for i in range(tr.flow_count):
            src = rng.randrange(self.n)
            tag = tr.flow_tags[i % len(tr.flow_tags)]
            fid = self.flows.spawn_flow(src, None, self.profile, tag)
            prio = classify(tag, self.prioritized_tags)
            self.metrics.streams[fid] = StreamCounters(fid, prio.value,
                                                       self.profile.nominal_rate_bps)

    def _init_mobility(self) -> None:
        for node in range(self.n):
            nxt = self.topo.mobility_step(node, 0.0)
            if nxt is not None:
                self.sim.at(nxt, EventKind.MOBILITY_STEP, node)

    # helpers

    def _log(self, node: int, pkt: PacketMeta, decision: str, sigma=None) -> None:
        if self.decision_log is None:
            return
        rec = {"time_s": self.sim.now, "node": node, "packet_id": pkt.packet_id,
               "decision": decision, "sigma": sigma,
               "residual_j": self.energy[node].residual_j}
        self.decision_log.write(json.dumps(rec) + "\n")

    def _busy(self, node: int) -> bool:
        return bool(self.prio_q[node] or self.dc_q[node] or self.sending[node] is not None
                    or self.caches[node].entries or self.inbound[node])

    def _touch(self, node: int) -> RadioState:
        state = radio_state_update(self.energy[node], self.timers[node], self.sim.now,
                                   self.energy_model, busy=self._busy(node))
        self._check_death(node)
        return state

    def _charge(self, node: int, activity, capacity=None, eff: float = 0.0) -> None:
        debit_energy(self.energy[node], activity, self.energy_model, capacity, eff)
        self._check_death(node)

    def _check_death(self, node: int) -> None:
        if self.energy[node].dead and not self.dead_handled[node]:
            self.dead_handled[node] = True
            self.topo.kill(node)
            for q in (self.prio_q[node], self.dc_q[node]):
                while q:
                    self._drop(q.popleft(), node, "node_depleted")
            store = self.caches[node]
            for pid in list(store.entries):
                entry = store.remove(pid)
                if entry.flush_event is not None:
                    self.sim.cancel(entry.flush_event)
                self._drop(entry.packet, node, "node_depleted")

    def _prioritized_waiting(self, node: int) -> bool:
        cur = self.sending[node]
        return bool(self.prio_q[node]) or (cur is not None and cur.priority is Priority.PRIORITIZED)

    def _link_now(self, a: int, b: int) -> tuple[LinkSpec, bool]:
        d = self.topo.distance(a, b, self.sim.now)
        ok = d <= self.topo.comm_range_m and not self.energy[b].dead
        link = LinkSpec(max(d, MIN_DISTANCE_M), float(self.topo.rates[a]),
                        float(self.topo.loss_exponents[a]), float(self.topo.fading[a]))
        return link, ok

    # packet lifecycle

    def _new_packet(self, flow_id: int) -> PacketMeta:
        flow = self.flows.flows[flow_id]
        st = self.scenario.stream
        spec, chunk = self._stream_of_flow.get(flow_id, (None, st.chunk_count))
        if chunk >= st.chunk_count:
            k = 0 if spec is None else int(spec.stream_id.rsplit(".", 1)[1]) + 1
            spec = StreamSpec(f"{flow_id}.{k}", st.chunk_count, st.tau0_s, st.delay_bound_s,
                              classify(flow.tag, self.prioritized_tags))
            self._tracks[spec.stream_id] = _StreamTrack(spec, [None] * st.chunk_count)
            chunk = 0
        self._stream_of_flow[flow_id] = (spec, chunk + 1)
        now = self.sim.now
        pkt = PacketMeta(self._next_packet_id, spec, chunk, now,
                         now + min(st.packet_deadline_s, st.delay_bound_s),
                         flow.src, flow.dst, self.profile.packet_size_bits, flow_id)
        self._next_packet_id += 1
        return pkt

    def _on_generate(self, event) -> None:
        _, flow_id = event.payload
        flow = self.flows.flows[flow_id]
        if self.energy[flow.src].dead:
            return
        self.flows.next_emission(flow_id)
        pkt = self._new_packet(flow_id)
        self.metrics.packets["generated"] += 1
        self.metrics.streams[flow_id].generated += 1
        src = flow.src
        state = radio_state_update(self.energy[src], self.timers[src], self.sim.now,
                                   self.energy_model)
        if state is RadioState.SLEEP:
            self._charge(src, IdleTick(self.scenario.energy.wake_s))
        if self.energy[src].dead:
            self._drop(pkt, src, "node_depleted")
            return
        try:
            route = self.topo.route(src, flow.dst, self.sim.now)
        except NoRoute:
            self._drop(pkt, src, "no_route")
            return
        pkt.hops = route.hops
        self._enqueue(src, pkt)

    def _enqueue(self, node: int, pkt: PacketMeta) -> None:
        if pkt.priority is Priority.PRIORITIZED:
            self.prio_q[node].append(pkt)
        else:
            self.dc_q[node].append(pkt)
        self._touch(node)
        self._try_send(node)

    def _reroute(self, node: int, pkt: PacketMeta) -> bool:
        pkt.rerouted = True
        try:
            route = self.topo.route(node, pkt.dst, self.sim.now)
        except NoRoute:
            return False
        pkt.hops = route.hops
        pkt.hop_index = 0
        return True

    def _try_send(self, node: int) -> None:
        if self.sending[node] is not None or self.energy[node].dead:
            return
        now = self.sim.now
        while self.prio_q[node] or self.dc_q[node]:
            q = self.prio_q[node] if self.prio_q[node] else self.dc_q[node]
            pkt = q.popleft()
            if pkt.expired(now):
                self._drop(pkt, node, "deadline")
                continue
            nxt = pkt.hops[pkt.hop_index + 1]
            link, ok = self._link_now(node, nxt)
            if not ok:
                if pkt.rerouted or not self._reroute(node, pkt):
                    self._drop(pkt, node, "no_next_hop")
                    continue
                nxt = pkt.hops[1]
                link, ok = self._link_now(node, nxt)
                if not ok:
                    self._drop(pkt, node, "no_next_hop")
                    continue
            self._transmit(node, nxt, pkt, link)
            return
        self._touch(node)

    def _transmit(self, node: int, nxt: int, pkt: PacketMeta, link: LinkSpec) -> None:
        now = self.sim.now
        wake = 0.0
        rx_state = radio_state_update(self.energy[nxt], self.timers[nxt], now, self.energy_model)
        if rx_state is RadioState.SLEEP:
            wake = self.scenario.energy.wake_s
            self._charge(nxt, IdleTick(wake))
        self.inbound[nxt] += 1
        self._touch(nxt)
        capacity = self.caches[node].capacity_state()
        eff = self.eff[node].value(now)
        power = self.energy_model.transmit_power_uw(link, capacity, eff)
        self.sending[node] = pkt
        self._charge(node, Transmit(link, pkt.size_bits), capacity, eff)
        zone_size = len(self.topo.snapshot(now).router.zone_hops(node))
        self.metrics.power_samples.append(PowerSample(now, node, zone_size, link.distance_m, power))
        if node == pkt.src and pkt.hop_index == 0:
            counters = self.metrics.streams[pkt.flow_id]
            if counters.first_tx_s is None:
                counters.first_tx_s = now
        airtime = pkt.size_bits / (link.rate_mbps * 1e6)
        self.sim.at(now + wake + airtime, EventKind.TRANSMISSION_COMPLETE, (node, nxt, pkt, link))
        self._touch(node)

    def _on_tx_complete(self, event) -> None:
        node, nxt, pkt, link = event.payload
        self.sending[node] = None
        self.inbound[nxt] -= 1
        self.eff[node].add(self.sim.now, True, pkt.size_bits)
        if self.energy[nxt].dead:
            self._drop(pkt, nxt, "receiver_depleted")
        else:
            self._charge(nxt, Receive(link, pkt.size_bits))
            if self.energy[nxt].dead:
                self._drop(pkt, nxt, "receiver_depleted")
            else:
                pkt.hop_index += 1
                if nxt == pkt.dst:
                    self._deliver(pkt)
                else:
                    self._arrive(nxt, pkt)
        self._touch(nxt)
        if self.caches[node].entries and not self._prioritized_waiting(node):
            self._flush_all(node)
        self._try_send(node)
        self._touch(node)

    def _arrive(self, node: int, pkt: PacketMeta) -> None:
        now = self.sim.now
        hops = pkt.hops[pkt.hop_index:]
        links, next_ok = [], True
        for i, (u, v) in enumerate(zip(hops, hops[1:])):
            link, ok = self._link_now(u, v)
            links.append(link)
            if i == 0:
                next_ok = ok
        prio_waiting = self._prioritized_waiting(node)
        store = None
        site = None
        if pkt.priority is Priority.DONT_CARE and prio_waiting:
            if pkt.cache_site is None or pkt.cache_site == node:
                site = node if pkt.cache_site == node else nre_cache_site(
                    hops[:-1], [en.residual_j for en in self.energy],
                    [c.free_bytes for c in self.caches], pkt.size_bytes)
                if site == node:
                    store = self.caches[node]
        evicted: list = []
        decision = forward_decision(pkt, now, links, next_hop_ok=next_ok,
                                    prioritized_queued=prio_waiting, store=store,
                                    policy=self.policy, evicted=evicted)
        if decision.sigma is not None:
            self.metrics.sigma_samples.append((now, node, decision.sigma))
        self._log(node, pkt, decision.action.value, decision.sigma)
        action = decision.action
        if action is Action.DROP:
            self._drop(pkt, node, "deadline")
            return
        if action is Action.REROUTE:
            if not self._reroute(node, pkt):
                self._drop(pkt, node, "no_next_hop")
                return
            self._enqueue(node, pkt)
            return
        if action is Action.CACHE:
            pkt.cache_site = None
            pkt.cached_at_s = now
            pkt.sigma = decision.sigma
            pkt.delay_estimate_s = decision.delay_estimate_s
            entry = self.caches[node].entries[pkt.packet_id]
            entry.flush_event = self.sim.at(now + self.max_hold_s, EventKind.CACHE_FLUSH,
                                            (node, pkt.packet_id))
            for old in evicted:
                self._release(node, old, reason="evicted")
            self._touch(node)
            return
        if (site is not None and site != node and decision.sigma is not None
                and self.policy.in_band(decision.sigma)):
            pkt.cache_site = site
        elif pkt.cache_site == node:
            pkt.cache_site = None
        self._enqueue(node, pkt)

    def _release(self, node: int, entry, reason: str) -> None:
        now = self.sim.now
        pkt = entry.packet
        if entry.flush_event is not None:
            self.sim.cancel(entry.flush_event)
        hold = now - entry.admitted_s
        self._charge(node, CacheHold(pkt.size_bytes, hold))
        self.metrics.cache_samples.append(CacheSample(entry.admitted_s, node, pkt.sigma,
                                                      pkt.delay_estimate_s, hold))
        self._log(node, pkt, f"release:{reason}", pkt.sigma)
        if self.energy[node].dead:
            self._drop(pkt, node, "node_depleted")
        elif pkt.expired(now):
            self._drop(pkt, node, "deadline")
        else:
            self._enqueue(node, pkt)

    def _flush_all(self, node: int) -> None:
        store = self.caches[node]
        for pid in sorted(store.entries, key=lambda p: (store.entries[p].admitted_s, p)):
            if pid in store.entries:
                self._release(node, store.remove(pid), reason="flush")

    def _on_cache_flush(self, event) -> None:
        node, pid = event.payload
        store = self.caches[node]
        if pid in store.entries:
            entry = store.remove(pid)
            entry.flush_event = None
            self._release(node, entry, reason="max_hold")
        self._try_send(node)
        self._touch(node)

    def _resolve(self, pkt: PacketMeta, latency: Optional[float]) -> None:
        track = self._tracks[pkt.stream.stream_id]
        track.latencies[pkt.chunk_index] = latency
        track.resolved += 1
        if track.resolved == track.spec.chunk_count:
            outcome = stream_complete(track.spec, track.latencies)
            self.metrics.stream_outcomes[outcome.value] += 1
            del self._tracks[pkt.stream.stream_id]

    def _deliver(self, pkt: PacketMeta) -> None:
        now = self.sim.now
        latency = now - pkt.created_s
        self.metrics.packets["delivered"] += 1
        self.metrics.delays[pkt.priority.value].append(latency)
        c = self.metrics.streams[pkt.flow_id]
        c.delivered += 1
        c.bits_delivered += pkt.size_bits
        c.last_delivery_s = now
        self._resolve(pkt, latency)

    def _drop(self, pkt: PacketMeta, node: int, reason: str) -> None:
        self.metrics.packets["dropped"] += 1
        self.metrics.drop_reasons[reason] = self.metrics.drop_reasons.get(reason, 0) + 1
        self.metrics.streams[pkt.flow_id].dropped += 1
        if node != pkt.dst and reason != "no_route":
            self.eff[node].add(self.sim.now, False, 0.0)
        self._log(node, pkt, f"drop:{reason}")
        self._resolve(pkt, None)

    # other events

    def _on_mobility(self, event) -> None:
        node = event.payload
        nxt = self.topo.mobility_step(node, self.sim.now)
        if nxt is not None:
            self.sim.at(nxt, EventKind.MOBILITY_STEP, node)

    def _settle_all(self) -> None:
        now = self.sim.now
        for i in range(self.n):
            radio_state_update(self.energy[i], self.timers[i], now, self.energy_model)
            self._check_death(i)

    def _on_sample(self, event) -> None:
        k = event.payload
        self._settle_all()
        self.metrics.record_sample(self.sim.now, [en.residual_j for en in self.energy],
                                   math.fsum(en.debits_j for en in self.energy))
        if k + 1 < self.n_samples:
            self.sim.at((k + 1) * self.scenario.metrics_interval_s, EventKind.METRICS_SAMPLE,
                        k + 1)

    # run

    def in_flight(self) -> int:
        return (sum(len(q) for q in self.prio_q) + sum(len(q) for q in self.dc_q)
                + sum(1 for p in self.sending if p is not None))

    def cached(self) -> int:
        return sum(len(c) for c in self.caches)

    def run(self) -> RunMetrics:
        s = self.scenario
        self.sim.run_until(s.horizon_s)
        self._settle_all()
        m = self.metrics
        m.events_processed = self.sim.processed
        m.packets["cached_at_end"] = self.cached()
        m.packets["in_flight_at_end"] = self.in_flight()
        debits = math.fsum(en.debits_j for en in self.energy)
        residual = math.fsum(en.residual_j for en in self.energy)
        m.energy = {
            "initial_total_j": s.energy.initial_j * self.n,
            "residual_total_j": residual,
            "consumed_j": debits,
            "dead_nodes": sum(1 for en in self.energy if en.dead),
            "anomalies": sum(en.anomalies for en in self.energy),
        }
        self.check_invariants()
        return m

    def check_invariants(self) -> None:
        pk = self.metrics.packets
        accounted = (pk["delivered"] + pk["dropped"] + pk.get("cached_at_end", self.cached())
                     + pk.get("in_flight_at_end", self.in_flight()))
        if pk["generated"] != accounted:
            raise InvariantBreach(f"packet conservation failed: {pk}")
        for i, en in enumerate(self.energy):
            spent = en.initial_j - en.residual_j
            if abs(spent - en.debits_j) > 1e-9 * max(en.initial_j, 1e-300):
                raise InvariantBreach(f"energy ledger of node {i} does not reconcile")
            if not 0.0 <= en.residual_j <= en.initial_j:
                raise InvariantBreach(f"residual energy of node {i} out of range")
        for i, c in enumerate(self.caches):
            if c.occupancy_bytes > c.capacity_bytes:
                raise InvariantBreach(f"cache of node {i} over capacity")
        times = self.metrics.sample_times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvariantBreach("metric samples are not strictly increasing")
        for series in zip(*self.metrics.residuals):
            if any(b > a for a, b in zip(series, series[1:])):
                raise InvariantBreach("a residual energy series increased")


def simulate(scenario: Scenario, **kwargs) -> RunMetrics:
    return NetworkSimulation(scenario, **kwargs).run()
