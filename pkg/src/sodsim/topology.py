"""Node placement, random-direction mobility, and link geometry."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import LinkSpec, PowerCalibration
from .zrp import NoRoute, ZoneRouter

MIN_CELL_M = 1.0
MIN_DISTANCE_M = 1e-9


class TopologyError(ValueError):
    pass


class OutOfRange(LookupError):
    pass


@dataclass(frozen=True)
class NodePosition:
    node_id: int
    x_m: float
    y_m: float


@dataclass(frozen=True)
class Route:
    hops: tuple
    links: tuple

    def __post_init__(self):
        if len(self.links) != max(0, len(self.hops) - 1):
            raise ValueError("a route needs exactly one link per hop")

    @property
    def intermediates(self) -> tuple:
        return self.hops[1:-1]


@dataclass(frozen=True)
class MobilityParams:
    v_min_mps: float = 0.0
    v_max_mps: float = 1.0
    mean_epoch_s: float = 10.0


def reflect(coord, length):
    """Fold unbounded coordinates back into [0, length] with mirror walls."""
    period = 2.0 * length
    folded = np.mod(coord, period)
    return np.where(folded > length, period - folded, folded)


def _fold(coord: float, length: float) -> float:
    period = 2.0 * length
    folded = coord % period
    return period - folded if folded > length else folded


def _per_node(value, n, name):
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise TopologyError(f"{name} needs one value per node ({n}), got {len(arr)}")
    return arr


class Snapshot:
    """Connectivity at one instant. Rebuilt whenever the topology moves on."""

    def __init__(self, topo: "Topology", time_s: float):
        self.time_s = time_s
        pos = topo.positions(time_s)
        self.positions = pos
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        alive = topo.alive
        adj = (dist <= topo.comm_range_m) & alive[:, None] & alive[None, :]
        np.fill_diagonal(adj, False)
        self.distances = dist
        self.adjacency = adj
        clamped = np.maximum(dist, MIN_DISTANCE_M)
        self.power = (topo.calib.k_power * topo.rates[:, None]
                      * clamped ** topo.loss_exponents[:, None] * topo.fading[:, None])
        self.graph = {i: [int(j) for j in np.flatnonzero(adj[i])] for i in range(topo.n)}
        power = self.power
        self.router = ZoneRouter(self.graph, topo.zone_radius_hops,
                                 lambda u, v: float(power[u, v]))

    def edges(self):
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return list(zip(rows.tolist(), cols.tolist()))


class Topology:
    """Grid-seeded nodes moving by random direction inside a rectangle.

    Each node walks in a straight line between exponentially spaced epochs and
    bounces off the walls. Positions are evaluated lazily for any time.
    """

    def __init__(self, positions, area_m, comm_range_m, *, rates_mbps=11.0,
                 loss_exponent=3.0, fading_factor=1.0,
                 calib: PowerCalibration = PowerCalibration(),
                 zone_radius_hops: int = 2,
                 mobility: MobilityParams = MobilityParams(v_max_mps=0.0),
                 rng: Optional[random.Random] = None,
                 refresh_s: float = 0.0):
        pos = np.asarray(positions, dtype=float)
        self.n = len(pos)
        self.width, self.height = float(area_m[0]), float(area_m[1])
        self.comm_range_m = float(comm_range_m)
        self.rates = _per_node(rates_mbps, self.n, "rate_mbps")
        self.loss_exponents = _per_node(loss_exponent, self.n, "loss_exponent")
        self.fading = _per_node(fading_factor, self.n, "fading_factor")
        self.calib = calib
        self.zone_radius_hops = zone_radius_hops
        self.mobility = mobility
        self.rng = rng or random.Random(0)
        self.refresh_s = refresh_s
        self.alive = np.ones(self.n, dtype=bool)
        self._origin = pos.copy()
        self._origin_t = np.zeros(self.n)
        self._velocity = np.zeros((self.n, 2))
        self._snapshot: Optional[Snapshot] = None

    # geometry

    def positions(self, time_s: float) -> np.ndarray:
        raw = self._origin + self._velocity * (time_s - self._origin_t)[:, None]
        out = np.empty_like(raw)
        out[:, 0] = reflect(raw[:, 0], self.width)
        out[:, 1] = reflect(raw[:, 1], self.height)
        return out

    def position(self, node: int, time_s: float) -> tuple[float, float]:
        dt = time_s - float(self._origin_t[node])
        ox, oy = self._origin[node].tolist()
        vx, vy = self._velocity[node].tolist()
        return _fold(ox + vx * dt, self.width), _fold(oy + vy * dt, self.height)

    def distance(self, a: int, b: int, time_s: float) -> float:
        ax, ay = self.position(a, time_s)
        bx, by = self.position(b, time_s)
        return math.hypot(ax - bx, ay - by)

    def directed_link(self, a: int, b: int, time_s: float = 0.0) -> LinkSpec:
        """LinkSpec for ``a -> b``: the transmitter's rate, exponent and fading apply."""
        d = self.distance(a, b, time_s)
        if d > self.comm_range_m:
            raise OutOfRange(f"{a}->{b} is {d:.3f} m apart, range {self.comm_range_m} m")
        return LinkSpec(max(d, MIN_DISTANCE_M), float(self.rates[a]),
                        float(self.loss_exponents[a]), float(self.fading[a]))

    def links_along(self, hops: Sequence[int], time_s: float) -> tuple:
        return tuple(self.directed_link(u, v, time_s) for u, v in zip(hops, hops[1:]))

    # mobility

    def mobility_step(self, node: int, time_s: float) -> Optional[float]:
        """Start a new straight leg for ``node``; return the time of its next epoch.

        Returns None when nodes are configured to stand still.
        """
        mob = self.mobility
        if mob.v_max_mps <= 0:
            return None
        x, y = self.position(node, time_s)
        self._origin[node] = (x, y)
        self._origin_t[node] = time_s
        heading = self.rng.uniform(0.0, 2.0 * math.pi)
        speed = self.rng.uniform(mob.v_min_mps, mob.v_max_mps)
        self._velocity[node] = (speed * math.cos(heading), speed * math.sin(heading))
        self._snapshot = None
        return time_s + self.rng.expovariate(1.0 / mob.mean_epoch_s)

    def kill(self, node: int) -> None:
        if self.alive[node]:
            self.alive[node] = False
            self._snapshot = None

    # connectivity

    def snapshot(self, time_s: float) -> Snapshot:
        snap = self._snapshot
        if snap is None or time_s - snap.time_s > self.refresh_s or time_s < snap.time_s:
            snap = Snapshot(self, time_s)
            self._snapshot = snap
        return snap

    def compute_zone(self, node: int, time_s: float = 0.0, radius_hops: Optional[int] = None):
        snap = self.snapshot(time_s)
        if radius_hops is None or radius_hops == self.zone_radius_hops:
            return snap.router.compute_zone(node)
        return ZoneRouter(snap.graph, radius_hops, lambda u, v: 0.0).compute_zone(node)

    def route(self, src: int, dst: int, time_s: float = 0.0) -> Route:
        snap = self.snapshot(time_s)
        if not (self.alive[src] and self.alive[dst]):
            raise NoRoute(f"endpoint of {src}->{dst} is dead")
        hops = snap.router.route(src, dst)
        links = tuple(
            LinkSpec(max(float(snap.distances[u, v]), MIN_DISTANCE_M), float(self.rates[u]),
                     float(self.loss_exponents[u]), float(self.fading[u]))
            for u, v in zip(hops, hops[1:]))
        return Route(tuple(hops), links)

    def export_csv(self, out_dir, time_s: float, stem: str = "topology") -> tuple[Path, Path]:
        """Write ``<stem>_nodes.csv`` and ``<stem>_edges.csv`` for plotting tools."""
        out_dir = Path(out_dir)
        snap = self.snapshot(time_s)
        nodes_path = out_dir / f"{stem}_nodes.csv"
        edges_path = out_dir / f"{stem}_edges.csv"
        with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "x_m", "y_m", "alive"])
            for i, (x, y) in enumerate(snap.positions.tolist()):
                w.writerow([i, repr(x), repr(y), int(self.alive[i])])
        with open(edges_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_a", "node_b", "distance_m"])
            for a, b in snap.edges():
                w.writerow([a, b, repr(float(snap.distances[a, b]))])
        return nodes_path, edges_path


def grid_positions(n_nodes: int, area_m, rng: random.Random, jitter: float = 1.0) -> np.ndarray:
    """One node per grid cell, uniformly jittered inside the cell."""
    width, height = float(area_m[0]), float(area_m[1])
    if n_nodes < 2:
        raise TopologyError(f"need at least 2 nodes, got {n_nodes}")
    if not (width > 0 and height > 0):
        raise TopologyError("area sides must be positive")
    cols = max(1, math.ceil(math.sqrt(n_nodes * width / height)))
    rows = math.ceil(n_nodes / cols)
    cell_w, cell_h = width / cols, height / rows
    if cell_w < MIN_CELL_M or cell_h < MIN_CELL_M:
        raise TopologyError(
            f"area {width}x{height} m is too small for {n_nodes} nodes "
            f"(grid cells must be at least {MIN_CELL_M} m a side)")
    pos = np.empty((n_nodes, 2))
    for i in range(n_nodes):
        r, c = divmod(i, cols)
        pos[i, 0] = (c + 0.5 + jitter * (rng.random() - 0.5)) * cell_w
        pos[i, 1] = (r + 0.5 + jitter * (rng.random() - 0.5)) * cell_h
    return pos


def build_topology(n_nodes: int = 50, area_m=(50.0, 50.0), comm_range_m: float = 15.0,
                   seed: int = 0, *, rng: Optional[random.Random] = None, **kwargs) -> Topology:
    if not comm_range_m > 0:
        raise TopologyError(f"comm_range_m must be > 0, got {comm_range_m}")
    rng = rng or random.Random(seed)
    pos = grid_positions(n_nodes, area_m, rng)
    kwargs.setdefault("rng", rng)
    return Topology(pos, area_m, comm_range_m, **kwargs)
