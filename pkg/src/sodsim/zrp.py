"""Simplified Zone Routing Protocol over a connectivity snapshot.

Inside a node's zone (everything within ``radius`` hops) routes come from a
proactive BFS table. Destinations outside the zone are found by bordercasting
the query to peripheral nodes, each of which checks its own zone.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence


class NoRoute(LookupError):
    pass


Graph = Mapping[int, Sequence[int]]
LinkCost = Callable[[int, int], float]


@dataclass(frozen=True)
class Zone:
    center_node: int
    radius_hops: int
    members: frozenset

    def __contains__(self, node) -> bool:
        return node in self.members

    def __len__(self) -> int:
        return len(self.members)


def hop_distances(graph: Graph, source: int, limit: int | None = None) -> dict[int, int]:
    """BFS hop counts from ``source``, optionally truncated at ``limit`` hops."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if limit is not None and du >= limit:
            continue
        for v in graph.get(u, ()):
            if v not in dist:
                dist[v] = du + 1
                queue.append(v)
    return dist


def strip_loops(hops: Sequence[int]) -> list[int]:
    """Cut out any cycle so that no node appears twice."""
    out: list[int] = []
    index: dict[int, int] = {}
    for node in hops:
        if node in index:
            cut = index[node]
            for dropped in out[cut + 1:]:
                del index[dropped]
            del out[cut + 1:]
        else:
            index[node] = len(out)
            out.append(node)
    return out


class ZoneRouter:
    """Zone tables and route discovery for one connectivity snapshot.

    ``link_cost(u, v)`` is the transmit power of the directed hop and only
    breaks ties between equal-hop paths.
    """

    def __init__(self, graph: Graph, radius_hops: int, link_cost: LinkCost, ttl: int = 32):
        if radius_hops < 0:
            raise ValueError("radius_hops must be >= 0")
        self.graph = graph
        self.radius = radius_hops
        self.link_cost = link_cost
        self.ttl = ttl
        self._zones: dict[int, dict[int, int]] = {}
        self._tables: dict[int, tuple[dict[int, float], dict[int, int]]] = {}

    def zone_hops(self, node: int) -> dict[int, int]:
        hops = self._zones.get(node)
        if hops is None:
            hops = hop_distances(self.graph, node, self.radius)
            self._zones[node] = hops
        return hops

    def compute_zone(self, node: int) -> Zone:
        return Zone(node, self.radius, frozenset(self.zone_hops(node)))

    def border_nodes(self, node: int) -> list[int]:
        return sorted(n for n, h in self.zone_hops(node).items() if h == self.radius)

    def _table(self, src: int):
        table = self._tables.get(src)
        if table is not None:
            return table
        hops = self.zone_hops(src)
        layers: dict[int, list[int]] = {}
        for n, h in hops.items():
            layers.setdefault(h, []).append(n)
        cost = {src: 0.0}
        pred: dict[int, int] = {}
        for level in range(1, self.radius + 1):
            for v in sorted(layers.get(level, ())):
                best = None
                for u in self.graph.get(v, ()):
                    if hops.get(u) != level - 1:
                        continue
                    c = cost[u] + self.link_cost(u, v)
                    if best is None or c < best[0] or (c == best[0] and u < best[1]):
                        best = (c, u)
                cost[v] = best[0]
                pred[v] = best[1]
        table = (cost, pred)
        self._tables[src] = table
        return table

    def intrazone_route(self, src: int, dst: int) -> list[int]:
        if dst == src:
            return [src]
        if dst not in self.zone_hops(src):
            raise NoRoute(f"{dst} is not in the zone of {src}")
        _, pred = self._table(src)
        path = [dst]
        while path[-1] != src:
            path.append(pred[path[-1]])
        path.reverse()
        return path

    def interzone_route(self, src: int, dst: int) -> list[int]:
        if dst in self.zone_hops(src):
            return self.intrazone_route(src, dst)
        queried = {src}
        frontier: list[tuple[int, list[int]]] = [(src, [src])]
        for _ in range(self.ttl):
            next_frontier = []
            for query_node, path_q in frontier:
                for border in self.border_nodes(query_node):
                    if border in queried:
                        continue
                    queried.add(border)
                    path_b = path_q + self.intrazone_route(query_node, border)[1:]
                    if dst in self.zone_hops(border):
                        full = path_b + self.intrazone_route(border, dst)[1:]
                        return strip_loops(full)
                    next_frontier.append((border, path_b))
            if not next_frontier:
                break
            frontier = next_frontier
        raise NoRoute(f"no route from {src} to {dst}")

    def route(self, src: int, dst: int) -> list[int]:
        if dst in self.zone_hops(src):
            return self.intrazone_route(src, dst)
        return self.interzone_route(src, dst)
