"""Venue maps: landmark loading, topological graph, and landmark routing.

A venue map is a schematic mall directory: named landmarks with rough 2D
positions in arbitrary map units. Positions are metrically unreliable, so
everything downstream treats the graph topology and relative directions as
the signal, not the absolute coordinates.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import networkx as nx

__all__ = [
    "Landmark",
    "VenueMap",
    "TopoGraph",
    "LandmarkRoute",
    "VenueMapError",
    "load_venue_map",
    "build_topo_graph",
    "solve_tsp_route",
    "next_subgoal",
    "h_hop_neighbors",
]


class VenueMapError(ValueError):
    """Raised for malformed or invalid venue-map documents."""


@dataclass(frozen=True)
class Landmark:
    name: str
    map_pos: tuple[float, float]


@dataclass(frozen=True)
class VenueMap:
    landmarks: tuple[Landmark, ...]
    map_units: str = "px"

    def __post_init__(self) -> None:
        if not self.landmarks:
            raise VenueMapError("venue map must contain at least one landmark")
        seen: set[str] = set()
        for i, lm in enumerate(self.landmarks):
            if not lm.name:
                raise VenueMapError(f"landmark {i} has an empty name")
            if lm.name in seen:
                raise VenueMapError(f"duplicate landmark name {lm.name!r}")
            seen.add(lm.name)
            if not all(math.isfinite(c) for c in lm.map_pos):
                raise VenueMapError(f"landmark {lm.name!r} has non-finite map_pos")

    def __len__(self) -> int:
        return len(self.landmarks)

    def index_of(self, name: str) -> int:
        for i, lm in enumerate(self.landmarks):
            if lm.name == name:
                return i
        raise KeyError(name)

    def names(self) -> list[str]:
        return [lm.name for lm in self.landmarks]

    def positions(self) -> list[tuple[float, float]]:
        return [lm.map_pos for lm in self.landmarks]


@dataclass
class TopoGraph:
    """Undirected landmark graph with Euclidean map-distance edge weights."""

    n: int
    edges: list[tuple[int, int]]
    weights: dict[tuple[int, int], float] = field(repr=False)

    def __post_init__(self) -> None:
        self._g = nx.Graph()
        self._g.add_nodes_from(range(self.n))
        for (i, j) in self.edges:
            self._g.add_edge(i, j, weight=self.weights[(i, j)])

    @property
    def nx_graph(self) -> nx.Graph:
        return self._g

    def is_connected(self) -> bool:
        return self.n <= 1 or nx.is_connected(self._g)

    def has_edge(self, i: int, j: int) -> bool:
        return self._g.has_edge(i, j)

    def shortest_path_lengths(self) -> dict[int, dict[int, float]]:
        return dict(nx.all_pairs_dijkstra_path_length(self._g))


@dataclass
class LandmarkRoute:
    """A visiting order over all landmarks plus a cursor into it.

    ``order[:cursor]`` are consumed subgoals; ``order[cursor]`` is the
    current subgoal (when the cursor is in range).
    """

    order: list[int]
    length: float
    cursor: int = 0

    def current(self) -> int | None:
        if self.cursor >= len(self.order):
            return None
        return self.order[self.cursor]

    def exhausted(self) -> bool:
        return self.cursor >= len(self.order)


def _euclid(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def load_venue_map(source: str | Path | IO[str] | dict) -> VenueMap:
    """Parse a venue-map JSON document.

    Accepts a file path, an open text stream, or an already-decoded dict.
    Document format::

        { "map_units": "px",
          "landmarks": [ {"name": str, "x": number, "y": number}, ... ] }
    """
    if isinstance(source, dict):
        doc = source
    else:
        if isinstance(source, (str, Path)):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise VenueMapError(
                f"invalid venue-map JSON at line {e.lineno}, column {e.colno}: {e.msg}"
            ) from e
    if not isinstance(doc, dict):
        raise VenueMapError("venue-map document must be a JSON object")
    raw = doc.get("landmarks")
    if not isinstance(raw, list):
        raise VenueMapError("venue-map document is missing the 'landmarks' array")
    landmarks = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise VenueMapError(f"landmarks[{i}] is not an object")
        try:
            name = entry["name"]
            x = float(entry["x"])
            y = float(entry["y"])
        except KeyError as e:
            raise VenueMapError(f"landmarks[{i}] is missing field {e.args[0]!r}") from e
        except (TypeError, ValueError) as e:
            raise VenueMapError(f"landmarks[{i}] has a non-numeric coordinate") from e
        if not isinstance(name, str):
            raise VenueMapError(f"landmarks[{i}].name must be a string")
        landmarks.append(Landmark(name=name, map_pos=(x, y)))
    return VenueMap(landmarks=tuple(landmarks), map_units=str(doc.get("map_units", "px")))


def build_topo_graph(vm: VenueMap, gamma_map: float) -> TopoGraph:
    """Connect landmarks closer than ``gamma_map`` (inclusive), then join
    leftover components at their globally nearest node pair until connected."""
    if gamma_map <= 0:
        raise ValueError("gamma_map must be positive")
    pos = vm.positions()
    n = len(pos)
    edges: list[tuple[int, int]] = []
    weights: dict[tuple[int, int], float] = {}
    for i, j in itertools.combinations(range(n), 2):
        d = _euclid(pos[i], pos[j])
        if d <= gamma_map:
            edges.append((i, j))
            weights[(i, j)] = d

    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges)
    while True:
        comps = list(nx.connected_components(g))
        if len(comps) <= 1:
            break
        best: tuple[float, int, int] | None = None
        for a, b in itertools.combinations(range(len(comps)), 2):
            for i in sorted(comps[a]):
                for j in sorted(comps[b]):
                    d = _euclid(pos[i], pos[j])
                    key = (d, min(i, j), max(i, j))
                    if best is None or key < best:
                        best = key
        assert best is not None
        d, i, j = best
        edges.append((i, j))
        weights[(i, j)] = d
        g.add_edge(i, j)

    return TopoGraph(n=n, edges=edges, weights=weights)


def _route_cost(order: Iterable[int], dist: dict[int, dict[int, float]]) -> float:
    total = 0.0
    prev = None
    for node in order:
        if prev is not None:
            total += dist[prev][node]
        prev = node
    return total


def _held_karp_path(dist: list[list[float]], start: int) -> tuple[list[int], float]:
    """Exact open-path TSP via subset DP. Optimal for the same objective as
    exhaustive permutation search."""
    n = len(dist)
    others = [v for v in range(n) if v != start]
    m = len(others)
    if m == 0:
        return [start], 0.0
    # dp[mask][k] = best cost of a path start -> ... -> others[k] covering mask
    dp = [[math.inf] * m for _ in range(1 << m)]
    parent = [[-1] * m for _ in range(1 << m)]
    for k in range(m):
        dp[1 << k][k] = dist[start][others[k]]
    for mask in range(1 << m):
        for k in range(m):
            cur = dp[mask][k]
            if not math.isfinite(cur) or not mask & (1 << k):
                continue
            for nxt in range(m):
                if mask & (1 << nxt):
                    continue
                nm = mask | (1 << nxt)
                cand = cur + dist[others[k]][others[nxt]]
                if cand < dp[nm][nxt]:
                    dp[nm][nxt] = cand
                    parent[nm][nxt] = k
    full = (1 << m) - 1
    end = min(range(m), key=lambda k: (dp[full][k], k))
    best = dp[full][end]
    seq = []
    mask, k = full, end
    while k != -1:
        seq.append(others[k])
        pk = parent[mask][k]
        mask ^= 1 << k
        k = pk
    seq.reverse()
    return [start] + seq, best


def _nn_two_opt(dist: list[list[float]], start: int) -> tuple[list[int], float]:
    n = len(dist)
    unvisited = set(range(n)) - {start}
    order = [start]
    while unvisited:
        cur = order[-1]
        nxt = min(unvisited, key=lambda v: (dist[cur][v], v))
        order.append(nxt)
        unvisited.remove(nxt)

    def cost(o: list[int]) -> float:
        return sum(dist[a][b] for a, b in zip(o, o[1:]))

    improved = True
    best_cost = cost(order)
    while improved:
        improved = False
        for i in range(1, len(order) - 1):
            for j in range(i + 1, len(order)):
                cand = order[:i] + order[i : j + 1][::-1] + order[j + 1 :]
                c = cost(cand)
                if c < best_cost - 1e-12:
                    order, best_cost = cand, c
                    improved = True
    return order, best_cost


def solve_tsp_route(g: TopoGraph, start: int = 0) -> LandmarkRoute:
    """Open visiting path over all landmarks from ``start``, minimizing total
    graph shortest-path length. Exact for up to 12 landmarks, nearest
    neighbor + 2-opt beyond."""
    if not 0 <= start < g.n:
        raise ValueError(f"start index {start} out of range")
    if not g.is_connected():
        raise ValueError("topological graph must be connected")
    if g.n == 1:
        return LandmarkRoute(order=[0], length=0.0)
    sp = g.shortest_path_lengths()
    dist = [[sp[i][j] for j in range(g.n)] for i in range(g.n)]
    if g.n <= 12:
        order, length = _held_karp_path(dist, start)
    else:
        order, length = _nn_two_opt(dist, start)
    return LandmarkRoute(order=order, length=length)


def next_subgoal(route: LandmarkRoute, recognized: int) -> int | None:
    """Advance the route past ``recognized`` and return the next subgoal.

    Recognizing the current subgoal moves the cursor one step; recognizing a
    later route entry skips everything up to and including it. Recognitions
    of already-consumed entries leave the cursor alone. Returns None once the
    route is exhausted.
    """
    if recognized not in route.order:
        raise ValueError(f"landmark {recognized} is not on the route")
    pos = route.order.index(recognized)
    if pos >= route.cursor:
        route.cursor = pos + 1
    return route.current()


def h_hop_neighbors(g: TopoGraph, center: int, h: int) -> set[int]:
    """Nodes within ``h`` graph hops of ``center``, center included."""
    if not 0 <= center < g.n:
        raise ValueError(f"center index {center} out of range")
    if h < 0:
        raise ValueError("hop count must be non-negative")
    reached = nx.single_source_shortest_path_length(g.nx_graph, center, cutoff=h)
    return set(reached)
