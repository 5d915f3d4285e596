"""Exploration-exploitation planning primitives: frontier detection,
viewpoint generation, the utility functions, candidate selection and grid
path planning."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .perception import TextInstance3D
from .world import OccupancyGrid, _dda_cast, wrap_angle

__all__ = [
    "Frontier",
    "Viewpoint",
    "PlannerConfig",
    "Candidate",
    "detect_frontiers",
    "generate_viewpoint",
    "information_gain",
    "directional_heuristic",
    "hysteresis_gain",
    "frontier_utility",
    "viewpoint_utility",
    "select_next_pose",
    "plan_path",
    "reachable_mask",
]

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Frontier:
    position: tuple[float, float]
    cluster_size: int
    cell: tuple[int, int]
    visited: bool = False


@dataclass
class Viewpoint:
    position: tuple[float, float]
    heading: float
    instance: int  # index into the signage map at creation time
    score: float
    cell: tuple[int, int]
    uid: int = -1  # stable instance uid, survives bank merges
    visited: bool = False


@dataclass
class PlannerConfig:
    eta: float = 0.1
    lambda_h: float = 5.0
    mu_gain: float = 5.0
    mu_radius: float = 10.0
    beta: float = 9.0
    fov: float = math.radians(70.5)
    view_dist: float = 2.0
    replan_period: int = 5
    gain_range: float = 8.0
    min_cluster: int = 3
    clearance: int = 1
    initial_nav_cost: bool = True


@dataclass(frozen=True)
class Candidate:
    kind: str  # "frontier" | "viewpoint"
    ref: int
    utility: float


def detect_frontiers(grid: OccupancyGrid, min_cluster: int = 3) -> list[Frontier]:
    """Known-free cells bordering unknown space, clustered 8-connected.

    Each cluster of at least ``min_cluster`` cells yields one Frontier at
    its centroid snapped to the nearest in-cluster cell.
    """
    state = grid.state()
    free = state == 1
    unknown = state == 0
    near_unknown = np.zeros_like(unknown)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    frontier_cells = free & near_unknown
    labels, n_clusters = ndimage.label(frontier_cells, structure=_EIGHT)
    out: list[Frontier] = []
    for k in range(1, n_clusters + 1):
        cells = np.argwhere(labels == k)
        if len(cells) < min_cluster:
            continue
        centroid = cells.mean(axis=0)
        d2 = np.sum((cells - centroid) ** 2, axis=1)
        r, c = cells[int(np.argmin(d2))]
        out.append(
            Frontier(
                position=grid.cell_center(int(r), int(c)),
                cluster_size=int(len(cells)),
                cell=(int(r), int(c)),
            )
        )
    return out


def generate_viewpoint(
    instance: TextInstance3D,
    grid: OccupancyGrid,
    view_dist: float = 2.0,
    instance_index: int = -1,
) -> Viewpoint | None:
    """A pose in known-free space facing the instance from ``view_dist``
    along its estimated outward normal; falls back to the nearest known-free
    cell within 1.5x the view distance. None when no free cell qualifies."""
    cx, cy = instance.centroid_2d()
    nx_, ny_ = instance.outward_normal()
    tx, ty = cx + nx_ * view_dist, cy + ny_ * view_dist
    free = grid.known_free()
    res = grid.resolution
    h, w = free.shape
    r, c = grid.cell_of(tx, ty)
    if 0 <= r < h and 0 <= c < w and free[r, c]:
        pos = grid.cell_center(r, c)
    else:
        rows, cols = np.nonzero(free)
        if len(rows) == 0:
            return None
        xs = (cols + 0.5) * res
        ys = (rows + 0.5) * res
        d2 = (xs - tx) ** 2 + (ys - ty) ** 2
        k = int(np.argmin(d2))
        if d2[k] > (view_dist * 1.5) ** 2:
            return None
        pos = (float(xs[k]), float(ys[k]))
        r, c = int(rows[k]), int(cols[k])
    heading = math.atan2(cy - pos[1], cx - pos[0])
    return Viewpoint(
        position=pos,
        heading=heading,
        instance=instance_index,
        score=instance.score,
        cell=(r, c),
        uid=instance.uid,
    )


def information_gain(
    grid: OccupancyGrid,
    frontier: Frontier,
    toward: tuple[float, float],
    fov: float = math.radians(70.5),
    max_range: float = 8.0,
) -> int:
    """Unknown cells inside the camera wedge at the frontier, pointed away
    from ``toward`` (the robot position), truncated at ``max_range`` and
    occluded by known-occupied cells.

    Occlusion uses a fan of rays binned by angle, the usual polar
    approximation for grid visibility.
    """
    ax, ay = frontier.position
    dx, dy = ax - toward[0], ay - toward[1]
    heading = math.atan2(dy, dx) if (dx * dx + dy * dy) > 1e-18 else 0.0
    res = grid.resolution
    state = grid.state()
    h, w = state.shape
    r0 = max(0, int(math.floor((ay - max_range) / res)))
    r1 = min(h - 1, int(math.floor((ay + max_range) / res)))
    c0 = max(0, int(math.floor((ax - max_range) / res)))
    c1 = min(w - 1, int(math.floor((ax + max_range) / res)))
    if r1 < r0 or c1 < c0:
        return 0
    rows = np.arange(r0, r1 + 1)
    cols = np.arange(c0, c1 + 1)
    cy = (rows + 0.5) * res
    cx = (cols + 0.5) * res
    gx, gy = np.meshgrid(cx - ax, cy - ay)
    dist = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    dang = np.arctan2(np.sin(ang - heading), np.cos(ang - heading))
    wedge = (dist <= max_range) & (np.abs(dang) <= fov / 2.0)
    unknown = state[r0 : r1 + 1, c0 : c1 + 1] == 0
    cand = wedge & unknown
    if not cand.any():
        return 0

    n_rays = max(15, int(math.ceil(fov * max_range / res)))
    ray_angles = heading + np.linspace(-fov / 2.0, fov / 2.0, n_rays)
    occ = state == 2
    hit_dist, _, _ = _dda_cast(occ, res, frontier.position, ray_angles, max_range)
    # map each candidate cell to its nearest ray bin
    frac = (dang + fov / 2.0) / fov
    bins = np.clip(np.round(frac * (n_rays - 1)).astype(int), 0, n_rays - 1)
    visible = dist <= hit_dist[bins] + res
    return int(np.count_nonzero(cand & visible))


def directional_heuristic(
    p_t: tuple[float, float], f_i: tuple[float, float], goal: tuple[float, float]
) -> float:
    """Cosine between the robot->frontier and robot->goal directions; 0 when
    either vector is degenerate."""
    ax, ay = p_t[0] - f_i[0], p_t[1] - f_i[1]
    bx, by = p_t[0] - goal[0], p_t[1] - goal[1]
    na = math.hypot(ax, ay)
    nb = math.hypot(bx, by)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return (ax * bx + ay * by) / (na * nb)


def hysteresis_gain(
    p_t: tuple[float, float],
    f_i: tuple[float, float],
    mu_gain: float = 5.0,
    mu_radius: float = 10.0,
) -> float:
    """mu_gain for frontiers within mu_radius of the robot (inclusive),
    otherwise 1."""
    return mu_gain if math.dist(p_t, f_i) <= mu_radius else 1.0


def frontier_utility(
    p_t: tuple[float, float],
    f: Frontier,
    goal_world: tuple[float, float] | None,
    cfg: PlannerConfig,
    grid: OccupancyGrid,
) -> float:
    """Frontier utility: information gain minus travel cost before the map
    alignment exists, the weighted directional/hysteresis form afterwards."""
    d = math.dist(p_t, f.position)
    if goal_world is None:
        gain = information_gain(grid, f, p_t, cfg.fov, cfg.gain_range)
        return gain - (cfg.eta * d if cfg.initial_nav_cost else 0.0)
    mu = hysteresis_gain(p_t, f.position, cfg.mu_gain, cfg.mu_radius)
    h = directional_heuristic(p_t, f.position, goal_world)
    return cfg.lambda_h * mu * h - cfg.eta * d


def viewpoint_utility(p_t: tuple[float, float], v: Viewpoint, cfg: PlannerConfig) -> float:
    """Viewpoint utility: the retrieval score weighted by the balance factor
    minus travel cost."""
    return cfg.beta * v.score - cfg.eta * math.dist(p_t, v.position)


def reachable_mask(grid: OccupancyGrid, p_t: tuple[float, float]) -> np.ndarray:
    """Known-free cells 8-connected to the robot's cell."""
    free = grid.known_free()
    r, c = grid.cell_of(*p_t)
    h, w = free.shape
    if not (0 <= r < h and 0 <= c < w) or not free[r, c]:
        return free
    labels, _ = ndimage.label(free, structure=_EIGHT)
    return labels == labels[r, c]


def select_next_pose(
    p_t: tuple[float, float],
    frontiers: list[Frontier],
    viewpoints: list[Viewpoint],
    goal_world: tuple[float, float] | None,
    cfg: PlannerConfig,
    grid: OccupancyGrid,
    reachable: np.ndarray | None = None,
) -> Candidate | None:
    """Highest-utility unvisited reachable candidate; frontiers win ties,
    then lower index. None when nothing remains (termination signal)."""
    if reachable is None:
        reachable = reachable_mask(grid, p_t)
    best: tuple[float, int, int] | None = None
    best_cand: Candidate | None = None
    for i, f in enumerate(frontiers):
        if f.visited or not reachable[f.cell]:
            continue
        u = frontier_utility(p_t, f, goal_world, cfg, grid)
        key = (-u, 0, i)
        if best is None or key < best:
            best = key
            best_cand = Candidate(kind="frontier", ref=i, utility=u)
    for j, v in enumerate(viewpoints):
        if v.visited or not reachable[v.cell]:
            continue
        u = viewpoint_utility(p_t, v, cfg)
        key = (-u, 1, j)
        if best is None or key < best:
            best = key
            best_cand = Candidate(kind="viewpoint", ref=j, utility=u)
    return best_cand


def _traversable(grid: OccupancyGrid, clearance: int) -> np.ndarray:
    occ = grid.known_occupied()
    if clearance > 0:
        occ = ndimage.binary_dilation(occ, structure=_EIGHT, iterations=clearance)
    return grid.known_free() & ~occ


def _los_clear(
    blocked: np.ndarray, res: float, a: tuple[float, float], b: tuple[float, float]
) -> bool:
    dist = math.dist(a, b)
    if dist < 1e-12:
        return True
    ang = math.atan2(b[1] - a[1], b[0] - a[0])
    ranges, hits, _ = _dda_cast(blocked, res, a, np.array([ang]), dist)
    return not (hits[0] and ranges[0] < dist - 1e-9)


def plan_path(
    grid: OccupancyGrid,
    start: tuple[float, float],
    goal: tuple[float, float],
    clearance: int = 1,
) -> list[tuple[float, float]] | None:
    """A* over known-free cells with occupied cells inflated by
    ``clearance``; 8-connected, no corner cutting, line-of-sight shortcut
    simplification. None when the goal is unreachable in the known map."""
    res = grid.resolution
    trav = _traversable(grid, clearance)
    h, w = trav.shape
    sr, sc = grid.cell_of(*start)
    gr, gc = grid.cell_of(*goal)
    if not (0 <= sr < h and 0 <= sc < w and 0 <= gr < h and 0 <= gc < w):
        return None
    trav[sr, sc] = True  # the robot plans from wherever it stands
    if not trav[gr, gc]:
        return None
    if (sr, sc) == (gr, gc):
        return [goal]

    sqrt2 = math.sqrt(2.0)

    def octile(r: int, c: int) -> float:
        dr, dc = abs(r - gr), abs(c - gc)
        return (max(dr, dc) - min(dr, dc)) + sqrt2 * min(dr, dc)

    g_score = {(sr, sc): 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    counter = itertools.count()
    heap: list = [(octile(sr, sc), 0.0, next(counter), (sr, sc))]
    closed: set[tuple[int, int]] = set()
    found = False
    while heap:
        _, g, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == (gr, gc):
            found = True
            break
        r, c = cell
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w) or not trav[nr, nc]:
                    continue
                if dr != 0 and dc != 0 and not (trav[r, nc] and trav[nr, c]):
                    continue  # no corner cutting
                ng = g + (sqrt2 if dr and dc else 1.0)
                if ng < g_score.get((nr, nc), math.inf) - 1e-12:
                    g_score[(nr, nc)] = ng
                    parent[(nr, nc)] = cell
                    heapq.heappush(heap, (ng + octile(nr, nc), ng, next(counter), (nr, nc)))
    if not found:
        return None
    cells = [(gr, gc)]
    while cells[-1] != (sr, sc):
        cells.append(parent[cells[-1]])
    cells.reverse()
    points = [grid.cell_center(r, c) for r, c in cells]
    points[0] = start

    blocked = ~trav
    simplified = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _los_clear(blocked, res, points[i], points[j]):
            j -= 1
        simplified.append(points[j])
        i = j
    return simplified[1:]
