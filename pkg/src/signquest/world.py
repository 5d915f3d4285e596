"""Deterministic 2D grid world: walls, signage, robot kinematics, raycast
range sensing, occupancy mapping, and the camera-cone signage observation
model.

Coordinates are meters, x to the right, y up. Cell (row, col) covers
[col*res, (col+1)*res) x [row*res, (row+1)*res); row 0 is the bottom of the
map. World documents list grid rows top-first because that is how people
draw ASCII maps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO

import numpy as np

from .features import FeatureOracle

__all__ = [
    "WorldError",
    "SignageSpec",
    "WorldSpec",
    "RobotState",
    "CameraParams",
    "OccupancyGrid",
    "Scan",
    "Detection2D",
    "load_world",
    "raycast_scan",
    "integrate_scan",
    "observe_signage",
    "line_of_sight",
    "advance",
    "turn_to",
]

SIGN_WIDTH = 0.6
SIGN_Z_BAND = (1.5, 2.5)

LOG_ODDS_STEP = 0.4
LOG_ODDS_CLAMP = 4.0
P_OCCUPIED = 0.65
P_FREE = 0.35

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


class WorldError(ValueError):
    """Raised for invalid world documents or impossible robot states."""


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class SignageSpec:
    anchor: tuple[float, float]
    facing: tuple[float, float]
    label: str
    is_distractor: bool = False

    def __post_init__(self) -> None:
        nx_, ny_ = self.facing
        norm = math.hypot(nx_, ny_)
        if norm < 1e-12:
            raise WorldError(f"sign {self.label!r} has a zero facing vector")
        object.__setattr__(self, "facing", (nx_ / norm, ny_ / norm))


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float
    clock: float = 0.0

    @property
    def pos(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class CameraParams:
    fov: float = math.radians(70.5)
    max_range: float = 10.0
    max_obliquity: float = math.radians(75.0)


@dataclass(frozen=True)
class WorldSpec:
    walls: np.ndarray  # bool (H, W), True = wall
    resolution: float
    signage: tuple[SignageSpec, ...]
    robot_start: tuple[float, float, float]
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise WorldError("resolution must be positive")
        walls = np.asarray(self.walls, dtype=bool)
        object.__setattr__(self, "walls", walls)
        sx, sy, _ = self.robot_start
        r, c = self.cell_of(sx, sy)
        if not self.in_bounds(r, c):
            raise WorldError("robot start is outside the world")
        if walls[r, c]:
            raise WorldError("robot start is inside a wall cell")
        for sign in self.signage:
            ar, ac = self.cell_of(*sign.anchor)
            if not self.in_bounds(ar, ac):
                raise WorldError(f"sign {sign.label!r} anchor is outside the world")
            near_wall = any(
                self.in_bounds(ar + dr, ac + dc) and walls[ar + dr, ac + dc]
                for dr in (-1, 0, 1)
                for dc in (-1, 0, 1)
            )
            if not near_wall:
                raise WorldError(f"sign {sign.label!r} is not on or adjacent to a wall")

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    def in_bounds(self, row: int, col: int) -> bool:
        h, w = self.walls.shape
        return 0 <= row < h and 0 <= col < w

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution)))

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return ((col + 0.5) * self.resolution, (row + 0.5) * self.resolution)

    def start_state(self) -> RobotState:
        x, y, theta = self.robot_start
        return RobotState(x=x, y=y, theta=theta, clock=0.0)


def load_world(source: str | Path | IO[str] | dict) -> WorldSpec:
    """Parse a world JSON document.

    Format::

        { "resolution": 0.5,
          "grid": ["#####", "#...#", "#####"],   # top row first
          "signage": [ {"x":.., "y":.., "nx":.., "ny":.., "label": "..",
                        "distractor": false}, ... ],
          "start": {"x":.., "y":.., "theta":..},
          "seed": 0 }
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
            raise WorldError(
                f"invalid world JSON at line {e.lineno}, column {e.colno}: {e.msg}"
            ) from e
    try:
        resolution = float(doc["resolution"])
        rows = doc["grid"]
        start = doc["start"]
        robot_start = (float(start["x"]), float(start["y"]), float(start["theta"]))
    except (KeyError, TypeError, ValueError) as e:
        raise WorldError(f"world document missing or malformed field: {e}") from e
    if not rows or any(not isinstance(r, str) for r in rows):
        raise WorldError("'grid' must be a non-empty list of strings")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise WorldError("all grid rows must have equal length")
    bad = sorted(set("".join(rows)) - set("#."))
    if bad:
        raise WorldError(f"grid rows may only contain '#' and '.', found {bad}")
    # JSON rows are written top-first; flip so row 0 is y = 0.
    walls = np.array(
        [[ch == "#" for ch in row] for row in reversed(rows)], dtype=bool
    )
    signage = []
    for i, s in enumerate(doc.get("signage", [])):
        try:
            signage.append(
                SignageSpec(
                    anchor=(float(s["x"]), float(s["y"])),
                    facing=(float(s["nx"]), float(s["ny"])),
                    label=str(s["label"]),
                    is_distractor=bool(s.get("distractor", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise WorldError(f"signage[{i}] missing or malformed field: {e}") from e
    return WorldSpec(
        walls=walls,
        resolution=resolution,
        signage=tuple(signage),
        robot_start=robot_start,
        rng_seed=int(doc.get("seed", 0)),
    )


class OccupancyGrid:
    """Log-odds occupancy grid mirroring the world's cell layout."""

    def __init__(self, shape: tuple[int, int], resolution: float):
        self.log_odds = np.zeros(shape, dtype=np.float64)
        self.resolution = float(resolution)

    @classmethod
    def for_world(cls, world: WorldSpec) -> "OccupancyGrid":
        return cls(world.shape, world.resolution)

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.log_odds.shape, self.resolution)
        g.log_odds = self.log_odds.copy()
        return g

    def p_o(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds))

    def state(self) -> np.ndarray:
        """Per-cell classification: UNKNOWN, FREE or OCCUPIED."""
        lo_occ = math.log(P_OCCUPIED / (1.0 - P_OCCUPIED))
        lo_free = math.log(P_FREE / (1.0 - P_FREE))
        out = np.full(self.log_odds.shape, UNKNOWN, dtype=np.int8)
        out[self.log_odds > lo_occ] = OCCUPIED
        out[self.log_odds < lo_free] = FREE
        return out

    def known_free(self) -> np.ndarray:
        return self.state() == FREE

    def known_occupied(self) -> np.ndarray:
        return self.state() == OCCUPIED

    def unknown(self) -> np.ndarray:
        return self.state() == UNKNOWN

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution)))

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return ((col + 0.5) * self.resolution, (row + 0.5) * self.resolution)


@dataclass(frozen=True)
class Scan:
    """One range scan: per-ray absolute angle, range, and hit flag."""

    origin: tuple[float, float]
    angles: np.ndarray
    ranges: np.ndarray
    hits: np.ndarray
    hit_cells: np.ndarray = field(repr=False)  # (n, 2) row/col, -1 where no hit

    def __iter__(self):
        return iter(zip(self.angles.tolist(), self.ranges.tolist()))

    def __len__(self) -> int:
        return len(self.angles)


def _dda_cast(
    walls: np.ndarray,
    resolution: float,
    origin: tuple[float, float],
    angles: np.ndarray,
    max_range: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact grid traversal for a bundle of rays from one origin.

    Returns (ranges, hit flags, hit cells). Rays leaving the grid or
    exceeding max_range report max_range with no hit. Distances are the
    exact parameter at which the ray enters the wall cell.
    """
    h, w = walls.shape
    n = len(angles)
    x0, y0 = origin
    dirx = np.cos(angles)
    diry = np.sin(angles)
    col = np.full(n, int(math.floor(x0 / resolution)), dtype=np.int64)
    row = np.full(n, int(math.floor(y0 / resolution)), dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        step_c = np.sign(dirx).astype(np.int64)
        step_r = np.sign(diry).astype(np.int64)
        next_cx = (col + (step_c > 0)) * resolution
        next_ry = (row + (step_r > 0)) * resolution
        t_max_x = np.where(dirx != 0.0, (next_cx - x0) / dirx, np.inf)
        t_max_y = np.where(diry != 0.0, (next_ry - y0) / diry, np.inf)
        t_delta_x = np.where(dirx != 0.0, resolution / np.abs(dirx), np.inf)
        t_delta_y = np.where(diry != 0.0, resolution / np.abs(diry), np.inf)

    ranges = np.full(n, max_range, dtype=np.float64)
    hits = np.zeros(n, dtype=bool)
    hit_cells = np.full((n, 2), -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    while alive.any():
        go_x = alive & (t_max_x <= t_max_y)
        go_y = alive & ~go_x
        t_cross = np.where(go_x, t_max_x, t_max_y)
        out_of_range = alive & (t_cross > max_range)
        alive &= ~out_of_range
        go_x &= alive
        go_y &= alive
        col = col + np.where(go_x, step_c, 0)
        row = row + np.where(go_y, step_r, 0)
        oob = alive & ((col < 0) | (col >= w) | (row < 0) | (row >= h))
        alive &= ~oob
        idx = np.nonzero(alive)[0]
        if len(idx):
            wall_here = walls[row[idx], col[idx]]
            hit_idx = idx[wall_here]
            ranges[hit_idx] = t_cross[hit_idx]
            hits[hit_idx] = True
            hit_cells[hit_idx, 0] = row[hit_idx]
            hit_cells[hit_idx, 1] = col[hit_idx]
            alive[hit_idx] = False
        t_max_x = np.where(go_x & alive, t_max_x + t_delta_x, t_max_x)
        t_max_y = np.where(go_y & alive, t_max_y + t_delta_y, t_max_y)
    return ranges, hits, hit_cells


def raycast_scan(
    world: WorldSpec, robot: RobotState, n_rays: int = 180, max_range: float = 8.0
) -> Scan:
    """Full 360-degree range scan against the ground-truth walls."""
    if n_rays < 1:
        raise ValueError("n_rays must be at least 1")
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    r, c = world.cell_of(robot.x, robot.y)
    if not world.in_bounds(r, c) or world.walls[r, c]:
        raise WorldError("robot is inside a wall; cannot scan")
    angles = robot.theta + 2.0 * math.pi * np.arange(n_rays) / n_rays
    ranges, hits, hit_cells = _dda_cast(
        world.walls, world.resolution, robot.pos, angles, max_range
    )
    return Scan(origin=robot.pos, angles=angles, ranges=ranges, hits=hits, hit_cells=hit_cells)


def integrate_scan(grid: OccupancyGrid, robot: RobotState, scan: Scan) -> OccupancyGrid:
    """Fold a scan into the grid: cells along each ray get a free update,
    hit cells an occupied update. One update per cell per scan."""
    res = grid.resolution
    h, w = grid.log_odds.shape
    x0, y0 = scan.origin
    # Sample along rays at sub-cell spacing; stop short of the hit cell.
    step = res * 0.3
    base = np.arange(0.0, float(np.max(scan.ranges)) + step, step)
    t = np.broadcast_to(base, (len(scan), len(base)))
    mask = t <= (scan.ranges - res * 0.05)[:, None]
    xs = x0 + np.cos(scan.angles)[:, None] * t
    ys = y0 + np.sin(scan.angles)[:, None] * t
    cols = np.floor(xs[mask] / res).astype(np.int64)
    rows = np.floor(ys[mask] / res).astype(np.int64)
    ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    lin = np.unique(rows[ok] * w + cols[ok])
    free_rows, free_cols = lin // w, lin % w

    grid.log_odds[free_rows, free_cols] -= LOG_ODDS_STEP
    hit = scan.hit_cells[scan.hits]
    if len(hit):
        lin_h = np.unique(hit[:, 0] * w + hit[:, 1])
        grid.log_odds[lin_h // w, lin_h % w] += LOG_ODDS_STEP
    np.clip(grid.log_odds, -LOG_ODDS_CLAMP, LOG_ODDS_CLAMP, out=grid.log_odds)
    return grid


def line_of_sight(world: WorldSpec, p: tuple[float, float], q: tuple[float, float]) -> bool:
    """True when the segment p->q crosses no wall cell (ground truth)."""
    dist = math.hypot(q[0] - p[0], q[1] - p[1])
    if dist < 1e-12:
        return True
    angle = math.atan2(q[1] - p[1], q[0] - p[0])
    ranges, hits, _ = _dda_cast(
        world.walls, world.resolution, p, np.array([angle]), dist
    )
    return not (hits[0] and ranges[0] < dist - 1e-9)


@dataclass(frozen=True)
class Detection2D:
    """One camera observation of a sign, already projected to 3D."""

    signage_id: int
    surface_points: np.ndarray  # (k, 3) meters
    feature: np.ndarray  # unit vector
    view_distance: float
    view_obliquity: float
    view_dir: tuple[float, float]  # unit vector sign -> robot


def _sign_surface_points(sign: SignageSpec) -> np.ndarray:
    """Fixed sample grid on the sign face: 3 lateral offsets x 3 heights."""
    ax, ay = sign.anchor
    nx_, ny_ = sign.facing
    tx, ty = -ny_, nx_
    us = (-SIGN_WIDTH / 2.0, 0.0, SIGN_WIDTH / 2.0)
    zs = (SIGN_Z_BAND[0], (SIGN_Z_BAND[0] + SIGN_Z_BAND[1]) / 2.0, SIGN_Z_BAND[1])
    return np.array([[ax + tx * u, ay + ty * u, z] for u in us for z in zs])


def observe_signage(
    world: WorldSpec,
    robot: RobotState,
    oracle: FeatureOracle,
    cam: CameraParams,
    rng: np.random.Generator,
) -> list[Detection2D]:
    """Signs visible from the current pose, with noisy features.

    A sign is detected when it is in range, inside the camera FOV cone,
    unoccluded in ground truth, and viewed within the obliquity limit.
    Feature noise grows with distance and obliquity.
    """
    detections: list[Detection2D] = []
    res = world.resolution
    for sid, sign in enumerate(world.signage):
        ax, ay = sign.anchor
        vx, vy = ax - robot.x, ay - robot.y
        dist = math.hypot(vx, vy)
        if dist > cam.max_range or dist < 1e-9:
            continue
        bearing = math.atan2(vy, vx)
        if abs(wrap_angle(bearing - robot.theta)) > cam.fov / 2.0:
            continue
        to_robot = (-vx / dist, -vy / dist)
        cos_obl = to_robot[0] * sign.facing[0] + to_robot[1] * sign.facing[1]
        obliquity = math.acos(max(-1.0, min(1.0, cos_obl)))
        if obliquity > cam.max_obliquity:
            continue
        front = (ax + sign.facing[0] * res * 0.5, ay + sign.facing[1] * res * 0.5)
        if not line_of_sight(world, robot.pos, front):
            continue
        feature = oracle.observe(
            sign.label,
            rng,
            dist_frac=dist / cam.max_range,
            obliq_frac=obliquity / cam.max_obliquity,
            distractor=sign.is_distractor,
        )
        detections.append(
            Detection2D(
                signage_id=sid,
                surface_points=_sign_surface_points(sign),
                feature=feature,
                view_distance=dist,
                view_obliquity=obliquity,
                view_dir=to_robot,
            )
        )
    return detections


def advance(
    robot: RobotState,
    path: list[tuple[float, float]],
    v_linear: float = 0.8,
    v_angular: float = 0.1,
) -> RobotState:
    """Drive through the waypoints; the clock pays segment_length/v_linear
    plus |heading change|/v_angular for every turn, including the initial
    turn onto the first segment."""
    if not path:
        return robot
    x, y, heading, clock = robot.x, robot.y, robot.theta, robot.clock
    for wx, wy in path:
        seg = math.hypot(wx - x, wy - y)
        if seg < 1e-12:
            continue
        bearing = math.atan2(wy - y, wx - x)
        clock += abs(wrap_angle(bearing - heading)) / v_angular
        clock += seg / v_linear
        heading = bearing
        x, y = wx, wy
    return RobotState(x=x, y=y, theta=heading, clock=clock)


def turn_to(robot: RobotState, heading: float, v_angular: float = 0.1) -> RobotState:
    """Rotate in place to the commanded heading."""
    dt = abs(wrap_angle(heading - robot.theta)) / v_angular
    return replace(robot, theta=wrap_angle(heading), clock=robot.clock + dt)
