"""The end-to-end exploration loop: sense, map, fuse, retrieve, align,
select the next best pose, and drive there, until nothing is left to do.

Everything is driven by one seeded generator plus deterministic data
structures, so identical (world, config, seed) inputs reproduce the
trajectory log byte for byte.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .alignment import backproject_landmark, refresh_transform
from .features import FeatureOracle, build_feature_pool
from .metrics import RunMetrics, metrics_from_log
from .perception import (
    SignageMap,
    fuse_detection,
    periodic_merge,
    recognition_scope,
    retrieve_label,
)
from .planning import (
    PlannerConfig,
    Viewpoint,
    detect_frontiers,
    generate_viewpoint,
    plan_path,
    reachable_mask,
    select_next_pose,
)
from .venue import VenueMap, build_topo_graph, next_subgoal, solve_tsp_route
from .world import (
    CameraParams,
    OccupancyGrid,
    WorldError,
    WorldSpec,
    advance,
    integrate_scan,
    observe_signage,
    raycast_scan,
    turn_to,
)

__all__ = ["ExploreConfig", "Budgets", "TrajectoryLog", "explore"]


@dataclass
class ExploreConfig:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    camera: CameraParams = field(default_factory=CameraParams)
    gamma_s: float = 0.5
    gamma_d: float = 3.0
    gamma_recall: float = 0.3
    route_advance_score: float = 0.35
    h_hops: int = 1
    gamma_map: float = 150.0
    merge_period: int = 10
    feature_dim: int = 128
    pool_noise: float = 0.05
    pool_size: int = 1
    sigma0: float = 0.1
    sigma_dist: float = 0.5
    sigma_obliq: float = 0.5
    n_rays: int = 180
    lidar_range: float = 8.0
    v_linear: float = 0.8
    v_angular: float = 0.1
    perceive_every: float = 1.0
    viewpoint_min_score: float = 0.0
    viewpoint_retire_score: float = 0.9
    viewpoint_dwell_frames: int = 2  # extra camera frames captured during the arrival turn
    ransac_iterations: int = 200
    ransac_inlier_radius: float = 1.0
    baseline: bool = False  # frontier-only: no viewpoints, no venue guidance


@dataclass
class Budgets:
    max_steps: int = 400
    max_sim_time: float = 3600.0


class TrajectoryLog:
    """Ordered event records: {t, type, payload}, serializable as JSONL."""

    def __init__(self) -> None:
        self.events: list[dict[str, Any]] = []

    def add(self, t: float, type_: str, **payload: Any) -> None:
        self.events.append({"t": float(t), "type": type_, "payload": payload})

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(e, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
            for e in self.events
        )

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


class _Run:
    """Mutable state of one exploration run."""

    def __init__(
        self,
        world: WorldSpec,
        vm: VenueMap,
        cfg: ExploreConfig,
        budgets: Budgets,
        seed: int,
    ):
        for sign in world.signage:
            if not sign.is_distractor and sign.label not in vm.names():
                raise WorldError(
                    f"sign label {sign.label!r} does not exist in the venue map"
                )
        self.world = world
        self.vm = vm
        self.cfg = cfg
        self.budgets = budgets
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.oracle = FeatureOracle(
            dim=cfg.feature_dim,
            seed=seed,
            sigma0=cfg.sigma0,
            sigma_dist=cfg.sigma_dist,
            sigma_obliq=cfg.sigma_obliq,
        )
        self.pool = build_feature_pool(vm, self.oracle, cfg.pool_noise, cfg.pool_size)
        self.graph = build_topo_graph(vm, cfg.gamma_map)
        self.route = solve_tsp_route(self.graph, 0)
        self.route_started = False
        self.subgoal: int | None = self.route.current()
        self.robot = world.start_state()
        self.grid = OccupancyGrid.for_world(world)
        self.bank = SignageMap()
        self.log = TrajectoryLog()
        self.tf = None
        self.prev_landmark: int | None = None
        self.frontier_blacklist: list[tuple[float, float]] = []
        self.visited_viewpoints: set[int] = set()
        # visiting a viewpoint retires every instance at that sign location,
        # so near-duplicate instances of one physical sign are not re-visited
        self.visited_sign_spots: list[tuple[float, float]] = []
        self.perception_frames = 0
        self.out_of_time = False

    # -- sensing ----------------------------------------------------------

    def scan(self) -> None:
        s = raycast_scan(self.world, self.robot, self.cfg.n_rays, self.cfg.lidar_range)
        integrate_scan(self.grid, self.robot, s)

    def log_pose(self) -> None:
        self.log.add(
            self.robot.clock,
            "pose",
            x=self.robot.x,
            y=self.robot.y,
            theta=self.robot.theta,
        )

    def perceive(self) -> None:
        """Observe signage, fuse, retrieve labels, and refresh the alignment
        when recognitions change."""
        cfg = self.cfg
        prev_before = self.prev_landmark
        dets = observe_signage(self.world, self.robot, self.oracle, cfg.camera, self.rng)
        labels_changed = False
        touched: set[int] = set()
        for det in dets:
            idx = fuse_detection(self.bank, det, cfg.gamma_s, cfg.gamma_d)
            inst = self.bank.instances[idx]
            touched.add(inst.uid)
            self.log.add(
                self.robot.clock,
                "detection",
                sign=det.signage_id,
                instance=inst.uid,
                distance=det.view_distance,
                obliquity=det.view_obliquity,
            )
            labels_changed |= self._retrieve_into(inst)
        self.perception_frames += 1
        if self.perception_frames % cfg.merge_period == 0 and len(self.bank) > 1:
            before = len(self.bank)
            periodic_merge(self.bank, cfg.gamma_s, cfg.gamma_d)
            if len(self.bank) != before:
                for inst in self.bank.instances:
                    touched.add(inst.uid)
                    labels_changed |= self._retrieve_into(inst)
        if self.prev_landmark != prev_before:
            # the retrieval scope moved with us; revisit stale labels once
            # (single-view instances are pure noise rolls, leave them alone)
            for inst in list(self.bank.instances):
                if inst.uid not in touched and inst.n_views > 1:
                    labels_changed |= self._retrieve_into(inst)
        if labels_changed and not cfg.baseline:
            self._refresh_alignment()

    def _retrieve_into(self, inst) -> bool:
        cfg = self.cfg
        scope = recognition_scope(self.graph, self.prev_landmark, cfg.h_hops)
        label, score = retrieve_label(inst, self.pool, scope, cfg.gamma_recall)
        changed = label != inst.label
        inst.label, inst.score = label, score
        self.log.add(
            self.robot.clock,
            "recognition",
            instance=inst.uid,
            label=label,
            score=score,
            sources=sorted(inst.sources),
        )
        if label is not None:
            self.prev_landmark = label
            # consuming route entries is irreversible, so demand a little
            # margin over the bare label threshold before advancing
            if not self.cfg.baseline and score >= self.cfg.route_advance_score:
                if not self.route_started:
                    self.route = solve_tsp_route(self.graph, label)
                    self.route_started = True
                self.subgoal = next_subgoal(self.route, label)
        return changed

    def _refresh_alignment(self) -> None:
        cfg = self.cfg
        tf = refresh_transform(
            self.bank,
            self.vm,
            iterations=cfg.ransac_iterations,
            inlier_radius=cfg.ransac_inlier_radius,
            seed=self.seed,
        )
        if tf is not None:
            self.tf = tf
            self.log.add(
                self.robot.clock,
                "transform",
                theta=tf.rotation,
                tx=tf.translation[0],
                ty=tf.translation[1],
                alpha=tf.scale,
                rms=tf.rms_error,
                inliers=tf.inlier_count,
            )

    def goal_world(self) -> tuple[float, float] | None:
        if self.cfg.baseline or self.tf is None or self.subgoal is None:
            return None
        return backproject_landmark(self.tf, self.vm.landmarks[self.subgoal].map_pos)

    # -- candidates -------------------------------------------------------

    def current_frontiers(self):
        frontiers = detect_frontiers(self.grid, self.cfg.planner.min_cluster)
        radius = self.grid.resolution * 1.5
        for f in frontiers:
            if any(math.dist(f.position, b) <= radius for b in self.frontier_blacklist):
                f.visited = True
        return frontiers

    def current_viewpoints(self) -> list[Viewpoint]:
        if self.cfg.baseline:
            return []
        vps: list[Viewpoint] = []
        for i, inst in enumerate(self.bank.instances):
            if inst.uid in self.visited_viewpoints:
                continue
            if not self.cfg.viewpoint_min_score <= inst.score <= self.cfg.viewpoint_retire_score:
                continue
            spot = inst.centroid_2d()
            if any(math.dist(spot, s) <= 1.0 for s in self.visited_sign_spots):
                continue
            vp = generate_viewpoint(
                inst, self.grid, self.cfg.planner.view_dist, instance_index=i
            )
            if vp is not None:
                vps.append(vp)
        return vps

    # -- motion -----------------------------------------------------------

    def _advance_piece(self, target: tuple[float, float]) -> None:
        self.robot = advance(self.robot, [target], self.cfg.v_linear, self.cfg.v_angular)
        self.log_pose()
        self.scan()
        self.perceive()
        if self.robot.clock >= self.budgets.max_sim_time:
            self.out_of_time = True

    def follow_path(self, path: list[tuple[float, float]], goal: tuple[float, float]) -> bool:
        """Drive the path, sensing every ``perceive_every`` meters, replanning
        when the path collides with newly mapped obstacles. Returns True on
        arrival."""
        cfg = self.cfg
        remaining = list(path)
        pieces_since_replan = 0
        while remaining:
            if self.out_of_time:
                return False
            nxt = remaining[0]
            seg = math.dist(self.robot.pos, nxt)
            if seg < 1e-9:
                remaining.pop(0)
                continue
            n_pieces = max(1, int(math.ceil(seg / cfg.perceive_every)))
            sx, sy = self.robot.pos
            exd, eyd = nxt
            arrived_wp = True
            for k in range(1, n_pieces + 1):
                frac = k / n_pieces
                self._advance_piece((sx + (exd - sx) * frac, sy + (eyd - sy) * frac))
                pieces_since_replan += 1
                if self.out_of_time:
                    return False
                at_final_point = k == n_pieces and len(remaining) == 1
                replan = pieces_since_replan >= cfg.planner.replan_period or (
                    not self._path_still_clear([self.robot.pos] + remaining)
                )
                if replan and not at_final_point:
                    new_path = plan_path(self.grid, self.robot.pos, goal, cfg.planner.clearance)
                    if new_path is None:
                        return False
                    remaining = new_path
                    pieces_since_replan = 0
                    arrived_wp = False
                    break
            if arrived_wp and remaining:
                remaining.pop(0)
        return True

    def _path_still_clear(self, pts: list[tuple[float, float]]) -> bool:
        from .planning import _los_clear, _traversable

        trav = _traversable(self.grid, self.cfg.planner.clearance)
        r, c = self.grid.cell_of(*pts[0])
        h, w = trav.shape
        if 0 <= r < h and 0 <= c < w:
            trav[r, c] = True
        blocked = ~trav
        return all(
            _los_clear(blocked, self.grid.resolution, a, b) for a, b in zip(pts, pts[1:])
        )


def explore(
    world: WorldSpec,
    vm: VenueMap,
    cfg: ExploreConfig | None = None,
    budgets: Budgets | None = None,
    seed: int | None = None,
) -> tuple[SignageMap, TrajectoryLog, RunMetrics]:
    """Run signage-aware exploration until no candidates remain, the route is
    exhausted with no frontiers left, or a budget is hit."""
    cfg = cfg or ExploreConfig()
    budgets = budgets or Budgets()
    if budgets.max_steps <= 0 or budgets.max_sim_time <= 0:
        raise ValueError("budgets must be positive")
    run = _Run(world, vm, cfg, budgets, world.rng_seed if seed is None else seed)

    run.scan()
    run.scan()  # two scans so cells pass the classification thresholds
    run.log_pose()
    run.perceive()

    steps = 0
    while steps < budgets.max_steps and not run.out_of_time:
        steps += 1
        frontiers = run.current_frontiers()
        viewpoints = run.current_viewpoints()
        any_frontier = any(not f.visited for f in frontiers)
        # landmark route exhausted and nothing left to explore: stop, even if
        # low-value viewpoints are still pending
        if run.route_started and run.route.exhausted() and not any_frontier:
            break
        reachable = reachable_mask(run.grid, run.robot.pos)
        cand = select_next_pose(
            run.robot.pos,
            frontiers,
            viewpoints,
            run.goal_world(),
            cfg.planner,
            run.grid,
            reachable,
        )
        if cand is None:
            break
        if cand.kind == "frontier":
            target = frontiers[cand.ref].position
        else:
            target = viewpoints[cand.ref].position
        run.log.add(
            run.robot.clock,
            "decision",
            kind=cand.kind,
            utility=cand.utility,
            x=target[0],
            y=target[1],
            n_frontiers=sum(1 for f in frontiers if not f.visited),
            n_viewpoints=len(viewpoints),
        )
        path = plan_path(run.grid, run.robot.pos, target, cfg.planner.clearance)
        if path is None:
            path = _plan_near(run.grid, run.robot.pos, target, cfg.planner.clearance)
        if path is None:
            _mark_visited(run, cand, frontiers, viewpoints)
            continue
        arrived = run.follow_path(path, target)
        _mark_visited(run, cand, frontiers, viewpoints)
        if arrived and cand.kind == "viewpoint":
            run.robot = turn_to(run.robot, viewpoints[cand.ref].heading, cfg.v_angular)
            run.log_pose()
            for _ in range(1 + cfg.viewpoint_dwell_frames):
                run.perceive()

    run.log_pose()
    metrics = metrics_from_log(run.log, world, vm)
    return run.bank, run.log, metrics


def _mark_visited(run: _Run, cand, frontiers, viewpoints) -> None:
    if cand.kind == "frontier":
        run.frontier_blacklist.append(frontiers[cand.ref].position)
    else:
        vp = viewpoints[cand.ref]
        run.visited_viewpoints.add(vp.uid)
        try:
            inst = run.bank.by_uid(vp.uid)
            run.visited_sign_spots.append(inst.centroid_2d())
        except KeyError:
            pass  # instance was merged away since the viewpoint was built


def _plan_near(
    grid: OccupancyGrid, start: tuple[float, float], target: tuple[float, float], clearance: int
) -> list[tuple[float, float]] | None:
    """Fall back to the nearest traversable cell within a small ring of the
    target (inflation can make the exact goal cell unplannable)."""
    res = grid.resolution
    tr, tc = grid.cell_of(*target)
    h, w = grid.log_odds.shape
    candidates = []
    for dr in (-2, -1, 0, 1, 2):
        for dc in (-2, -1, 0, 1, 2):
            r, c = tr + dr, tc + dc
            if 0 <= r < h and 0 <= c < w:
                candidates.append((dr * dr + dc * dc, r, c))
    candidates.sort()
    for d2, r, c in candidates:
        if d2 == 0:
            continue
        p = grid.cell_center(r, c)
        path = plan_path(grid, start, p, clearance)
        if path is not None:
            return path
    return None
