"""Run metrics computed from the trajectory log, plus cross-trial
aggregation. The log is the source of truth: metrics.json is always derived
from trajectory events, never from internal state."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

from .venue import VenueMap
from .world import WorldSpec

__all__ = ["RunMetrics", "metrics_from_log", "aggregate"]


@dataclass(frozen=True)
class RunMetrics:
    covered: int
    total_signage: int
    sim_time_to_last_coverage: float
    sim_time_total: float
    time_per_signage: float | None
    path_length: float
    recognition_errors: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_log(events: Iterable[dict], world: WorldSpec, vm: VenueMap) -> RunMetrics:
    """Reduce a trajectory event stream to run metrics.

    A non-distractor sign counts as covered once any recognition event
    labels an instance it contributed to with its ground-truth landmark.
    Recognition errors are instances whose final label does not match any
    contributing sign.
    """
    gt_label: dict[int, int | None] = {}
    for sid, sign in enumerate(world.signage):
        gt_label[sid] = None if sign.is_distractor else vm.index_of(sign.label)
    total = sum(1 for s in world.signage if not s.is_distractor)

    covered_at: dict[int, float] = {}
    last_recognition: dict[int, dict] = {}
    last_t = 0.0
    path_length = 0.0
    prev_pose: tuple[float, float] | None = None
    for e in events:
        t = float(e["t"])
        last_t = max(last_t, t)
        p = e["payload"]
        if e["type"] == "pose":
            pos = (p["x"], p["y"])
            if prev_pose is not None:
                path_length += math.dist(prev_pose, pos)
            prev_pose = pos
        elif e["type"] == "recognition":
            last_recognition[p["instance"]] = p
            if p["label"] is None:
                continue
            for sid in p["sources"]:
                if gt_label.get(sid) == p["label"] and sid not in covered_at:
                    covered_at[sid] = t

    errors = 0
    for rec in last_recognition.values():
        if rec["label"] is None:
            continue
        gts = {gt_label.get(sid) for sid in rec["sources"]} - {None}
        if rec["label"] not in gts:
            errors += 1

    covered = len(covered_at)
    return RunMetrics(
        covered=covered,
        total_signage=total,
        sim_time_to_last_coverage=max(covered_at.values()) if covered_at else 0.0,
        sim_time_total=last_t,
        time_per_signage=(last_t / covered) if covered > 0 else None,
        path_length=path_length,
        recognition_errors=errors,
    )


def _mean_std(values: list[float]) -> dict:
    n = len(values)
    if n == 0:
        return {"mean": None, "std": None, "n": 0}
    mean = sum(values) / n
    if n == 1:
        return {"mean": mean, "std": 0.0, "n": 1, "single_trial": True}
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return {"mean": mean, "std": math.sqrt(var), "n": n}


def aggregate(metrics: list[RunMetrics]) -> dict:
    """Per-field mean and sample standard deviation across trials.

    Trials with zero coverage are excluded from the time-per-signage mean
    and flagged in the output.
    """
    if not metrics:
        raise ValueError("cannot aggregate an empty metrics list")
    out: dict = {
        "covered": _mean_std([m.covered for m in metrics]),
        "total_signage": metrics[0].total_signage,
        "sim_time_total": _mean_std([m.sim_time_total for m in metrics]),
        "sim_time_to_last_coverage": _mean_std(
            [m.sim_time_to_last_coverage for m in metrics]
        ),
        "path_length": _mean_std([m.path_length for m in metrics]),
        "recognition_errors": _mean_std([float(m.recognition_errors) for m in metrics]),
    }
    tps = [m.time_per_signage for m in metrics if m.time_per_signage is not None]
    entry = _mean_std(tps)
    excluded = len(metrics) - len(tps)
    if excluded:
        entry["excluded_zero_coverage"] = excluded
    out["time_per_signage"] = entry
    return out
