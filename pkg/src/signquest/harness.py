"""Batch experiment runner: scenario configs, seeded trials, artifact
writing, aggregation, and the balance-factor ablation sweep."""
from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .explorer import Budgets, ExploreConfig, explore
from .metrics import RunMetrics, aggregate
from .planning import PlannerConfig
from .svg import export_trajectory_svg
from .venue import VenueMap, load_venue_map
from .world import CameraParams, WorldSpec, load_world

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "load_scenario",
    "bundled_scenario_path",
    "run_scenario",
    "ablation_sweep",
    "report_dir",
]


class ConfigError(ValueError):
    """Raised for invalid scenario configuration before any run starts."""


_PLANNER_KEYS = {f.name for f in dataclasses.fields(PlannerConfig)}
_CAMERA_KEYS = {f.name for f in dataclasses.fields(CameraParams)}
_EXPLORE_KEYS = {
    "gamma_s",
    "gamma_d",
    "gamma_recall",
    "route_advance_score",
    "h_hops",
    "gamma_map",
    "merge_period",
    "n_rays",
    "lidar_range",
    "v_linear",
    "v_angular",
    "perceive_every",
    "viewpoint_min_score",
    "viewpoint_dwell_frames",
    "viewpoint_retire_score",
    "ransac_iterations",
    "ransac_inlier_radius",
}
_ORACLE_KEYS = {
    "dim": "feature_dim",
    "sigma0": "sigma0",
    "sigma_dist": "sigma_dist",
    "sigma_obliq": "sigma_obliq",
    "pool_noise": "pool_noise",
    "pool_size": "pool_size",
}


@dataclass
class ScenarioConfig:
    name: str
    world: WorldSpec
    venue_map: VenueMap
    explore_config: ExploreConfig
    budgets: Budgets
    trials: int = 3
    base_seed: int = 7
    seeds: list[int] | None = None
    mode: str = "ours"

    def trial_seeds(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [self.base_seed + i for i in range(self.trials)]


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario JSON shipped with the package (e.g. 'mall4_s1')."""
    base = resources.files("signquest").joinpath("data")
    p = Path(str(base.joinpath(f"{name}.scenario.json")))
    if not p.exists():
        available = sorted(
            q.name.replace(".scenario.json", "")
            for q in Path(str(base)).glob("*.scenario.json")
        )
        raise ConfigError(f"no bundled scenario {name!r}; available: {available}")
    return p


def _build_explore_config(doc: dict, mode: str) -> ExploreConfig:
    cfg = ExploreConfig()
    planner_doc = dict(doc.get("planner", {}))
    planner_kwargs = {}
    for key in list(planner_doc):
        if key in _PLANNER_KEYS:
            planner_kwargs[key] = planner_doc.pop(key)
        elif key in _EXPLORE_KEYS:
            setattr(cfg, key, planner_doc.pop(key))
    if planner_doc:
        raise ConfigError(f"unknown planner keys: {sorted(planner_doc)}")
    cfg.planner = replace(PlannerConfig(), **planner_kwargs)
    camera_doc = dict(doc.get("camera", {}))
    bad = set(camera_doc) - _CAMERA_KEYS
    if bad:
        raise ConfigError(f"unknown camera keys: {sorted(bad)}")
    if camera_doc:
        cam = {k: float(v) for k, v in camera_doc.items()}
        if "fov" in cam:
            cam["fov"] = math.radians(cam["fov"])
        if "max_obliquity" in cam:
            cam["max_obliquity"] = math.radians(cam["max_obliquity"])
        cfg.camera = replace(CameraParams(), **cam)
    oracle_doc = dict(doc.get("oracle", {}))
    bad = set(oracle_doc) - set(_ORACLE_KEYS)
    if bad:
        raise ConfigError(f"unknown oracle keys: {sorted(bad)}")
    for key, attr in _ORACLE_KEYS.items():
        if key in oracle_doc:
            setattr(cfg, attr, oracle_doc[key])
    if mode == "baseline":
        cfg.baseline = True
        cfg.planner = replace(cfg.planner, beta=0.0)
    return cfg


def load_scenario(
    path: str | Path,
    trials: int | None = None,
    seed: int | None = None,
    mode: str | None = None,
    beta: float | None = None,
) -> ScenarioConfig:
    """Parse and validate a scenario JSON file; optional arguments override
    the file's trials/seed/mode/beta."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid scenario JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")

    known = {
        "name", "world", "venue_map", "trials", "seed", "seeds", "mode",
        "start", "planner", "camera", "oracle", "budgets",
    }
    bad = set(doc) - known
    if bad:
        raise ConfigError(f"unknown scenario keys: {sorted(bad)}")

    for req in ("world", "venue_map"):
        if req not in doc:
            raise ConfigError(f"scenario is missing the {req!r} field")
    base = path.parent
    world_path = (base / doc["world"]).resolve()
    venue_path = (base / doc["venue_map"]).resolve()
    for p in (world_path, venue_path):
        if not p.exists():
            raise ConfigError(f"referenced file not found: {p}")
    world = load_world(world_path)
    vm = load_venue_map(venue_path)

    the_mode = mode or doc.get("mode", "ours")
    if the_mode not in ("ours", "baseline"):
        raise ConfigError(f"mode must be 'ours' or 'baseline', got {the_mode!r}")
    cfg = _build_explore_config(doc, the_mode)
    if beta is not None:
        cfg.planner = replace(cfg.planner, beta=float(beta))

    if "start" in doc:
        s = doc["start"]
        if not (isinstance(s, list) and len(s) == 3):
            raise ConfigError("'start' must be [x, y, theta]")
        world = replace(world, robot_start=(float(s[0]), float(s[1]), float(s[2])))

    budget_doc = dict(doc.get("budgets", {}))
    bad = set(budget_doc) - {"max_steps", "max_sim_time"}
    if bad:
        raise ConfigError(f"unknown budget keys: {sorted(bad)}")
    budgets = Budgets(**budget_doc)

    n_trials = trials if trials is not None else int(doc.get("trials", 3))
    if n_trials < 1:
        raise ConfigError("trials must be at least 1")
    seeds = doc.get("seeds")
    if seeds is not None and (
        not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds)
    ):
        raise ConfigError("'seeds' must be a list of integers")
    if seed is not None:
        seeds = None  # explicit CLI seed overrides a seeds list
    base_seed = seed if seed is not None else int(doc.get("seed", 7))
    if seeds is not None:
        n_trials = len(seeds)

    return ScenarioConfig(
        name=str(doc.get("name", path.stem)),
        world=world,
        venue_map=vm,
        explore_config=cfg,
        budgets=budgets,
        trials=n_trials,
        base_seed=base_seed,
        seeds=seeds,
        mode=the_mode,
    )


def _run_trial(args: tuple) -> dict:
    cfg: ScenarioConfig
    cfg, trial_index, seed, out_dir = args
    bank, log, metrics = explore(
        cfg.world, cfg.venue_map, cfg.explore_config, cfg.budgets, seed=seed
    )
    transform_payload = None
    for e in log:
        if e["type"] == "transform":
            transform_payload = e["payload"]
    record = {
        "trial": trial_index,
        "seed": seed,
        "mode": cfg.mode,
        "beta": cfg.explore_config.planner.beta,
        "metrics": metrics.to_dict(),
        "transform": transform_payload,
    }
    if out_dir is not None:
        trial_dir = Path(out_dir) / f"trial_{trial_index:02d}"
        trial_dir.mkdir(parents=True, exist_ok=True)
        (trial_dir / "trajectory.jsonl").write_text(log.to_jsonl(), encoding="utf-8")
        (trial_dir / "signage_map.json").write_text(
            json.dumps(bank.export(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        (trial_dir / "metrics.json").write_text(
            json.dumps(record, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        export_trajectory_svg(cfg.world, log, trial_dir / "trajectory.svg", cfg.venue_map)
    return record


def run_scenario(
    cfg: ScenarioConfig, out_dir: str | Path | None = None
) -> list[RunMetrics]:
    """Run all trials, write per-trial artifacts, and return their metrics."""
    seeds = cfg.trial_seeds()
    jobs = [(cfg, i, s, str(out_dir) if out_dir else None) for i, s in enumerate(seeds)]
    workers = int(os.environ.get("EXPLORE_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial, jobs))
    else:
        records = [_run_trial(j) for j in jobs]
    metrics = [RunMetrics(**r["metrics"]) for r in records]
    if out_dir is not None:
        summary = {
            "scenario": cfg.name,
            "mode": cfg.mode,
            "beta": cfg.explore_config.planner.beta,
            "seeds": seeds,
            "aggregate": aggregate(metrics),
        }
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return metrics


def _fmt_ms(entry: dict) -> str:
    if entry.get("mean") is None:
        return "n/a"
    return f"{entry['mean']:.2f} ± {entry['std']:.2f}"


def ablation_sweep(
    cfg: ScenarioConfig, betas: list[float], out_dir: str | Path | None = None
) -> dict:
    """Run the scenario once per balance factor and emit a side-by-side
    table (markdown + JSON)."""
    if not betas:
        raise ConfigError("betas must be non-empty")
    rows = []
    for beta in betas:
        sub = dataclasses.replace(
            cfg,
            explore_config=dataclasses.replace(
                cfg.explore_config, planner=replace(cfg.explore_config.planner, beta=beta)
            ),
        )
        sub_out = Path(out_dir) / f"beta_{beta:g}" if out_dir else None
        metrics = run_scenario(sub, sub_out)
        rows.append({"beta": beta, "aggregate": aggregate(metrics)})

    lines = [
        "| beta | coverage | time per signage (s) | total time (s) |",
        "|---|---|---|---|",
    ]
    for row in rows:
        agg = row["aggregate"]
        lines.append(
            f"| {row['beta']:g} "
            f"| {_fmt_ms(agg['covered'])} / {agg['total_signage']} "
            f"| {_fmt_ms(agg['time_per_signage'])} "
            f"| {_fmt_ms(agg['sim_time_total'])} |"
        )
    table_md = "\n".join(lines) + "\n"
    result = {"scenario": cfg.name, "rows": rows, "markdown": table_md}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.md").write_text(table_md, encoding="utf-8")
        (Path(out_dir) / "ablation.json").write_text(
            json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return result


def report_dir(out_dir: str | Path) -> str:
    """Aggregate every trial metrics.json found under a directory into a
    printable table."""
    records = []
    for p in sorted(Path(out_dir).rglob("metrics.json")):
        records.append(json.loads(p.read_text(encoding="utf-8")))
    if not records:
        raise ConfigError(f"no trial metrics found under {out_dir}")
    metrics = [RunMetrics(**r["metrics"]) for r in records]
    agg = aggregate(metrics)
    lines = [
        f"trials: {len(metrics)}",
        f"coverage: {_fmt_ms(agg['covered'])} / {agg['total_signage']}",
        f"time per signage (s): {_fmt_ms(agg['time_per_signage'])}",
        f"total sim time (s): {_fmt_ms(agg['sim_time_total'])}",
        f"path length (m): {_fmt_ms(agg['path_length'])}",
        f"recognition errors: {_fmt_ms(agg['recognition_errors'])}",
    ]
    return "\n".join(lines) + "\n"
