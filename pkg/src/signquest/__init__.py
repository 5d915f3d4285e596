"""signquest: signage-aware venue-map exploration in a deterministic 2D
simulator."""

from .alignment import (
    AlignmentError,
    Correspondence,
    MapTransform,
    backproject_landmark,
    correspondences_from_bank,
    estimate_transform,
    refresh_transform,
)
from .explorer import Budgets, ExploreConfig, TrajectoryLog, explore
from .features import FeatureOracle, FeaturePool, build_feature_pool
from .metrics import RunMetrics, aggregate, metrics_from_log
from .perception import (
    SignageMap,
    TextInstance3D,
    fuse_detection,
    periodic_merge,
    recognition_scope,
    retrieve_label,
)
from .planning import (
    Candidate,
    Frontier,
    PlannerConfig,
    Viewpoint,
    detect_frontiers,
    directional_heuristic,
    frontier_utility,
    generate_viewpoint,
    hysteresis_gain,
    information_gain,
    plan_path,
    select_next_pose,
    viewpoint_utility,
)
from .venue import (
    Landmark,
    LandmarkRoute,
    TopoGraph,
    VenueMap,
    VenueMapError,
    build_topo_graph,
    h_hop_neighbors,
    load_venue_map,
    next_subgoal,
    solve_tsp_route,
)
from .world import (
    CameraParams,
    Detection2D,
    OccupancyGrid,
    RobotState,
    Scan,
    SignageSpec,
    WorldError,
    WorldSpec,
    advance,
    integrate_scan,
    line_of_sight,
    load_world,
    observe_signage,
    raycast_scan,
    turn_to,
)

__version__ = "0.1.0"
