"""Human-aware navigation simulation toolkit.

The package simulates an agent navigating indoor scenes among moving
humans: scene documents with occupancy grids and replayed human motion,
continuous and graph-based action spaces, swarm-based human placement,
route planning oracles, scripted baseline agents, and batch evaluation.
"""
from .agents import AGENTS, AgentContext, Agent, Greedy, OracleFollower, \
    RandomWalk, Reactive, make_agent
from .annotation import Camera, CameraRig, ContextEntry, Infeasible, \
    NoCleanPose, PlacementProblem, PsoParams, build_camera_rig, \
    constraint_penalty, extract_context, fitness, pso_place, refine_placement
from .generate import GenParams, build_pacing_motion, child_seed, gen_episodes, \
    gen_scene
from .geometry import BBox, OccupancyGrid, Pose, Vec3, disc_blocked_contact, \
    distance_bearing, in_fov, line_of_sight, wrap_pi
from .metrics import EpisodeRecord, EvalReport, LogError, aggregate_report, \
    compute_metrics, format_report_table, is_success, read_log, record_from_log
from .planner import EpisodeSpec, PlanResult, Unreachable, annotate_ground_truth, \
    astar, inflate_grid, map_to_discrete, path_cost, plan_with_replanning, \
    scene_planning_grid
from .runner import RunManifest, load_episodes, load_manifest, run_batch, \
    run_episode, save_episodes
from .scene import HumanModel, MotionFrame, MotionSequence, NavGraph, Region, \
    Scene, SceneError, SceneObject, Violation, load_scene, parse_scene_document, \
    rle_decode, rle_encode, save_scene, scene_to_document, serialize_scene, \
    validate_scene
from .simulator import Action, CollisionEvent, Observation, SimConfig, SimState, \
    Simulator, StepResult, check_collision, drain_signals, human_pose_at, \
    recheck_collisions_substep, tick_producer

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
