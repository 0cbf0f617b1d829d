"""Scene annotation: constraint-penalized human placement and capture rigs.

Placement searches a region box for a point close to a target object while
keeping a safe distance from every other object. The objective is the plain
Euclidean distance to the target plus, for each violated constraint, a fixed
penalty of 10 plus 10 per meter of violation. A particle swarm minimizes the
objective; the swarm retries once with doubled budget before declaring the
problem infeasible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import TWO_PI, Vec3, distance_bearing, disc_blocked_contact

PENALTY_BASE = 10.0
PENALTY_PER_METER = 10.0
DEFAULT_HEIGHT_OFFSET = 0.75
SPIRAL_STEP = 0.05


class Infeasible(Exception):
    """No constraint-satisfying placement was found."""


class NoCleanPose(Exception):
    """Spiral refinement exhausted its nudge budget without a clean pose."""


@dataclass(frozen=True)
class PlacementProblem:
    """One placement query: put a human near target_object inside region.

    epsilon is the minimum clearance to every other object; proximity is the
    maximum allowed distance to the target. height_offset, when not None,
    additionally requires candidate z >= target z + height_offset.
    """

    region: "Region"
    target_object: "SceneObject"
    other_objects: tuple = ()
    epsilon: float = 1.0
    proximity: float = 1.0
    height_offset: float | None = None

    def __post_init__(self) -> None:
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.proximity <= 0.0:
            raise ValueError(f"proximity must be positive, got {self.proximity}")
        if not self.region.bbox.contains(self.target_object.position):
            raise ValueError(f"target object {self.target_object.id!r} lies outside "
                             f"region {self.region.id!r}")


@dataclass(frozen=True)
class PsoParams:
    particle_count: int = 40
    iterations: int = 200
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    convergence_eps: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.particle_count < 2:
            raise ValueError(f"particle_count must be >= 2, got {self.particle_count}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class Camera:
    position: Vec3
    theta_lr: float
    theta_ud: float


@dataclass(frozen=True)
class CameraRig:
    """Nine cameras around and above a subject; cameras[8] is the overhead view."""

    cameras: tuple

    def __post_init__(self) -> None:
        if len(self.cameras) != 9:
            raise ValueError(f"rig needs exactly nine cameras, got {len(self.cameras)}")


def _batch_objective(pts: np.ndarray, problem: PlacementProblem) -> tuple:
    """Distance-to-target and total constraint penalty for an (n, 3) batch."""
    target = problem.target_object.position
    t = np.array([target.x, target.y, target.z])
    d_target = np.sqrt(((pts - t) ** 2).sum(axis=1))
    penalty = np.zeros(len(pts))

    over = d_target - problem.proximity
    mask = over > 0.0
    penalty[mask] += PENALTY_BASE + PENALTY_PER_METER * over[mask]

    for obj in problem.other_objects:
        o = np.array([obj.position.x, obj.position.y, obj.position.z])
        d = np.sqrt(((pts - o) ** 2).sum(axis=1))
        short = problem.epsilon - d
        mask = short > 0.0
        penalty[mask] += PENALTY_BASE + PENALTY_PER_METER * short[mask]

    bbox = problem.region.bbox
    lo = np.array([bbox.lo.x, bbox.lo.y, bbox.lo.z])
    hi = np.array([bbox.hi.x, bbox.hi.y, bbox.hi.z])
    outside = np.sqrt((np.maximum(np.maximum(lo - pts, 0.0), pts - hi) ** 2).sum(axis=1))
    mask = outside > 0.0
    penalty[mask] += PENALTY_BASE + PENALTY_PER_METER * outside[mask]

    if problem.height_offset is not None:
        floor = target.z + problem.height_offset
        short = floor - pts[:, 2]
        mask = short > 0.0
        penalty[mask] += PENALTY_BASE + PENALTY_PER_METER * short[mask]
    return d_target, penalty


def constraint_penalty(candidate: Vec3, problem: PlacementProblem) -> float:
    """Total penalty at a single point; zero iff every constraint holds."""
    pts = np.array([[candidate.x, candidate.y, candidate.z]])
    return float(_batch_objective(pts, problem)[1][0])


def fitness(candidate: Vec3, problem: PlacementProblem) -> float:
    """Objective value at a single point: target distance plus penalties."""
    pts = np.array([[candidate.x, candidate.y, candidate.z]])
    d, penalty = _batch_objective(pts, problem)
    return float(d[0] + penalty[0])


def _swarm_best(problem: PlacementProblem, params: PsoParams) -> tuple:
    bbox = problem.region.bbox
    lo = np.array([bbox.lo.x, bbox.lo.y, bbox.lo.z])
    hi = np.array([bbox.hi.x, bbox.hi.y, bbox.hi.z])
    span = hi - lo
    rng = np.random.default_rng(params.seed)
    n = params.particle_count
    pts = lo + rng.random((n, 3)) * span
    vel = (rng.random((n, 3)) - 0.5) * span
    d, pen = _batch_objective(pts, problem)
    fit = d + pen
    pbest = pts.copy()
    pbest_fit = fit.copy()
    g = int(np.argmin(fit))
    gbest = pts[g].copy()
    gbest_fit = float(fit[g])
    stall = 0
    for _ in range(params.iterations):
        r1 = rng.random((n, 3))
        r2 = rng.random((n, 3))
        vel = (params.inertia * vel
               + params.cognitive * r1 * (pbest - pts)
               + params.social * r2 * (gbest - pts))
        pts = np.clip(pts + vel, lo, hi)
        d, pen = _batch_objective(pts, problem)
        fit = d + pen
        improved = fit < pbest_fit
        pbest[improved] = pts[improved]
        pbest_fit[improved] = fit[improved]
        g = int(np.argmin(pbest_fit))
        if pbest_fit[g] < gbest_fit - params.convergence_eps:
            gbest = pbest[g].copy()
            gbest_fit = float(pbest_fit[g])
            stall = 0
        else:
            if pbest_fit[g] < gbest_fit:
                gbest = pbest[g].copy()
                gbest_fit = float(pbest_fit[g])
            stall += 1
            if stall >= 30:
                break
    return Vec3(float(gbest[0]), float(gbest[1]), float(gbest[2])), gbest_fit


def pso_place(problem: PlacementProblem, params: PsoParams = PsoParams()) -> Vec3:
    """Best constraint-satisfying point the swarm can find.

    One automatic retry runs with doubled particles and iterations (and a
    shifted seed); if the best point still violates a constraint the problem
    is reported as Infeasible.
    """
    bbox = problem.region.bbox
    if bbox.hi.x - bbox.lo.x <= 0.0 or bbox.hi.y - bbox.lo.y <= 0.0:
        raise ValueError(f"region {problem.region.id!r} bbox is degenerate in x or y")
    best, best_fit = _swarm_best(problem, params)
    if constraint_penalty(best, problem) == 0.0:
        return best
    retry = replace(params, particle_count=params.particle_count * 2,
                    iterations=params.iterations * 2, seed=params.seed + 1)
    best, best_fit = _swarm_best(problem, retry)
    if constraint_penalty(best, problem) == 0.0:
        return best
    raise Infeasible(f"no feasible placement near {problem.target_object.id!r} in "
                     f"region {problem.region.id!r} (best objective {best_fit:.3f})")


def build_camera_rig(subject: Vec3, epsilon: float = 1.0,
                     delta_z: float = DEFAULT_HEIGHT_OFFSET) -> CameraRig:
    """Nine-view rig around a subject point.

    Ring cameras i = 1..8 pan at theta_lr = pi*i/8 and sit at distance
    epsilon from the subject at bearing theta_lr + pi, so each faces the
    subject. Odd cameras view level; even cameras are raised by delta_z and
    tilt down by atan(delta_z / (sqrt(2)*epsilon)). The ninth camera hovers
    delta_z directly overhead looking straight down.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    tilt = math.atan(delta_z / (math.sqrt(2.0) * epsilon))
    cameras = []
    for i in range(1, 9):
        theta_lr = math.pi * i / 8.0
        back = theta_lr + math.pi
        raised = delta_z if i % 2 == 0 else 0.0
        cameras.append(Camera(
            position=Vec3(subject.x + epsilon * math.cos(back),
                          subject.y + epsilon * math.sin(back),
                          subject.z + raised),
            theta_lr=theta_lr,
            theta_ud=0.0 if i % 2 == 1 else tilt,
        ))
    cameras.append(Camera(position=Vec3(subject.x, subject.y, subject.z + delta_z),
                          theta_lr=0.0, theta_ud=math.pi / 2.0))
    return CameraRig(tuple(cameras))


def _playback_clean(scene, human, base: Vec3) -> bool:
    # Clean means: at every frame the human disc overlaps no object and no
    # blocked cell. Overlap is strict, matching collision semantics.
    r = human.motion.radius
    for frame in human.motion.frames:
        x = base.x + frame.translation.x
        y = base.y + frame.translation.y
        if disc_blocked_contact(scene.grid, x, y, r) is not None:
            return False
        for obj in scene.objects:
            if math.hypot(obj.position.x - x, obj.position.y - y) < r + obj.radius:
                return False
    return True


def refine_placement(scene, human, max_nudge: float = 0.5) -> Vec3:
    """Nearest horizontal nudge (0.05 m spiral) that makes playback clean.

    Returns the human's own base position when it is already clean. Raises
    NoCleanPose when no offset within max_nudge works.
    """
    base = human.base_position
    if _playback_clean(scene, human, base):
        return base
    rings = int(max_nudge / SPIRAL_STEP + 1e-9)
    for k in range(1, rings + 1):
        rho = k * SPIRAL_STEP
        count = 8 * k
        for j in range(count):
            ang = TWO_PI * j / count
            candidate = Vec3(base.x + rho * math.cos(ang),
                             base.y + rho * math.sin(ang), base.z)
            if _playback_clean(scene, human, candidate):
                return candidate
    raise NoCleanPose(f"no clean pose for human {human.id!r} within {max_nudge} m")


@dataclass(frozen=True)
class ContextEntry:
    object: "SceneObject"
    distance: float
    relative_description: str


def extract_context(scene, human, radius: float = 6.0) -> list:
    """Objects within radius of the human, nearest first, with bearing text.

    Bearings are relative to the human's frame-0 heading.
    """
    heading = human.motion.frames[0].heading if human.motion.frames else 0.0
    entries = []
    for obj in scene.objects:
        dist, bearing = distance_bearing(human.base_position, obj.position, heading)
        if dist <= radius:
            entries.append(ContextEntry(
                object=obj, distance=dist,
                relative_description=f"{dist:.2f} meters at bearing {bearing:+.2f} rad"))
    entries.sort(key=lambda e: (e.distance, e.object.id))
    return entries
