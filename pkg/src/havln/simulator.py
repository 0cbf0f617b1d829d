"""Stepped navigation simulator with dynamic human playback.

Humans replay periodic motion tracks driven by a bounded signal queue: a
producer enqueues one refresh signal per rendered frame interval and the
consumer drains the whole queue before every observation, so the active
frame index is always signals_processed modulo the sequence length. Each
agent action advances the logical clock by frames_per_action frame
intervals.

Collisions use sum-of-radii discs with strict inequality; contact at
exactly the combined radius is not a collision. Any violation during a
movement action reverts the agent to its pre-action pose bit-for-bit and
is reported on the step result. Human collisions increment the episode
collision counter; object and static collisions revert without counting.

Two travel modes share one action vocabulary (forward, left, right, up,
down, stop). Continuous mode advances by step_size along the heading and
turns by turn_angle. Discrete mode hops between nav-graph nodes: forward
moves to the adjacent node closest to the current heading (within one
turn_angle), observations are panoramic, and a proximity warning is set
whenever a visible human is closer than the social threshold.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from enum import Enum

from .geometry import (TWO_PI, Pose, Vec3, disc_blocked_contact, distance_bearing,
                       line_of_sight, wrap_pi, wrap_two_pi)


class Action(Enum):
    FORWARD = "forward"
    LEFT = "left"
    RIGHT = "right"
    UP = "up"
    DOWN = "down"
    STOP = "stop"


class Status(Enum):
    RUNNING = "running"
    STOPPED = "stopped"
    TRUNCATED = "truncated"


class SimulationError(Exception):
    pass


@dataclass(frozen=True)
class SimConfig:
    mode: str = "ce"  # "ce" continuous | "de" discrete
    step_size: float = 0.25
    turn_angle: float = math.pi / 12.0
    fov: float = math.pi / 2.0
    observe_range: float = 10.0
    collision_mode: str = "endpoint"  # "endpoint" | "substep"
    substep_length: float = 0.25
    agent_radius: float = 0.2
    social_threshold: float = 3.0  # discrete-mode proximity warning distance
    frame_interval: float = 1.0 / 30.0
    frames_n: int = 120
    queue_max: int = 120
    frames_per_action: int = 4
    max_steps: int = 500

    def __post_init__(self) -> None:
        if self.mode not in ("ce", "de"):
            raise ValueError(f"mode must be 'ce' or 'de', got {self.mode!r}")
        if self.collision_mode not in ("endpoint", "substep"):
            raise ValueError(f"collision_mode must be 'endpoint' or 'substep', "
                             f"got {self.collision_mode!r}")
        if self.step_size <= 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.substep_length <= 0.0:
            raise ValueError(f"substep_length must be positive, got {self.substep_length}")
        if not 0.0 < self.fov <= TWO_PI:
            raise ValueError(f"fov must be in (0, 2*pi], got {self.fov}")
        if self.turn_angle <= 0.0:
            raise ValueError(f"turn_angle must be positive, got {self.turn_angle}")
        if self.agent_radius <= 0.0:
            raise ValueError(f"agent_radius must be positive, got {self.agent_radius}")
        if self.frame_interval <= 0.0:
            raise ValueError(f"frame_interval must be positive, got {self.frame_interval}")
        if self.frames_n < 1 or self.queue_max < 1 or self.frames_per_action < 1:
            raise ValueError("frames_n, queue_max, and frames_per_action must be >= 1")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass
class SimState:
    agent: Pose
    signals_sent: int = 0
    signals_processed: int = 0
    queue_depth: int = 0
    step_count: int = 0
    collision_count: int = 0
    status: Status = Status.RUNNING
    de_node: str | None = None


@dataclass(frozen=True)
class ActivityStatus:
    frame_index: int
    moving: bool


@dataclass(frozen=True)
class HumanObservation:
    human_id: str
    position: Vec3
    d_agent: float
    theta_relative: float
    a_status: ActivityStatus
    radius: float


@dataclass(frozen=True)
class ObjectObservation:
    object_id: str
    label: str
    distance: float
    bearing: float


@dataclass(frozen=True)
class Observation:
    agent: Pose
    visible_humans: tuple
    visible_objects: tuple
    region_label: str
    frame_index: int
    proximity_warning: bool = False


@dataclass(frozen=True)
class CollisionEvent:
    kind: str  # "human" | "object" | "static"
    entity_id: str | None
    distance_at_contact: float
    human_within_1m: bool


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    collision: CollisionEvent | None
    done: bool
    reason: str
    flags: tuple = ()


# ---------- signal queue (producer / consumer counters) ----------


def tick_producer(state: SimState, elapsed: float, config: SimConfig) -> int:
    """Enqueue one refresh signal per whole frame interval of elapsed time.

    The queue saturates at queue_max; signals that do not fit are dropped.
    Returns the number actually enqueued.
    """
    if elapsed < 0.0:
        raise ValueError(f"elapsed must be non-negative, got {elapsed}")
    due = int(elapsed / config.frame_interval + 1e-9)
    room = config.queue_max - state.queue_depth
    enqueued = due if due < room else room
    if enqueued > 0:
        state.queue_depth += enqueued
        state.signals_sent += enqueued
        return enqueued
    return 0


def drain_signals(state: SimState, config: SimConfig) -> int:
    """Consume every queued signal and return the resulting frame index."""
    state.signals_processed += state.queue_depth
    state.queue_depth = 0
    return state.signals_processed % config.frames_n


def human_pose_at(human, frame: int) -> Pose:
    """Pose of a human at an exact frame index of its own sequence."""
    frames = human.motion.frames
    if not 0 <= frame < len(frames):
        raise ValueError(f"frame {frame} out of range [0, {len(frames)}) "
                         f"for human {human.id!r}")
    f = frames[frame]
    return Pose(position=human.base_position + f.translation, heading=f.heading)


# ---------- per-scene caches for the hot path ----------


class _HumanTrack:
    __slots__ = ("human_id", "radius", "n", "xs", "ys", "zs", "headings", "moving")

    def __init__(self, human):
        base = human.base_position
        frames = human.motion.frames
        self.human_id = human.id
        self.radius = human.motion.radius
        self.n = len(frames)
        self.xs = [base.x + f.translation.x for f in frames]
        self.ys = [base.y + f.translation.y for f in frames]
        self.zs = [base.z + f.translation.z for f in frames]
        self.headings = [f.heading for f in frames]
        # moving flag compares each frame with its predecessor (wrapping)
        self.moving = []
        for i in range(self.n):
            prev = frames[i - 1].translation
            cur = frames[i].translation
            self.moving.append(prev.distance_to(cur) > 1e-6 and self.n > 1)


class _SceneCache:
    __slots__ = ("humans", "objects", "region_boxes")

    def __init__(self, scene):
        self.humans = [_HumanTrack(h) for h in scene.humans]
        self.objects = [(o.id, o.label, o.position.x, o.position.y, o.position.z, o.radius)
                        for o in scene.objects]
        self.region_boxes = [(r.bbox.lo.x, r.bbox.hi.x, r.bbox.lo.y, r.bbox.hi.y, r.label)
                             for r in scene.regions]


_scene_caches: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _cache_for(scene) -> _SceneCache:
    cache = _scene_caches.get(scene)
    if cache is None:
        cache = _SceneCache(scene)
        _scene_caches[scene] = cache
    return cache


def _nearest_violation(scene, cache, x: float, y: float, frame: int,
                       agent_radius: float) -> CollisionEvent | None:
    best_kind = None
    best_id = None
    best_d = math.inf
    nearest_human = math.inf
    for track in cache.humans:
        if track.n == 0:
            continue
        i = frame % track.n
        d = math.hypot(track.xs[i] - x, track.ys[i] - y)
        if d < nearest_human:
            nearest_human = d
        if d < agent_radius + track.radius and d < best_d:
            best_kind = "human"
            best_id = track.human_id
            best_d = d
    for obj_id, _label, ox, oy, _oz, oradius in cache.objects:
        d = math.hypot(ox - x, oy - y)
        if d < agent_radius + oradius and d < best_d:
            best_kind = "object"
            best_id = obj_id
            best_d = d
    contact = disc_blocked_contact(scene.grid, x, y, agent_radius)
    if contact is not None and contact < best_d:
        best_kind = "static"
        best_id = None
        best_d = contact
    if best_kind is None:
        return None
    return CollisionEvent(kind=best_kind, entity_id=best_id, distance_at_contact=best_d,
                          human_within_1m=nearest_human <= 1.0)


def check_collision(scene, pose: Pose, frame: int, agent_radius: float) -> CollisionEvent | None:
    """Nearest sum-of-radii violation at a pose, or None.

    frame is an absolute frame counter; each human wraps it over its own
    sequence length. Distances are planar.
    """
    if frame < 0:
        raise ValueError(f"frame must be non-negative, got {frame}")
    return _nearest_violation(scene, _cache_for(scene), pose.position.x, pose.position.y,
                              frame, agent_radius)


class Simulator:
    """Owns one episode's mutable state over an immutable scene."""

    def __init__(self, scene, config: SimConfig = SimConfig()):
        self.scene = scene
        self.config = config
        self._cache = _cache_for(scene)
        self.state: SimState | None = None

    # -- lifecycle --

    def reset(self, start: Pose, seed: int = 0) -> tuple:
        """Start an episode; the start pose must be collision-free at frame 0.

        The playback has no stochastic elements, so seed only tags the run;
        identical (start, seed) pairs always reproduce identical episodes.
        """
        del seed
        cfg = self.config
        if not self.scene.grid.in_extent(start.position):
            raise SimulationError("start pose lies outside the grid extent")
        event = _nearest_violation(self.scene, self._cache, start.position.x,
                                   start.position.y, 0, cfg.agent_radius)
        if event is not None:
            raise SimulationError(f"start pose collides ({event.kind} "
                                  f"{event.entity_id or 'cell'} at "
                                  f"{event.distance_at_contact:.3f} m)")
        de_node = None
        if cfg.mode == "de":
            de_node = self._snap_node(start.position)
            node = self.scene.nav_graph.nodes[de_node]
            start = Pose(position=node, heading=start.heading, pitch=start.pitch)
        self.state = SimState(agent=start, de_node=de_node)
        return self.state, self.observe()

    def _snap_node(self, position: Vec3, snap_radius: float = 1.0) -> str:
        nav = self.scene.nav_graph
        if not nav.nodes:
            raise SimulationError("discrete mode requires a nav graph")
        best = min(nav.nodes.items(), key=lambda kv: (position.distance_to(kv[1]), kv[0]))
        if position.distance_to(best[1]) > snap_radius:
            raise SimulationError(f"no nav node within {snap_radius} m of start")
        return best[0]

    # -- stepping --

    def apply_action(self, action: Action) -> StepResult:
        state = self.state
        if state is None:
            raise SimulationError("reset must be called before stepping")
        if state.status is not Status.RUNNING:
            raise SimulationError(f"episode already finished ({state.status.value})")
        cfg = self.config
        pre = state.agent
        collision: CollisionEvent | None = None
        flags: list = []

        if action is Action.FORWARD:
            if cfg.mode == "ce":
                collision = self._forward_ce(pre)
            else:
                collision, hop_flag = self._forward_de(pre)
                if hop_flag:
                    flags.append(hop_flag)
        elif action is Action.LEFT:
            state.agent = Pose(pre.position, pre.heading - cfg.turn_angle, pre.pitch)
        elif action is Action.RIGHT:
            state.agent = Pose(pre.position, pre.heading + cfg.turn_angle, pre.pitch)
        elif action is Action.UP:
            state.agent = Pose(pre.position, pre.heading, pre.pitch + cfg.turn_angle)
        elif action is Action.DOWN:
            state.agent = Pose(pre.position, pre.heading, pre.pitch - cfg.turn_angle)
        elif action is Action.STOP:
            pass
        else:
            raise SimulationError(f"unknown action {action!r}")

        if collision is not None and collision.kind == "human":
            state.collision_count += 1

        state.step_count += 1
        tick_producer(state, cfg.frames_per_action * cfg.frame_interval, cfg)
        drain_signals(state, cfg)

        if action is Action.STOP:
            state.status = Status.STOPPED
        elif state.step_count >= cfg.max_steps:
            state.status = Status.TRUNCATED

        observation = self.observe()
        if observation.proximity_warning:
            flags.append("proximity_warning")
        return StepResult(observation=observation, collision=collision,
                          done=state.status is not Status.RUNNING,
                          reason=state.status.value, flags=tuple(flags))

    def _forward_ce(self, pre: Pose) -> CollisionEvent | None:
        cfg = self.config
        state = self.state
        cos_h = math.cos(pre.heading)
        sin_h = math.sin(pre.heading)
        frame = state.signals_processed
        if cfg.collision_mode == "substep":
            distances = _substep_distances(cfg.step_size, cfg.substep_length)
        else:
            distances = (cfg.step_size,)
        for d in distances:
            x = pre.position.x + cos_h * d
            y = pre.position.y + sin_h * d
            event = _nearest_violation(self.scene, self._cache, x, y, frame, cfg.agent_radius)
            if event is not None:
                return event  # revert: pose untouched
        x = pre.position.x + cos_h * cfg.step_size
        y = pre.position.y + sin_h * cfg.step_size
        state.agent = Pose(Vec3(x, y, pre.position.z), pre.heading, pre.pitch)
        return None

    def _forward_de(self, pre: Pose):
        cfg = self.config
        state = self.state
        nav = self.scene.nav_graph
        here = nav.nodes[state.de_node]
        best = None
        for nbr, _length in nav.adjacency[state.de_node]:
            pos = nav.nodes[nbr]
            if pos.x == here.x and pos.y == here.y:
                continue
            diff = abs(wrap_pi(math.atan2(pos.y - here.y, pos.x - here.x) - pre.heading))
            if diff <= cfg.turn_angle + 1e-12 and (best is None or (diff, nbr) < best[:2]):
                best = (diff, nbr, pos)
        if best is None:
            return None, "no_valid_hop"
        _diff, nbr, pos = best
        frame = state.signals_processed
        hop = math.hypot(pos.x - pre.position.x, pos.y - pre.position.y)
        ux = (pos.x - pre.position.x) / hop
        uy = (pos.y - pre.position.y) / hop
        for d in _substep_distances(hop, cfg.substep_length):
            x = pre.position.x + ux * d
            y = pre.position.y + uy * d
            event = _nearest_violation(self.scene, self._cache, x, y, frame, cfg.agent_radius)
            if event is not None:
                return event, None  # revert: stay on the current node
        state.agent = Pose(Vec3(pos.x, pos.y, pos.z), pre.heading, pre.pitch)
        state.de_node = nbr
        return None, None

    # -- sensing --

    def observe(self) -> Observation:
        state = self.state
        if state is None:
            raise SimulationError("reset must be called before observing")
        cfg = self.config
        cache = self._cache
        grid = self.scene.grid
        pos = state.agent.position
        heading = state.agent.heading
        panoramic = cfg.mode == "de" or cfg.fov >= TWO_PI
        half = 0.5 * cfg.fov
        signals = state.signals_processed

        humans = []
        for track in cache.humans:
            if track.n == 0:
                continue
            i = signals % track.n
            hx = track.xs[i]
            hy = track.ys[i]
            hz = track.zs[i]
            dx = hx - pos.x
            dy = hy - pos.y
            dz = hz - pos.z
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d > cfg.observe_range:
                continue
            bearing = 0.0 if dx == 0.0 and dy == 0.0 else wrap_pi(math.atan2(dy, dx) - heading)
            if not panoramic and abs(bearing) > half:
                continue
            target = Vec3(hx, hy, hz)
            if not line_of_sight(grid, pos, target):
                continue
            humans.append(HumanObservation(
                human_id=track.human_id, position=target, d_agent=d,
                theta_relative=bearing,
                a_status=ActivityStatus(frame_index=i, moving=track.moving[i]),
                radius=track.radius))

        objects = []
        for obj_id, label, ox, oy, oz, _radius in cache.objects:
            dx = ox - pos.x
            dy = oy - pos.y
            dz = oz - pos.z
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d > cfg.observe_range:
                continue
            bearing = 0.0 if dx == 0.0 and dy == 0.0 else wrap_pi(math.atan2(dy, dx) - heading)
            if not panoramic and abs(bearing) > half:
                continue
            if not line_of_sight(grid, pos, Vec3(ox, oy, oz)):
                continue
            objects.append(ObjectObservation(object_id=obj_id, label=label,
                                             distance=d, bearing=bearing))

        region_label = ""
        for x0, x1, y0, y1, label in cache.region_boxes:
            if x0 <= pos.x <= x1 and y0 <= pos.y <= y1:
                region_label = label
                break

        warning = cfg.mode == "de" and any(h.d_agent < cfg.social_threshold for h in humans)
        return Observation(agent=state.agent, visible_humans=tuple(humans),
                           visible_objects=tuple(objects), region_label=region_label,
                           frame_index=signals % cfg.frames_n, proximity_warning=warning)

    def query_human_states(self, radius: float) -> list:
        """All humans within radius, ignoring field of view and occlusion."""
        state = self.state
        if state is None:
            raise SimulationError("reset must be called before querying")
        if radius < 0.0:
            raise ValueError(f"radius must be non-negative, got {radius}")
        pos = state.agent.position
        heading = state.agent.heading
        signals = state.signals_processed
        out = []
        for track in self._cache.humans:
            if track.n == 0:
                continue
            i = signals % track.n
            target = Vec3(track.xs[i], track.ys[i], track.zs[i])
            d, bearing = distance_bearing(pos, target, heading)
            if d <= radius:
                out.append(HumanObservation(
                    human_id=track.human_id, position=target, d_agent=d,
                    theta_relative=bearing,
                    a_status=ActivityStatus(frame_index=i, moving=track.moving[i]),
                    radius=track.radius))
        out.sort(key=lambda h: (h.d_agent, h.human_id))
        return out


def _substep_distances(total: float, substep: float) -> tuple:
    """Strictly increasing check distances every substep, ending exactly at total."""
    out = []
    k = 1
    while k * substep < total - 1e-12:
        out.append(k * substep)
        k += 1
    out.append(total)
    return tuple(out)


def recheck_collisions_substep(scene, records, config: SimConfig) -> int:
    """Replay a continuous-mode trajectory log and count steps whose attempted
    forward segment contains any substep-granularity violation.

    The attempted segment of a reverted step is reconstructed from the
    pre-action pose, so a collision logged by an endpoint-mode run is always
    re-detected here; mid-segment violations the endpoint check skipped are
    added on top.
    """
    cache = _cache_for(scene)
    hits = 0
    for k, rec in enumerate(records):
        if rec["action"] != Action.FORWARD.value:
            continue
        frame = k * config.frames_per_action
        px, py, _pz = rec["pre_pose"]["position"]
        heading = rec["pre_pose"]["heading"]
        cos_h = math.cos(heading)
        sin_h = math.sin(heading)
        for d in _substep_distances(config.step_size, config.substep_length):
            x = px + cos_h * d
            y = py + sin_h * d
            if _nearest_violation(scene, cache, x, y, frame, config.agent_radius) is not None:
                hits += 1
                break
    return hits
