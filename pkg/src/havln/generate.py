"""Synthetic scene and episode generation.

Scenes are rooms hung off a full-width central corridor: every free cell is
mutually reachable by construction, each room gets a door aligned with its
center, objects sit along the non-door walls, and humans are placed by the
swarm near a target object and given closed pacing loops whose total arc
length is drawn from fixed displacement bands. All randomness derives from
one root seed through a documented splitting scheme (sha256 of the root
plus a label tuple), so generation is reproducible byte for byte.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .annotation import Infeasible, NoCleanPose, PlacementProblem, PsoParams, \
    pso_place, refine_placement
from .geometry import BBox, OccupancyGrid, Pose, Vec3
from .planner import EpisodeSpec, Unreachable, annotate_ground_truth, astar, \
    path_cost, scene_planning_grid
from .scene import HumanModel, MotionFrame, MotionSequence, NavGraph, Region, \
    Scene, SceneObject
from .simulator import SimConfig, check_collision

# Trajectory arc-length bands (upper edges in meters) and their target shares.
DISPLACEMENT_BANDS = ((0.5, 0.224), (1.0, 0.373), (1.5, 0.250), (2.0, 0.116),
                      (2.4, 0.037))

ROOM_LABELS = (
    "living room", "bedroom", "kitchen", "dining room", "office", "library",
    "family room", "lounge", "meeting room", "classroom", "gym", "studio",
    "workshop", "laundry room", "pantry", "nursery", "game room", "sunroom",
    "reading room", "music room", "den", "atelier", "break room", "reception",
    "gallery", "lab",
)

OBJECT_LABELS = (
    "table", "chair", "couch", "bookshelf", "cabinet", "desk", "plant",
    "lamp", "bench", "dresser", "counter", "wardrobe",
)

MOTION_DESCRIPTIONS = (
    "pacing while reading a report", "walking back and forth on a phone call",
    "carrying boxes across the room", "tidying up along the shelves",
    "stretching between laps of the room", "wandering while thinking aloud",
    "sweeping the floor in passes", "practicing a presentation on the move",
)

N_FRAMES = 120
HUMAN_RADIUS = 0.3
WALL_INSET = 0.35
OBJECT_SPACING = 1.1
DOOR_CELLS = 9
PACE_MARGIN = 0.15
MAX_AMPLITUDE = 0.45
REFINE_NUDGE = 0.2


def child_seed(root: int, *parts) -> int:
    """Derive a 64-bit stream seed from the root seed and a label tuple."""
    digest = hashlib.sha256(repr((root,) + parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class GenParams:
    width: int = 140          # cells
    height: int = 100         # cells
    cell_size: float = 0.1
    rooms: int = 4
    corridor_width: float = 2.0
    objects: int = 8
    humans: int = 4
    seed: int = 0


@dataclass
class _Room:
    index: int
    region_id: str
    label: str
    x0: float  # interior extent, meters
    x1: float
    y0: float
    y1: float
    door_x: float
    above: bool  # above the corridor
    objects: list


def _sample_band_arc(rng) -> float:
    r = float(rng.random())
    lo = 0.0
    acc = 0.0
    for hi, share in DISPLACEMENT_BANDS:
        acc += share
        if r <= acc or (hi, share) == DISPLACEMENT_BANDS[-1]:
            return lo + float(rng.random()) * (hi - lo)
        lo = hi
    raise AssertionError("unreachable")


def build_pacing_motion(arc: float, amplitude_cap: float, direction: float,
                        rng, radius: float = HUMAN_RADIUS,
                        description: str = "", region_label: str = "",
                        n_frames: int = N_FRAMES) -> MotionSequence:
    """Closed pacing loop with exact total arc length.

    The amplitude divides the arc into whole out-and-back laps
    (arc = 4 * amplitude * laps), so frame n_frames-1 returns to the start
    offset and the wrap from the last frame back to frame 0 is seamless.
    """
    if arc <= 0.0:
        raise ValueError(f"arc must be positive, got {arc}")
    if amplitude_cap <= 0.0:
        raise ValueError(f"amplitude_cap must be positive, got {amplitude_cap}")
    laps = max(1, math.ceil(arc / (4.0 * amplitude_cap)))
    amplitude = arc / (4.0 * laps)
    ux = math.cos(direction)
    uy = math.sin(direction)
    frames = []
    for k in range(n_frames):
        dist = arc * k / (n_frames - 1) if n_frames > 1 else 0.0
        phase = math.fmod(dist, 4.0 * amplitude)
        if phase < amplitude:
            offset = phase
            sign = 1.0
        elif phase < 3.0 * amplitude:
            offset = 2.0 * amplitude - phase
            sign = -1.0
        else:
            offset = phase - 4.0 * amplitude
            sign = 1.0
        heading = direction if sign > 0.0 else direction + math.pi
        frames.append(MotionFrame(Vec3(ux * offset, uy * offset, 0.0), heading))
    del rng
    return MotionSequence(tuple(frames), radius, description, region_label)


def _carve(buf: bytearray, width: int, c0: int, c1: int, r0: int, r1: int) -> None:
    for row in range(r0, r1 + 1):
        base = row * width
        for col in range(c0, c1 + 1):
            buf[base + col] = 0


def gen_scene(params: GenParams = GenParams()) -> Scene:
    """Build a fully validated synthetic scene from generation parameters."""
    cs = params.cell_size
    w = params.width
    h = params.height
    if w < 20 or h < 20:
        raise ValueError(f"grid must be at least 20x20 cells, got {w}x{h}")
    if params.rooms < 1:
        raise ValueError("at least one room is required")
    corr_cells = int(round(params.corridor_width / cs))
    if corr_cells < 8:
        raise ValueError(f"corridor must be at least {8 * cs:.1f} m wide")

    n_top = (params.rooms + 1) // 2
    n_bot = params.rooms // 2
    corr_r0 = (h - corr_cells) // 2
    corr_r1 = corr_r0 + corr_cells  # exclusive
    top_rows = (corr_r0 - 1) - 1  # rows 1 .. corr_r0-2
    bot_rows = (h - 1) - (corr_r1 + 1)
    room_cols = (w - 2 - (max(n_top, n_bot) - 1)) // max(n_top, n_bot)
    if top_rows < 18 or (n_bot > 0 and bot_rows < 18) or room_cols < 18:
        raise ValueError("infeasible room layout: rooms would be smaller than 1.8 m")

    buf = bytearray(b"\x01" * (w * h))
    _carve(buf, w, 1, w - 2, corr_r0, corr_r1 - 1)

    rng_layout = np.random.default_rng(child_seed(params.seed, "layout"))
    labels = list(ROOM_LABELS)
    rng_layout.shuffle(labels)

    rooms = []
    for i in range(params.rooms):
        above = i % 2 == 0
        slot = i // 2
        count_side = n_top if above else n_bot
        span = (w - 2 - (count_side - 1)) // count_side
        c0 = 1 + slot * (span + 1)
        c1 = c0 + span - 1
        if slot == count_side - 1:
            c1 = w - 2
        if above:
            r0, r1 = 1, corr_r0 - 2
            door_row = corr_r0 - 1
        else:
            r0, r1 = corr_r1 + 1, h - 2
            door_row = corr_r1
        _carve(buf, w, c0, c1, r0, r1)
        door_c = (c0 + c1) // 2
        half = DOOR_CELLS // 2
        _carve(buf, w, door_c - half, door_c + half, door_row, door_row)
        rooms.append(_Room(
            index=i, region_id=f"room{i:02d}", label=labels[i % len(labels)],
            x0=c0 * cs, x1=(c1 + 1) * cs, y0=r0 * cs, y1=(r1 + 1) * cs,
            door_x=(door_c + 0.5) * cs, above=above, objects=[]))

    grid = OccupancyGrid(Vec3(0.0, 0.0, 0.0), cs, w, h, bytes(buf))

    regions = [Region(
        id="hall", label="hallway",
        bbox=BBox(Vec3(1 * cs, corr_r0 * cs, 0.0), Vec3((w - 1) * cs, corr_r1 * cs, 0.0)))]
    for room in rooms:
        regions.append(Region(id=room.region_id, label=room.label,
                              bbox=BBox(Vec3(room.x0, room.y0, 0.0),
                                        Vec3(room.x1, room.y1, 0.0))))

    objects = _place_objects(params, rooms)
    # rebuild regions with their object ids attached
    by_room = {room.region_id: [o.id for o in room.objects] for room in rooms}
    regions = [Region(r.id, r.label, r.bbox, tuple(by_room.get(r.id, ())))
               for r in regions]

    humans = _place_humans(params, grid, regions, rooms, objects)
    nav = _build_nav_graph(grid, rooms, corr_r0, corr_r1, cs, w)

    scene = Scene(id=f"scene-{params.seed:04d}", grid=grid, regions=tuple(regions),
                  objects=tuple(objects), humans=tuple(humans), nav_graph=nav)
    return scene


def _place_objects(params: GenParams, rooms) -> list:
    rng = np.random.default_rng(child_seed(params.seed, "objects"))
    objects = []
    for i in range(params.objects):
        room = rooms[i % len(rooms)]
        placed = False
        for _attempt in range(60):
            radius = 0.12 + 0.16 * float(rng.random())
            # non-door walls only, so doors stay clear
            walls = ["left", "right", "far"]
            wall = walls[int(rng.integers(len(walls)))]
            inset = WALL_INSET + radius
            if wall == "left":
                x = room.x0 + inset
                y = room.y0 + inset + float(rng.random()) * (room.y1 - room.y0 - 2 * inset)
            elif wall == "right":
                x = room.x1 - inset
                y = room.y0 + inset + float(rng.random()) * (room.y1 - room.y0 - 2 * inset)
            else:
                y = (room.y1 - inset) if room.above else (room.y0 + inset)
                x = room.x0 + inset + float(rng.random()) * (room.x1 - room.x0 - 2 * inset)
            ok = all(math.hypot(o.position.x - x, o.position.y - y) >= OBJECT_SPACING
                     for o in room.objects)
            if not ok:
                continue
            label = OBJECT_LABELS[int(rng.integers(len(OBJECT_LABELS)))]
            obj = SceneObject(id=f"obj{i:03d}", label=label,
                              position=Vec3(x, y, 0.0), radius=radius)
            room.objects.append(obj)
            objects.append(obj)
            placed = True
            break
        if not placed:
            raise ValueError(f"infeasible object count: room {room.region_id} "
                             f"cannot fit object {i}")
    return objects


def stand_off(base: Vec3, target, bounds, human_radius: float = HUMAN_RADIUS) -> Vec3:
    """Back the swarm's pick away from the target so the discs cannot touch.

    bounds is the containing rectangle as (x0, y0, x1, y1). Keeps the full
    standoff distance and fans around the target until the point clears the
    rectangle margins, so corner objects still work.
    """
    x0, y0, x1, y1 = bounds
    dx = base.x - target.position.x
    dy = base.y - target.position.y
    d = math.hypot(dx, dy)
    want = target.radius + human_radius + 0.12
    if d >= want:
        return base
    margin = human_radius + 0.05
    if d > 1e-9:
        away = math.atan2(dy, dx)
    else:
        away = math.atan2((y0 + y1) / 2.0 - target.position.y,
                          (x0 + x1) / 2.0 - target.position.x)
    for k in range(16):
        ang = away + ((k + 1) // 2) * (math.pi / 8.0) * (1 if k % 2 else -1)
        x = target.position.x + math.cos(ang) * want
        y = target.position.y + math.sin(ang) * want
        if x0 + margin <= x <= x1 - margin and y0 + margin <= y <= y1 - margin:
            return Vec3(x, y, 0.0)
    raise ValueError(f"target {target.id} leaves no standoff room")


def _amplitude_room(base: Vec3, direction: float, room,
                    margin: float = HUMAN_RADIUS + PACE_MARGIN) -> float:
    """Largest pacing amplitude that keeps the whole swing inside the room."""
    ux = math.cos(direction)
    uy = math.sin(direction)
    reach = math.inf
    for sx, sy in ((ux, uy), (-ux, -uy)):
        t = math.inf
        if sx > 1e-12:
            t = min(t, (room.x1 - margin - base.x) / sx)
        elif sx < -1e-12:
            t = min(t, (room.x0 + margin - base.x) / sx)
        if sy > 1e-12:
            t = min(t, (room.y1 - margin - base.y) / sy)
        elif sy < -1e-12:
            t = min(t, (room.y0 + margin - base.y) / sy)
        reach = min(reach, t)
    return max(reach, 0.0)


def _place_humans(params: GenParams, grid, regions, rooms, objects) -> list:
    regions_by_id = {r.id: r for r in regions}
    humans = []
    rooms_with_objects = [room for room in rooms if room.objects]
    if params.humans > 0 and not rooms_with_objects:
        raise ValueError("cannot place humans: no room has a target object")
    occupancy = {}
    for i in range(params.humans):
        rng = np.random.default_rng(child_seed(params.seed, "human", i))
        room = rooms_with_objects[i % len(rooms_with_objects)]
        region = regions_by_id[room.region_id]
        target = room.objects[int(rng.integers(len(room.objects)))]
        others = tuple(o for o in objects if o.id != target.id)
        base = None
        for epsilon in (1.0, 0.6, 0.35):
            try:
                problem = PlacementProblem(region=region, target_object=target,
                                           other_objects=others, epsilon=epsilon,
                                           proximity=1.0)
                base = pso_place(problem, PsoParams(
                    particle_count=24, iterations=96,
                    seed=child_seed(params.seed, "pso", i, epsilon)))
                break
            except (Infeasible, ValueError):
                continue
        if base is None:
            raise ValueError(f"infeasible human count: no placement in {room.region_id}")
        base = stand_off(base, target, (room.x0, room.y0, room.x1, room.y1))

        arc = _sample_band_arc(rng)
        # pace across the line of sight to the target, not into the object
        away = math.atan2(base.y - target.position.y, base.x - target.position.x)
        human = None
        for _attempt in range(4):
            direction = away + math.pi / 2.0
            cap = min(_amplitude_room(base, direction, room), MAX_AMPLITUDE)
            cap = max(cap / (2 ** _attempt), 0.02)
            motion = build_pacing_motion(
                arc, cap, direction, rng,
                description=MOTION_DESCRIPTIONS[int(rng.integers(len(MOTION_DESCRIPTIONS)))],
                region_label=room.label)
            candidate = HumanModel(id=f"hum{i:03d}", motion=motion,
                                   base_position=base, region_id=room.region_id,
                                   group_id=None)
            probe = Scene(id="probe", grid=grid, regions=tuple(regions),
                          objects=tuple(objects), humans=())
            try:
                clean = refine_placement(probe, candidate, max_nudge=REFINE_NUDGE)
            except NoCleanPose:
                continue
            if not region.bbox.contains_planar(clean):
                continue  # nudged through the door gap, retry smaller
            human = HumanModel(id=candidate.id, motion=motion, base_position=clean,
                               region_id=room.region_id, group_id=None)
            break
        if human is None:
            raise ValueError(f"infeasible human count: no clean pose in {room.region_id}")
        occupancy.setdefault(room.region_id, []).append(human.id)
        humans.append(human)
    # humans sharing a room form a loose social group
    groups = {rid: ids for rid, ids in occupancy.items() if len(ids) > 1}
    out = []
    for human in humans:
        gid = None
        if human.region_id in groups:
            gid = f"grp-{human.region_id}"
        out.append(HumanModel(human.id, human.motion, human.base_position,
                              human.region_id, gid))
    return out


def _build_nav_graph(grid, rooms, corr_r0, corr_r1, cs, w) -> NavGraph:
    corridor_y = ((corr_r0 + corr_r1) / 2.0) * cs
    xs = sorted({room.door_x for room in rooms} | {1.0, (w - 1) * cs - 1.0})
    filled = [xs[0]]
    for x in xs[1:]:
        gap = x - filled[-1]
        if gap > 2.0:
            pieces = math.ceil(gap / 2.0)
            for k in range(1, pieces):
                filled.append(filled[-1] + gap / pieces)
        filled.append(x)
    nodes = {}
    corridor_ids = []
    for i, x in enumerate(filled):
        node_id = f"c{i:02d}"
        nodes[node_id] = Vec3(x, corridor_y, 0.0)
        corridor_ids.append(node_id)
    edges = []
    for a, b in zip(corridor_ids, corridor_ids[1:]):
        edges.append((a, b, nodes[a].distance_to(nodes[b])))
    for room in rooms:
        node_id = f"r{room.index:02d}"
        center = Vec3((room.x0 + room.x1) / 2.0, (room.y0 + room.y1) / 2.0, 0.0)
        nodes[node_id] = center
        door_node = min(corridor_ids,
                        key=lambda cid: (abs(nodes[cid].x - room.door_x), cid))
        edges.append((node_id, door_node, center.distance_to(nodes[door_node])))
    return NavGraph(nodes, tuple(edges))


# ---------- episodes ----------


def gen_episodes(scene: Scene, count: int, seed: int = 0,
                 config: SimConfig = SimConfig(), min_length: float = 5.0) -> list:
    """Sample annotated episodes with reachable goals at least min_length away."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(child_seed(seed, "episodes", scene.id))
    grid = scene.grid
    inflated = scene_planning_grid(scene, config)
    free = np.flatnonzero(np.frombuffer(inflated.cells, dtype=np.uint8) == 0)
    if len(free) < 2:
        raise ValueError("scene has no free space to sample episodes")
    episodes = []
    attempts = 0
    while len(episodes) < count:
        attempts += 1
        if attempts > 200 * count:
            raise RuntimeError(f"could not sample {count} episodes with paths of at "
                               f"least {min_length} m; found {len(episodes)}")
        pick = rng.integers(len(free), size=2)
        s_idx = int(free[pick[0]])
        g_idx = int(free[pick[1]])
        start_cell = (s_idx % grid.width, s_idx // grid.width)
        goal_cell = (g_idx % grid.width, g_idx // grid.width)
        try:
            cells = astar(inflated, start_cell, goal_cell)
        except Unreachable:
            continue
        if path_cost(cells) * grid.cell_size < min_length:
            continue
        start_pos = grid.cell_to_world(*start_cell)
        goal_pos = grid.cell_to_world(*goal_cell)
        ahead = cells[min(3, len(cells) - 1)]
        ahead_pos = grid.cell_to_world(*ahead)
        heading = math.atan2(ahead_pos.y - start_pos.y, ahead_pos.x - start_pos.x)
        start = Pose(position=start_pos, heading=heading)
        if check_collision(scene, start, 0, config.agent_radius) is not None:
            continue
        episode = EpisodeSpec(id=f"{scene.id}-ep{len(episodes):03d}",
                              scene_id=scene.id, start=start, goal=goal_pos)
        episode = annotate_ground_truth(scene, episode, config)
        episode = _with_instruction(scene, episode)
        episodes.append(episode)
    return episodes


def _region_label_at(scene: Scene, p: Vec3) -> str:
    for region in scene.regions:
        if region.bbox.contains_planar(p):
            return region.label
    return "open floor"


def _with_instruction(scene: Scene, episode: EpisodeSpec) -> EpisodeSpec:
    from dataclasses import replace

    start_label = _region_label_at(scene, episode.start.position)
    goal_label = _region_label_at(scene, episode.goal)
    landmark = None
    best = 2.0
    for obj in scene.objects:
        d = obj.position.planar_distance_to(episode.goal)
        if d < best:
            best = d
            landmark = obj
    text = f"Leave the {start_label} and make your way to the {goal_label}"
    if landmark is not None:
        text += f"; stop beside the {landmark.label}."
    else:
        text += " and stop when you reach it."
    if episode.human_influence in ("direct", "indirect") and scene.humans:
        human = scene.humans[0]
        for h in scene.humans:
            if h.motion.description:
                human = h
                break
        desc = human.motion.description or "moving about"
        text += f" Mind the person {desc}."
    return replace(episode, instruction=text, instruction_synthetic=True)
