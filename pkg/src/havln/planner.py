"""Grid planning and ground-truth route annotation.

A* runs on the occupancy grid with 8-connected moves (unit cost orthogonal,
sqrt(2) diagonal, octile heuristic, no corner cutting) and a deterministic
tie-break, so equal-cost searches always return the same path. Ground-truth
routes come from an ideal follower that walks the static plan cell by cell
while human playback advances on the simulator clock: when the next cell is
occupied it waits in place up to wait_patience steps, then replans around
the blocking human. Influence labels record whether humans physically cross
the route (direct), are merely visible from it (indirect), or neither.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from heapq import heappush, heappop

import numpy as np

from .geometry import OccupancyGrid, Pose, Vec3, line_of_sight
from .simulator import SimConfig

SQRT2 = math.sqrt(2.0)
WAIT_PATIENCE = 8
SNAP_RADIUS = 1.0
INFLUENCE_RADIUS = 1.0


class Unreachable(Exception):
    """No collision-free path exists between the requested cells."""


@dataclass(frozen=True)
class PlanResult:
    waypoints: tuple
    length: float
    replans: int
    unavoidable_encounters: int
    reachable: bool


@dataclass(frozen=True)
class EpisodeSpec:
    id: str
    scene_id: str
    start: Pose
    goal: Vec3
    instruction: str = ""
    instruction_synthetic: bool = True
    gt_path: PlanResult | None = None
    human_influence: str | None = None  # "direct" | "indirect" | "none"
    unavoidable_encounters: int = 0


def _octile(c0: int, r0: int, c1: int, r1: int) -> float:
    dc = abs(c1 - c0)
    dr = abs(r1 - r0)
    return (dc + dr) + (SQRT2 - 2.0) * (dc if dc < dr else dr)


_MOVES = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


def astar(grid: OccupancyGrid, start, goal, extra_blocked=frozenset()) -> list:
    """Shortest 8-connected cell path from start to goal, inclusive.

    extra_blocked cells count as blocked on top of the grid. Diagonal moves
    require both adjacent orthogonal cells to be free, so paths never cut
    corners. Costs are in cell units. Raises Unreachable when no path exists.
    """
    w = grid.width
    h = grid.height
    sc, sr = start
    gc, gr = goal
    for name, (c, r) in (("start", start), ("goal", goal)):
        if not (0 <= c < w and 0 <= r < h):
            raise ValueError(f"{name} cell ({c}, {r}) outside {w}x{h} grid")
    cells = grid.cells

    def blocked(c, r):
        return cells[r * w + c] != 0 or (c, r) in extra_blocked

    if blocked(sc, sr) or blocked(gc, gr):
        raise Unreachable(f"start or goal cell blocked ({start} -> {goal})")
    if start == goal:
        return [tuple(start)]

    start_idx = sr * w + sc
    goal_idx = gr * w + gc
    g_cost = {start_idx: 0.0}
    parent = {}
    h0 = _octile(sc, sr, gc, gr)
    heap = [(h0, h0, start_idx)]
    closed = set()
    while heap:
        _f, _h, idx = heappop(heap)
        if idx in closed:
            continue
        if idx == goal_idx:
            path = [idx]
            while path[-1] != start_idx:
                path.append(parent[path[-1]])
            path.reverse()
            return [(i % w, i // w) for i in path]
        closed.add(idx)
        c = idx % w
        r = idx // w
        base = g_cost[idx]
        for dc, dr, cost in _MOVES:
            nc = c + dc
            nr = r + dr
            if not (0 <= nc < w and 0 <= nr < h):
                continue
            if blocked(nc, nr):
                continue
            if dc != 0 and dr != 0 and (blocked(c + dc, r) or blocked(c, r + dr)):
                continue  # no corner cutting
            nidx = nr * w + nc
            ng = base + cost
            if nidx not in g_cost or ng < g_cost[nidx] - 1e-12:
                g_cost[nidx] = ng
                parent[nidx] = idx
                hh = _octile(nc, nr, gc, gr)
                heappush(heap, (ng + hh, hh, nidx))
    raise Unreachable(f"no path from {tuple(start)} to {tuple(goal)}")


def path_cost(path) -> float:
    """Cost of an 8-connected cell path in cell units."""
    total = 0.0
    for (c0, r0), (c1, r1) in zip(path, path[1:]):
        total += SQRT2 if (c0 != c1 and r0 != r1) else 1.0
    return total


def inflate_grid(grid: OccupancyGrid, radius: float) -> OccupancyGrid:
    """Grow blocked cells by a disc so a point agent plans with body clearance."""
    if radius <= 0.0:
        return grid
    blocked = np.frombuffer(grid.cells, dtype=np.uint8).reshape(grid.height, grid.width)
    reach = radius / grid.cell_size + 0.5  # center-to-center, conservative half cell
    k = int(reach)
    out = blocked.copy()
    h, w = blocked.shape
    for dr in range(-k, k + 1):
        for dc in range(-k, k + 1):
            if (dr or dc) and math.hypot(dr, dc) <= reach:
                src = blocked[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
                out[max(0, dr):h - max(0, -dr), max(0, dc):w - max(0, -dc)] |= src
    return OccupancyGrid(grid.origin, grid.cell_size, grid.width, grid.height,
                         out.tobytes())


def scene_planning_grid(scene, config: SimConfig = SimConfig()) -> OccupancyGrid:
    """Static obstacles as a planner must see them: walls inflated by the
    agent body, plus scene objects rasterized with the same clearance."""
    grid = inflate_grid(scene.grid, config.agent_radius)
    if not scene.objects:
        return grid
    blocked = bytearray(grid.cells)
    margin = config.agent_radius + 0.5 * grid.cell_size
    for obj in scene.objects:
        for col, row in _disc_cells(grid, obj.position.x, obj.position.y,
                                    obj.radius + margin):
            blocked[row * grid.width + col] = 1
    return OccupancyGrid(grid.origin, grid.cell_size, grid.width, grid.height,
                         bytes(blocked))


def grid_with_free_cell(grid: OccupancyGrid, cell) -> OccupancyGrid:
    """Copy of grid with one cell cleared; planners call this for the start
    cell so a body standing legally inside an inflated margin can route out."""
    col, row = cell
    if not (0 <= col < grid.width and 0 <= row < grid.height):
        return grid
    if not grid.is_blocked(col, row):
        return grid
    cells = bytearray(grid.cells)
    cells[row * grid.width + col] = 0
    return OccupancyGrid(grid.origin, grid.cell_size, grid.width, grid.height,
                         bytes(cells))


class _HumanSchedule:
    """Planar positions of one human for every absolute frame counter."""

    __slots__ = ("human_id", "radius", "n", "xs", "ys")

    def __init__(self, human):
        self.human_id = human.id
        self.radius = human.motion.radius
        self.n = len(human.motion.frames)
        self.xs = [human.base_position.x + f.translation.x for f in human.motion.frames]
        self.ys = [human.base_position.y + f.translation.y for f in human.motion.frames]

    def position(self, frame: int):
        i = frame % self.n
        return self.xs[i], self.ys[i]


def _cell_occupied(grid, schedules, col, row, frame, agent_radius):
    x = grid.origin.x + (col + 0.5) * grid.cell_size
    y = grid.origin.y + (row + 0.5) * grid.cell_size
    for sched in schedules:
        if sched.n == 0:
            continue
        hx, hy = sched.position(frame)
        if math.hypot(hx - x, hy - y) < agent_radius + sched.radius:
            return sched
    return None


def _disc_cells(grid, x, y, radius):
    """Cells whose center lies within radius of (x, y)."""
    cs = grid.cell_size
    c0 = max(0, int((x - radius - grid.origin.x) / cs))
    c1 = min(grid.width - 1, int((x + radius - grid.origin.x) / cs))
    r0 = max(0, int((y - radius - grid.origin.y) / cs))
    r1 = min(grid.height - 1, int((y + radius - grid.origin.y) / cs))
    out = set()
    for row in range(r0, r1 + 1):
        cy = grid.origin.y + (row + 0.5) * cs
        for col in range(c0, c1 + 1):
            cx = grid.origin.x + (col + 0.5) * cs
            if math.hypot(cx - x, cy - y) <= radius:
                out.add((col, row))
    return out


def plan_with_replanning(scene, episode: EpisodeSpec, config: SimConfig = SimConfig(),
                         wait_patience: int = WAIT_PATIENCE) -> PlanResult:
    """Route an ideal follower from episode start to goal among moving humans.

    The follower advances one cell per simulator step while frames advance by
    frames_per_action. A blocked next cell makes it wait in place; after
    wait_patience consecutive blocked steps it replans with the blocking
    human's currently covered cells removed from the grid. The result is
    flagged unreachable when no static path exists or max_steps run out.
    """
    start_cell = scene.grid.world_to_cell(episode.start.position)
    goal_cell = scene.grid.world_to_cell(episode.goal)
    grid = grid_with_free_cell(scene_planning_grid(scene, config), start_cell)
    schedules = [_HumanSchedule(h) for h in scene.humans]
    margin = config.agent_radius

    def finish(cells, replans, reachable):
        waypoints = tuple(scene.grid.cell_to_world(c, r) for c, r in cells)
        length = sum(waypoints[i].distance_to(waypoints[i + 1])
                     for i in range(len(waypoints) - 1))
        return PlanResult(waypoints=waypoints, length=length, replans=replans,
                          unavoidable_encounters=0, reachable=reachable)

    try:
        plan = astar(grid, start_cell, goal_cell)
    except Unreachable:
        return finish([start_cell], 0, False)

    visited = [start_cell]
    pos_idx = 0
    replans = 0
    blocked_streak = 0
    for step in range(config.max_steps):
        if plan[pos_idx] == tuple(goal_cell):
            return finish(visited, replans, True)
        frame = step * config.frames_per_action
        nxt = plan[pos_idx + 1]
        blocker = _cell_occupied(grid, schedules, nxt[0], nxt[1], frame, margin)
        if blocker is None:
            pos_idx += 1
            visited.append(plan[pos_idx])
            blocked_streak = 0
            continue
        blocked_streak += 1
        if blocked_streak > wait_patience:
            replans += 1
            blocked_streak = 0
            hx, hy = blocker.position(frame)
            extra = frozenset(_disc_cells(grid, hx, hy, blocker.radius + margin)
                              - {plan[pos_idx]})
            try:
                plan = astar(grid, plan[pos_idx], goal_cell, extra)
                pos_idx = 0
            except Unreachable:
                pass  # keep waiting; the human may move on
    return finish(visited, replans, False)


def _phase_period(n_frames: int, frames_per_action: int) -> int:
    return n_frames // math.gcd(n_frames, frames_per_action)


def _single_human_arrival(grid, sched, start_cell, goal_cell, config) -> bool:
    """Time-expanded search: can any waiting/moving policy reach the goal with
    only this human present? Exact over (cell, playback phase) states."""
    w = grid.width
    h = grid.height
    cells = grid.cells
    period = _phase_period(sched.n, config.frames_per_action) if sched.n else 1
    margin = config.agent_radius

    def collides(col, row, frame):
        x = grid.origin.x + (col + 0.5) * grid.cell_size
        y = grid.origin.y + (row + 0.5) * grid.cell_size
        hx, hy = sched.position(frame)
        return math.hypot(hx - x, hy - y) < margin + sched.radius

    goal = tuple(goal_cell)
    frontier = {tuple(start_cell)}
    seen = {(tuple(start_cell), 0)}
    for step in range(config.max_steps):
        if goal in frontier:
            return True
        frame = (step + 1) * config.frames_per_action
        phase = (step + 1) % period
        nxt = set()
        for col, row in frontier:
            for dc, dr in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1),
                           (1, 1), (1, -1), (-1, 1), (-1, -1)):
                nc = col + dc
                nr = row + dr
                if not (0 <= nc < w and 0 <= nr < h) or cells[nr * w + nc]:
                    continue
                if dc != 0 and dr != 0 and (cells[row * w + nc] or cells[nr * w + col]):
                    continue
                key = ((nc, nr), phase)
                if key in seen or collides(nc, nr, frame):
                    continue
                seen.add(key)
                nxt.add((nc, nr))
        if not nxt:
            return False
        frontier = nxt
    return goal in frontier


def annotate_ground_truth(scene, episode: EpisodeSpec,
                          config: SimConfig = SimConfig()) -> EpisodeSpec:
    """Fill gt_path, the human influence label, and unavoidable encounters.

    direct: some human's swept disc comes within 1 m of a route waypoint.
    indirect: otherwise, some human is visible (range plus line of sight,
    panoramic) from a waypoint at some playback frame. none: neither.

    A human counts as unavoidable when the time-expanded search finds no
    collision-free arrival within max_steps with that human alone present.
    A reachable ground-truth route is itself a collision-free arrival that
    works against any single human, so unavoidable encounters can only be
    nonzero when the route search failed.
    """
    gt = plan_with_replanning(scene, episode, config)
    schedules = [_HumanSchedule(h) for h in scene.humans]

    influence = "none"
    for sched in schedules:
        if sched.n == 0:
            continue
        if _swept_near_route(sched, gt.waypoints):
            influence = "direct"
            break
    if influence == "none" and schedules:
        for sched in schedules:
            if sched.n and _visible_from_route(scene.grid, sched, gt.waypoints,
                                               config.observe_range):
                influence = "indirect"
                break

    unavoidable = 0
    if not gt.reachable:
        start_cell = scene.grid.world_to_cell(episode.start.position)
        goal_cell = scene.grid.world_to_cell(episode.goal)
        grid = grid_with_free_cell(scene_planning_grid(scene, config), start_cell)
        for sched in schedules:
            if sched.n and not _single_human_arrival(grid, sched, start_cell,
                                                     goal_cell, config):
                unavoidable += 1

    gt = replace(gt, unavoidable_encounters=unavoidable)
    return replace(episode, gt_path=gt, human_influence=influence,
                   unavoidable_encounters=unavoidable)


def _swept_near_route(sched, waypoints) -> bool:
    reach = INFLUENCE_RADIUS + sched.radius
    for wp in waypoints:
        for i in range(sched.n):
            if math.hypot(sched.xs[i] - wp.x, sched.ys[i] - wp.y) <= reach:
                return True
    return False


def _visible_from_route(grid, sched, waypoints, observe_range) -> bool:
    for wp in waypoints:
        for i in range(sched.n):
            x = sched.xs[i]
            y = sched.ys[i]
            if math.hypot(x - wp.x, y - wp.y) > observe_range:
                continue
            target = Vec3(x, y, wp.z)
            if grid.in_extent(target) and line_of_sight(grid, wp, target):
                return True
    return False


def map_to_discrete(waypoints, nav_graph, snap_radius: float = SNAP_RADIUS) -> list:
    """Project a continuous route onto the nav graph as a connected node walk.

    waypoints is a sequence of route points (a PlanResult also works). Every
    waypoint snaps to its nearest node; a waypoint with no node within
    snap_radius is an error. Consecutive duplicates collapse and non-adjacent
    consecutive nodes are bridged by the shortest graph path.
    """
    if isinstance(waypoints, PlanResult):
        waypoints = waypoints.waypoints
    if not nav_graph.nodes:
        raise ValueError("nav graph has no nodes")
    if not waypoints:
        raise ValueError("route has no waypoints")
    snapped = []
    for wp in waypoints:
        best_id, best_pos = min(nav_graph.nodes.items(),
                                key=lambda kv: (wp.distance_to(kv[1]), kv[0]))
        if wp.distance_to(best_pos) > snap_radius:
            raise ValueError(f"waypoint ({wp.x:.2f}, {wp.y:.2f}, {wp.z:.2f}) has no "
                             f"nav node within {snap_radius} m")
        if not snapped or snapped[-1] != best_id:
            snapped.append(best_id)
    walk = [snapped[0]]
    adjacency = nav_graph.adjacency
    for node in snapped[1:]:
        if any(nbr == node for nbr, _ in adjacency[walk[-1]]):
            walk.append(node)
        else:
            bridge = nav_graph.shortest_path(walk[-1], node)
            walk.extend(bridge[1:])
    return walk
