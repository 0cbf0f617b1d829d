"""Scripted baseline policies.

Every policy maps the latest observation to one action per call. Locomotion
is shared: turn until the bearing to the active waypoint is within half a
turn angle, then move forward; stop within a meter of the goal. Waiting is
encoded as a left turn immediately undone by a right turn, flagged "wait"
in the logs, which keeps the action vocabulary at the original six moves.
"""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

from .geometry import disc_blocked_contact, distance_bearing, line_of_sight
from .planner import (WAIT_PATIENCE, Unreachable, astar, grid_with_free_cell,
                      scene_planning_grid)
from .simulator import Action, Observation, SimConfig

WAIT_DISTANCE = 1.0
GOAL_RADIUS = 1.0
HUMAN_MARGIN = 0.2
REACTIVE_PATIENCE = 8
RECOVERY_REVERTS = 6


@dataclass
class AgentContext:
    """What a policy sees each step: the episode contract and the latest
    observation. Policies keep their own memory."""

    episode: "EpisodeSpec"
    observation: Observation
    config: SimConfig


class Agent:
    """Base policy. Subclasses implement act(); flags drain once per step."""

    name = "base"

    def __init__(self, scene, config: SimConfig, seed: int = 0):
        self.scene = scene
        self.config = config
        self.seed = seed
        self._flags: list = []
        self._pending: deque = deque()
        self._inflated = None
        self._stall = 0
        self._reverts_since_plan = 0
        self._avoid_streak = 0
        self._short_aim = 0
        self._last_forward_from = None
        self._last_pos = None
        self._yield_streak = 0
        self._yield_cooldown = 0

    def act(self, ctx: AgentContext) -> Action:
        raise NotImplementedError

    def take_flags(self) -> list:
        out = self._flags
        self._flags = []
        return out

    # -- shared locomotion helpers --

    def _nav_grid(self):
        if self._inflated is None:
            self._inflated = scene_planning_grid(self.scene, self.config)
        return self._inflated

    def _wait_pair(self) -> Action:
        self._flags.append("wait")
        self._pending.append(Action.RIGHT)
        return Action.LEFT

    def _forward_clear(self, pose, heading: float | None = None) -> bool:
        """Predict whether a forward step from pose scrapes a wall or object."""
        cfg = self.config
        h = pose.heading if heading is None else heading
        x = pose.position.x + cfg.step_size * math.cos(h)
        y = pose.position.y + cfg.step_size * math.sin(h)
        if disc_blocked_contact(self.scene.grid, x, y, cfg.agent_radius) is not None:
            return False
        for obj in self.scene.objects:
            if math.hypot(obj.position.x - x,
                          obj.position.y - y) < obj.radius + cfg.agent_radius:
                return False
        return True

    def _avoid_turn(self, pose, bearing: float):
        """Steer around a predicted static scrape; None when boxed in.

        The turn commits to a forward from the new heading via the pending
        queue, otherwise the bearing rule would immediately turn back and
        the policy could spin in place against a wall."""
        self._avoid_streak += 1
        if self._avoid_streak > 12:
            return None  # avoidance is not working; let the revert machinery run
        self._short_aim = 4  # re-aim nearby so pursuit corrects the drift
        self._flags.append("avoid")
        prefer = Action.RIGHT if bearing > 0.0 else Action.LEFT
        delta = self.config.turn_angle if prefer is Action.RIGHT else -self.config.turn_angle
        turn = prefer
        if not self._forward_clear(pose, pose.heading + delta):
            if self._forward_clear(pose, pose.heading - delta):
                turn = Action.LEFT if prefer is Action.RIGHT else Action.RIGHT
        self._pending.append(Action.FORWARD)
        self._last_forward_from = (pose.position.x, pose.position.y)
        return turn

    def _drive(self, ctx: AgentContext, waypoints, index: int) -> tuple:
        """Advance along waypoints: returns (action, new_index).

        Aims at the farthest waypoint still in line of sight on the
        clearance-inflated grid so quantized headings do not scrape corners.
        A forward that did not change the pose was reverted by a collision;
        repeated reverts trigger widening sidestep turns.
        """
        pose = ctx.observation.agent
        pos = pose.position
        step = self.config.step_size
        if self._last_pos is not None and (pos.x, pos.y) != self._last_pos:
            self._stall = 0
            self._avoid_streak = 0
        if (self._last_forward_from is not None
                and (pos.x, pos.y) == self._last_forward_from):
            self._stall += 1
            self._reverts_since_plan += 1
        self._last_forward_from = None
        self._last_pos = (pos.x, pos.y)
        while (index < len(waypoints) - 1
               and pos.planar_distance_to(waypoints[index]) < step):
            index += 1
        if self._stall:
            side = Action.LEFT if self._stall % 2 else Action.RIGHT
            for _ in range(min(self._stall, 5)):
                self._pending.append(side)
            self._pending.append(Action.FORWARD)
            self._flags.append("unstick")
            # arm revert detection for the queued forward
            self._last_forward_from = (pos.x, pos.y)
            if index < len(waypoints) - 1:
                index += 1
            return side, index
        target = waypoints[index]
        if self._short_aim > 0:
            self._short_aim -= 1
        else:
            grid = self._nav_grid()
            look_limit = max(4.0 * step, 1.0)
            for j in range(index + 1, len(waypoints)):
                wp = waypoints[j]
                if pos.planar_distance_to(wp) > look_limit:
                    break
                if line_of_sight(grid, pos, wp):
                    target = wp
                    index = j  # commit: waypoints behind the chord never drag
                else:
                    break
        _d, bearing = distance_bearing(pos, target, pose.heading)
        if abs(bearing) > self.config.turn_angle / 2.0:
            return (Action.RIGHT if bearing > 0.0 else Action.LEFT), index
        if self.config.mode == "ce" and not self._forward_clear(pose):
            turn = self._avoid_turn(pose, bearing)
            if turn is not None:
                return turn, index
        self._last_forward_from = (pos.x, pos.y)
        return Action.FORWARD, index

    def _human_ahead(self, ctx: AgentContext, within: float) -> bool:
        half = self.config.fov / 2.0
        for h in ctx.observation.visible_humans:
            if h.d_agent < within and abs(h.theta_relative) <= half:
                return True
        return False

    def _should_wait(self, blocked: bool, patience: int) -> bool:
        """Debounced yielding: wait while blocked, but give up after patience
        consecutive waits and push on for a cooldown window so a human pacing
        across the route forever cannot deadlock the policy."""
        if self._yield_cooldown > 0:
            self._yield_cooldown -= 1
            return False
        if not blocked:
            self._yield_streak = 0
            return False
        self._yield_streak += 1
        if self._yield_streak > patience:
            self._yield_streak = 0
            self._yield_cooldown = 12
            self._flags.append("wait_timeout")
            return False
        return True


class _PlanningAgent(Agent):
    """Shared machinery for agents that plan their own static route."""

    def _static_plan(self, ctx: AgentContext, extra_blocked=frozenset()):
        pose = ctx.observation.agent
        try:
            start = self.scene.grid.world_to_cell(pose.position)
            goal = self.scene.grid.world_to_cell(ctx.episode.goal)
            # standing legally inside a clearance margin must not strand us
            grid = grid_with_free_cell(self._nav_grid(), start)
            cells = astar(grid, start, goal, extra_blocked)
        except (Unreachable, ValueError):
            return None
        return [self.scene.grid.cell_to_world(c, r) for c, r in cells]

    def _maybe_recover(self, ctx: AgentContext, route, index: int) -> tuple:
        """After enough collision reverts the follower has left its lane and
        sidesteps alone may oscillate; a fresh route from the current pose
        replaces the stale tail."""
        if self._reverts_since_plan < RECOVERY_REVERTS:
            return route, index
        self._reverts_since_plan = 0
        fresh = self._static_plan(ctx)
        if fresh is None:
            return route, index
        self._flags.append("replan")
        self._stall = 0
        self._avoid_streak = 0
        self._short_aim = 0
        self._last_forward_from = None
        return fresh, 0


class OracleFollower(_PlanningAgent):
    """Follows the annotated ground-truth route, yields to nearby humans, and
    replans from its own pose if collision reverts knock it off the route."""

    name = "oracle"

    def __init__(self, scene, config, seed=0, wait_distance: float = WAIT_DISTANCE,
                 patience: int = WAIT_PATIENCE):
        super().__init__(scene, config, seed)
        self.wait_distance = wait_distance
        self.patience = patience
        self._route = None
        self._index = 0

    def act(self, ctx: AgentContext) -> Action:
        if self._pending:
            return self._pending.popleft()
        pose = ctx.observation.agent
        if pose.position.planar_distance_to(ctx.episode.goal) <= GOAL_RADIUS:
            return Action.STOP
        if self._should_wait(self._human_ahead(ctx, self.wait_distance),
                             self.patience):
            return self._wait_pair()
        if self._route is None:
            gt = ctx.episode.gt_path
            if gt is None or not gt.waypoints:
                return Action.STOP
            self._route = list(gt.waypoints)
        self._route, self._index = self._maybe_recover(ctx, self._route, self._index)
        action, self._index = self._drive(ctx, self._route, self._index)
        return action


class Greedy(_PlanningAgent):
    """Shortest static route, blind to humans; collisions are expected."""

    name = "greedy"

    def __init__(self, scene, config, seed=0):
        super().__init__(scene, config, seed)
        self._plan = None
        self._index = 0
        self._planned = False

    def act(self, ctx: AgentContext) -> Action:
        if self._pending:
            return self._pending.popleft()
        pose = ctx.observation.agent
        if pose.position.planar_distance_to(ctx.episode.goal) <= GOAL_RADIUS:
            return Action.STOP
        if not self._planned:
            self._planned = True
            self._plan = self._static_plan(ctx)
        if self._plan is None:
            self._flags.append("unreachable")
            return Action.STOP
        self._plan, self._index = self._maybe_recover(ctx, self._plan, self._index)
        action, self._index = self._drive(ctx, self._plan, self._index)
        return action


class Reactive(_PlanningAgent):
    """Static route plus local avoidance: wait for humans blocking the next
    waypoint, then detour around every currently visible human."""

    name = "reactive"

    def __init__(self, scene, config, seed=0, patience: int = REACTIVE_PATIENCE):
        super().__init__(scene, config, seed)
        self.patience = patience
        self._plan = None
        self._index = 0
        self._planned = False
        self._blocked_streak = 0

    def _inflated_radius(self, human) -> float:
        return human.radius + self.config.agent_radius + HUMAN_MARGIN

    def _blocking(self, ctx: AgentContext) -> bool:
        if self._plan is None:
            return False
        upto = min(self._index + 1, len(self._plan) - 1)
        for h in ctx.observation.visible_humans:
            reach = self._inflated_radius(h)
            for wp in (self._plan[self._index], self._plan[upto]):
                if math.hypot(h.position.x - wp.x, h.position.y - wp.y) < reach:
                    return True
        return False

    def _detour_cells(self, ctx: AgentContext) -> frozenset:
        grid = self.scene.grid
        cells = set()
        cs = grid.cell_size
        for h in ctx.observation.visible_humans:
            reach = self._inflated_radius(h)
            c0 = max(0, int((h.position.x - reach - grid.origin.x) / cs))
            c1 = min(grid.width - 1, int((h.position.x + reach - grid.origin.x) / cs))
            r0 = max(0, int((h.position.y - reach - grid.origin.y) / cs))
            r1 = min(grid.height - 1, int((h.position.y + reach - grid.origin.y) / cs))
            for row in range(r0, r1 + 1):
                for col in range(c0, c1 + 1):
                    cx = grid.origin.x + (col + 0.5) * cs
                    cy = grid.origin.y + (row + 0.5) * cs
                    if math.hypot(cx - h.position.x, cy - h.position.y) <= reach:
                        cells.add((col, row))
        try:
            here = grid.world_to_cell(ctx.observation.agent.position)
            cells.discard(here)
        except ValueError:
            pass
        return frozenset(cells)

    def act(self, ctx: AgentContext) -> Action:
        if self._pending:
            return self._pending.popleft()
        pose = ctx.observation.agent
        if pose.position.planar_distance_to(ctx.episode.goal) <= GOAL_RADIUS:
            return Action.STOP
        if not self._planned:
            self._planned = True
            self._plan = self._static_plan(ctx)
        if self._plan is None:
            self._flags.append("unreachable")
            return Action.STOP
        self._plan, self._index = self._maybe_recover(ctx, self._plan, self._index)
        if self._yield_cooldown > 0:
            self._yield_cooldown -= 1
        elif self._blocking(ctx):
            self._blocked_streak += 1
            if self._blocked_streak <= self.patience:
                return self._wait_pair()
            detour = self._static_plan(ctx, self._detour_cells(ctx))
            self._blocked_streak = 0
            if detour is not None:
                self._plan = detour
                self._index = 0
            else:
                # no route clears every visible human; push on briefly
                self._yield_cooldown = 12
                self._flags.append("push_through")
        else:
            self._blocked_streak = 0
        action, self._index = self._drive(ctx, self._plan, self._index)
        return action


class RandomWalk(Agent):
    """Uniform over forward/left/right with a forced stop on the last step."""

    name = "random"

    def __init__(self, scene, config, seed=0):
        super().__init__(scene, config, seed)
        self._rng = random.Random(seed)
        self._steps = 0

    def act(self, ctx: AgentContext) -> Action:
        if self._steps >= self.config.max_steps - 1:
            return Action.STOP
        self._steps += 1
        return self._rng.choice((Action.FORWARD, Action.LEFT, Action.RIGHT))


AGENTS = {
    OracleFollower.name: OracleFollower,
    Greedy.name: Greedy,
    Reactive.name: Reactive,
    RandomWalk.name: RandomWalk,
}


def make_agent(name: str, scene, config: SimConfig, seed: int = 0) -> Agent:
    try:
        cls = AGENTS[name]
    except KeyError:
        raise ValueError(f"unknown agent {name!r}; choose from {sorted(AGENTS)}") from None
    return cls(scene, config, seed)
