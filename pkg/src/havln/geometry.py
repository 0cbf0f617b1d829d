"""Planar-dominant 3D geometry: vectors, poses, occupancy grids, visibility.

Distances are meters, angles radians. Bearings follow the atan2 convention
(zero along +x, counter-clockwise positive) and relative bearings are
wrapped to (-pi, pi]. Occupancy grids are row-major with cell (0, 0) at the
origin corner. Navigation is planar per floor: motion updates x and y while
z is carried along unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * math.pi
_INF = float("inf")


def wrap_pi(angle: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(angle + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


def wrap_two_pi(angle: float) -> float:
    """Wrap an angle to [0, 2*pi)."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod can round a tiny negative up to exactly 2*pi
    return a if a < TWO_PI else 0.0


@dataclass(frozen=True)
class Vec3:
    """A point or displacement in meters. Components must be finite."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite vector components ({self.x}, {self.y}, {self.z})")
        # canonical float storage so serialized forms don't depend on input types
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def distance_to(self, other: "Vec3") -> float:
        return (other - self).norm()

    def planar_distance_to(self, other: "Vec3") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_list(self) -> list:
        return [self.x, self.y, self.z]


@dataclass(frozen=True)
class Pose:
    """Agent pose: position plus view direction.

    heading is normalized to [0, 2*pi); pitch is clamped to [-pi/2, pi/2].
    """

    position: Vec3
    heading: float = 0.0
    pitch: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_two_pi(float(self.heading)))
        pitch = float(self.pitch)
        if pitch < -math.pi / 2:
            pitch = -math.pi / 2
        elif pitch > math.pi / 2:
            pitch = math.pi / 2
        object.__setattr__(self, "pitch", pitch)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box; lo must not exceed hi on any axis."""

    lo: Vec3
    hi: Vec3

    def __post_init__(self) -> None:
        if self.lo.x > self.hi.x or self.lo.y > self.hi.y or self.lo.z > self.hi.z:
            raise ValueError(f"malformed bbox: lo {self.lo.as_list()} exceeds hi {self.hi.as_list()}")

    def contains(self, p: Vec3) -> bool:
        return (self.lo.x <= p.x <= self.hi.x
                and self.lo.y <= p.y <= self.hi.y
                and self.lo.z <= p.z <= self.hi.z)

    def contains_planar(self, p: Vec3) -> bool:
        return self.lo.x <= p.x <= self.hi.x and self.lo.y <= p.y <= self.hi.y

    def outside_distance(self, p: Vec3) -> float:
        """Euclidean distance from p to the box; 0 when p is inside."""
        dx = max(self.lo.x - p.x, 0.0, p.x - self.hi.x)
        dy = max(self.lo.y - p.y, 0.0, p.y - self.hi.y)
        dz = max(self.lo.z - p.z, 0.0, p.z - self.hi.z)
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    def center(self) -> Vec3:
        return Vec3((self.lo.x + self.hi.x) / 2.0,
                    (self.lo.y + self.hi.y) / 2.0,
                    (self.lo.z + self.hi.z) / 2.0)


@dataclass(frozen=True)
class OccupancyGrid:
    """Row-major planar occupancy grid; cells holds one byte per cell, 1 = blocked."""

    origin: Vec3
    cell_size: float
    width: int
    height: int
    cells: bytes

    def __post_init__(self) -> None:
        if self.cell_size <= 0.0 or not math.isfinite(self.cell_size):
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if len(self.cells) != self.width * self.height:
            raise ValueError(f"cells length {len(self.cells)} != width*height {self.width * self.height}")
        bad = set(self.cells) - {0, 1}
        if bad:
            raise ValueError(f"cell flags must be 0 or 1, found {sorted(bad)}")

    @classmethod
    def empty(cls, origin: Vec3, cell_size: float, width: int, height: int) -> "OccupancyGrid":
        return cls(origin, cell_size, width, height, bytes(width * height))

    @classmethod
    def from_blocked(cls, origin: Vec3, cell_size: float, width: int, height: int,
                     blocked) -> "OccupancyGrid":
        """Build a grid with the given (col, row) cells blocked."""
        buf = bytearray(width * height)
        for col, row in blocked:
            if not (0 <= col < width and 0 <= row < height):
                raise ValueError(f"blocked cell ({col}, {row}) outside {width}x{height} grid")
            buf[row * width + col] = 1
        return cls(origin, cell_size, width, height, bytes(buf))

    def is_blocked(self, col: int, row: int) -> bool:
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValueError(f"cell ({col}, {row}) outside {self.width}x{self.height} grid")
        return self.cells[row * self.width + col] != 0

    def in_extent(self, p: Vec3) -> bool:
        return (self.origin.x <= p.x < self.origin.x + self.width * self.cell_size
                and self.origin.y <= p.y < self.origin.y + self.height * self.cell_size)

    def world_to_cell(self, p: Vec3) -> tuple:
        """Map a world point to (col, row) by floor division; errors outside the extent."""
        col = math.floor((p.x - self.origin.x) / self.cell_size)
        row = math.floor((p.y - self.origin.y) / self.cell_size)
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValueError(f"point ({p.x}, {p.y}) outside grid extent")
        return col, row

    def cell_to_world(self, col: int, row: int) -> Vec3:
        """Center of the cell, at the grid origin's z."""
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValueError(f"cell ({col}, {row}) outside {self.width}x{self.height} grid")
        return Vec3(self.origin.x + (col + 0.5) * self.cell_size,
                    self.origin.y + (row + 0.5) * self.cell_size,
                    self.origin.z)

    @cached_property
    def _prefix(self) -> list:
        """Flat inclusion-exclusion table of blocked counts, stride width+1."""
        a = np.frombuffer(self.cells, dtype=np.uint8).reshape(self.height, self.width)
        p = np.zeros((self.height + 1, self.width + 1), dtype=np.int64)
        p[1:, 1:] = a.cumsum(axis=0, dtype=np.int64).cumsum(axis=1)
        return p.ravel().tolist()

    def blocked_in_rect(self, c0: int, r0: int, c1: int, r1: int) -> int:
        """Count blocked cells in the inclusive cell rectangle [c0..c1] x [r0..r1]."""
        p = self._prefix
        s = self.width + 1
        return (p[(r1 + 1) * s + c1 + 1] - p[r0 * s + c1 + 1]
                - p[(r1 + 1) * s + c0] + p[r0 * s + c0])


def distance_bearing(a: Vec3, b: Vec3, observer_heading: float) -> tuple:
    """Distance from a to b and the bearing of b relative to the observer heading.

    Distance is the full 3D norm; bearing is planar and wrapped to (-pi, pi].
    Planar-coincident points get bearing 0.
    """
    dx = b.x - a.x
    dy = b.y - a.y
    dz = b.z - a.z
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dx == 0.0 and dy == 0.0:
        return dist, 0.0
    return dist, wrap_pi(math.atan2(dy, dx) - observer_heading)


def in_fov(observer: Pose, target: Vec3, fov: float, max_range: float) -> bool:
    """True when target is within range and inside the symmetric field of view.

    fov must lie in (0, 2*pi]; a full 2*pi field is panoramic and the bearing
    test always passes.
    """
    if not 0.0 < fov <= TWO_PI:
        raise ValueError(f"fov must be in (0, 2*pi], got {fov}")
    if max_range <= 0.0:
        raise ValueError(f"max_range must be positive, got {max_range}")
    dist, bearing = distance_bearing(observer.position, target, observer.heading)
    if dist > max_range:
        return False
    return fov >= TWO_PI or abs(bearing) <= 0.5 * fov


def line_of_sight(grid: OccupancyGrid, a: Vec3, b: Vec3) -> bool:
    """True when the segment a-b crosses only free cells.

    The traversal is a supercover: every cell the segment touches counts,
    and a segment passing exactly through a cell corner is blocked by either
    adjacent side cell (conservative occlusion). Endpoints must lie inside
    the grid extent.
    """
    if not grid.in_extent(a):
        raise ValueError(f"segment endpoint ({a.x}, {a.y}) outside grid extent")
    if not grid.in_extent(b):
        raise ValueError(f"segment endpoint ({b.x}, {b.y}) outside grid extent")
    # Canonical direction makes visibility exactly symmetric.
    if (b.x, b.y) < (a.x, a.y):
        a, b = b, a
    w = grid.width
    h = grid.height
    inv = 1.0 / grid.cell_size
    ax = (a.x - grid.origin.x) * inv
    ay = (a.y - grid.origin.y) * inv
    bx = (b.x - grid.origin.x) * inv
    by = (b.y - grid.origin.y) * inv
    cx = min(int(ax), w - 1)
    cy = min(int(ay), h - 1)
    ex = min(int(bx), w - 1)
    ey = min(int(by), h - 1)
    cells = grid.cells
    if cells[cy * w + cx] or cells[ey * w + ex]:
        return False
    # Free bounding rectangle short-circuits the common open-room case.
    lo_r, hi_r = (cy, ey) if cy <= ey else (ey, cy)
    if grid.blocked_in_rect(min(cx, ex), lo_r, max(cx, ex), hi_r) == 0:
        return True
    if cx == ex and cy == ey:
        return True
    dx = bx - ax
    dy = by - ay
    # dx >= 0 after canonicalization
    if dx > 0.0:
        tmax_x = (cx + 1 - ax) / dx
        tdx = 1.0 / dx
    else:
        tmax_x = _INF
        tdx = _INF
    if dy > 0.0:
        step_y = 1
        tmax_y = (cy + 1 - ay) / dy
        tdy = 1.0 / dy
    elif dy < 0.0:
        step_y = -1
        tmax_y = (cy - ay) / dy
        tdy = -1.0 / dy
    else:
        step_y = 0
        tmax_y = _INF
        tdy = _INF
    for _ in range(2 * (abs(ex - cx) + abs(ey - cy)) + 4):
        if cx == ex and cy == ey:
            return True
        if tmax_x < tmax_y:
            cx += 1
            tmax_x += tdx
        elif tmax_y < tmax_x:
            cy += step_y
            tmax_y += tdy
        else:
            # Exact corner crossing: both side cells occlude.
            if cells[cy * w + cx + 1] or cells[(cy + step_y) * w + cx]:
                return False
            cx += 1
            cy += step_y
            tmax_x += tdx
            tmax_y += tdy
        if cells[cy * w + cx]:
            return False
    return True


def disc_blocked_contact(grid: OccupancyGrid, x: float, y: float, radius: float):
    """Contact distance when a disc at (x, y) overlaps blocked space, else None.

    Overlap is strict: a disc exactly touching a blocked cell edge does not
    count. Space outside the grid extent is treated as blocked, so a disc
    poking past the boundary reports contact with the boundary itself.
    """
    ox = grid.origin.x
    oy = grid.origin.y
    cs = grid.cell_size
    max_x = ox + grid.width * cs
    max_y = oy + grid.height * cs
    edge = min(x - ox, max_x - x, y - oy, max_y - y)
    best = None
    if edge < radius:
        best = max(edge, 0.0)
    c0 = int((x - radius - ox) / cs)
    c1 = int((x + radius - ox) / cs)
    r0 = int((y - radius - oy) / cs)
    r1 = int((y + radius - oy) / cs)
    if c0 < 0:
        c0 = 0
    if r0 < 0:
        r0 = 0
    if c1 >= grid.width:
        c1 = grid.width - 1
    if r1 >= grid.height:
        r1 = grid.height - 1
    if c1 < c0 or r1 < r0:
        return best
    if grid.blocked_in_rect(c0, r0, c1, r1) == 0:
        return best
    cells = grid.cells
    w = grid.width
    r2 = radius * radius
    for row in range(r0, r1 + 1):
        base = row * w
        cy0 = oy + row * cs
        for col in range(c0, c1 + 1):
            if not cells[base + col]:
                continue
            cx0 = ox + col * cs
            # distance from (x, y) to the nearest point of the cell rectangle
            nx = cx0 if x < cx0 else (cx0 + cs if x > cx0 + cs else x)
            ny = cy0 if y < cy0 else (cy0 + cs if y > cy0 + cs else y)
            ddx = x - nx
            ddy = y - ny
            d2 = ddx * ddx + ddy * ddy
            if d2 < r2:
                d = math.sqrt(d2)
                if best is None or d < best:
                    best = d
    return best
