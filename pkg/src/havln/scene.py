"""Scene model: static world description plus its JSON document format.

A scene bundles one occupancy grid, labeled regions, cylindrical objects,
humans with periodic motion sequences, and a sparse navigation graph for
discrete-mode travel. Documents are plain JSON; the serializer emits a
canonical form (fixed key order, sorted graph entries, shortest round-trip
floats) so equal scenes produce byte-identical documents.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from heapq import heappush, heappop

from .geometry import BBox, OccupancyGrid, Vec3

MAX_FRAME_STEP = 0.5  # consecutive playback translations must move less than this


class SceneError(Exception):
    """Raised when a scene document cannot be parsed or fails validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{v.severity} at {v.path}: {v.message}" for v in self.violations]
        super().__init__("invalid scene:\n" + "\n".join(lines))


@dataclass(frozen=True)
class Violation:
    severity: str  # "error" | "warning"
    path: str
    message: str


@dataclass(frozen=True)
class Region:
    id: str
    label: str
    bbox: BBox
    object_ids: tuple = ()


@dataclass(frozen=True)
class SceneObject:
    id: str
    label: str
    position: Vec3
    radius: float


@dataclass(frozen=True)
class MotionFrame:
    translation: Vec3
    heading: float


@dataclass(frozen=True)
class MotionSequence:
    """Periodic playback track: per-frame translation from the base position."""

    frames: tuple
    radius: float
    description: str = ""
    region_label: str = ""


@dataclass(frozen=True)
class HumanModel:
    id: str
    motion: MotionSequence
    base_position: Vec3
    region_id: str
    group_id: str | None = None


@dataclass(frozen=True)
class NavGraph:
    """Undirected sparse travel graph; edge lengths are stored in meters."""

    nodes: dict
    edges: tuple

    # equality stays field-based; hashing by identity keeps the dict field legal
    __hash__ = object.__hash__

    @cached_property
    def adjacency(self) -> dict:
        adj = {node_id: [] for node_id in self.nodes}
        for a, b, length in self.edges:
            if a in adj and b in adj:
                adj[a].append((b, length))
                adj[b].append((a, length))
        for nbrs in adj.values():
            nbrs.sort()
        return adj

    def neighbors(self, node_id: str) -> list:
        return self.adjacency[node_id]

    def shortest_path(self, a: str, b: str) -> list:
        """Dijkstra walk from a to b; deterministic tie-break by node id."""
        if a not in self.nodes or b not in self.nodes:
            raise ValueError(f"unknown nav node in ({a!r}, {b!r})")
        if a == b:
            return [a]
        dist = {a: 0.0}
        prev = {}
        heap = [(0.0, a)]
        seen = set()
        while heap:
            d, node = heappop(heap)
            if node in seen:
                continue
            if node == b:
                break
            seen.add(node)
            for nbr, length in self.adjacency[node]:
                nd = d + length
                if nbr not in dist or nd < dist[nbr]:
                    dist[nbr] = nd
                    prev[nbr] = node
                    heappush(heap, (nd, nbr))
        if b not in prev:
            raise ValueError(f"no nav-graph path from {a!r} to {b!r}")
        path = [b]
        while path[-1] != a:
            path.append(prev[path[-1]])
        path.reverse()
        return path


@dataclass(frozen=True)
class Scene:
    id: str
    grid: OccupancyGrid
    regions: tuple = ()
    objects: tuple = ()
    humans: tuple = ()
    nav_graph: NavGraph = field(default_factory=lambda: NavGraph({}, ()))

    __hash__ = object.__hash__

    @cached_property
    def regions_by_id(self) -> dict:
        return {r.id: r for r in self.regions}

    @cached_property
    def objects_by_id(self) -> dict:
        return {o.id: o for o in self.objects}

    @cached_property
    def humans_by_id(self) -> dict:
        return {h.id: h for h in self.humans}


# ---------- run-length encoding of the blocked mask ----------


def rle_encode(cells: bytes) -> list:
    """Encode row-major cell flags as alternating run lengths, free run first."""
    runs = []
    expect = 0
    count = 0
    for v in cells:
        if v == expect:
            count += 1
        else:
            runs.append(count)
            expect = v
            count = 1
    runs.append(count)
    return runs


def rle_decode(runs, total: int) -> bytes:
    buf = bytearray()
    flag = 0
    for i, run in enumerate(runs):
        if not isinstance(run, int) or isinstance(run, bool) or run < 0:
            raise ValueError(f"run {i} must be a non-negative integer, got {run!r}")
        buf += bytes([flag]) * run
        flag ^= 1
    if len(buf) != total:
        raise ValueError(f"run lengths sum to {len(buf)}, expected {total}")
    return bytes(buf)


# ---------- document parsing ----------


def _err(path, message):
    return Violation("error", path, message)


class _DocReader:
    """Walks raw JSON with path-tracked type errors."""

    def __init__(self):
        self.violations = []

    def fail(self, path, message):
        self.violations.append(_err(path, message))
        raise _Bail()

    def number(self, doc, key, path):
        v = doc.get(key)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            self.fail(f"{path}.{key}", f"expected finite number, got {v!r}")
        return float(v)

    def integer(self, doc, key, path):
        v = doc.get(key)
        if not isinstance(v, int) or isinstance(v, bool):
            self.fail(f"{path}.{key}", f"expected integer, got {v!r}")
        return v

    def text(self, doc, key, path, default=None):
        v = doc.get(key, default)
        if not isinstance(v, str):
            self.fail(f"{path}.{key}", f"expected string, got {v!r}")
        return v

    def array(self, doc, key, path, default=None):
        v = doc.get(key, default)
        if not isinstance(v, list):
            self.fail(f"{path}.{key}", f"expected array, got {v!r}")
        return v

    def mapping(self, doc, key, path, default=None):
        v = doc.get(key, default)
        if not isinstance(v, dict):
            self.fail(f"{path}.{key}", f"expected object, got {v!r}")
        return v

    def vec3(self, raw, path):
        if not isinstance(raw, list) or len(raw) != 3:
            self.fail(path, f"expected [x, y, z], got {raw!r}")
        for c in raw:
            if not isinstance(c, (int, float)) or isinstance(c, bool) or not math.isfinite(c):
                self.fail(path, f"expected finite coordinates, got {raw!r}")
        return Vec3(float(raw[0]), float(raw[1]), float(raw[2]))


class _Bail(Exception):
    pass


def parse_scene_document(doc: dict) -> Scene:
    """Build a Scene from a parsed JSON document; raises SceneError on bad shape."""
    rd = _DocReader()
    if not isinstance(doc, dict):
        raise SceneError([_err("$", f"expected top-level object, got {type(doc).__name__}")])
    try:
        scene_id = rd.text(doc, "id", "$")
        graw = rd.mapping(doc, "grid", "$")
        origin = rd.vec3(graw.get("origin"), "$.grid.origin")
        cell_size = rd.number(graw, "cell_size", "$.grid")
        width = rd.integer(graw, "width", "$.grid")
        height = rd.integer(graw, "height", "$.grid")
        runs = rd.array(graw, "blocked", "$.grid")
        try:
            cells = rle_decode(runs, width * height)
            grid = OccupancyGrid(origin, cell_size, width, height, cells)
        except ValueError as exc:
            rd.fail("$.grid", str(exc))

        regions = []
        for i, rraw in enumerate(rd.array(doc, "regions", "$", default=[])):
            path = f"$.regions[{i}]"
            if not isinstance(rraw, dict):
                rd.fail(path, "expected object")
            braw = rd.mapping(rraw, "bbox", path)
            try:
                bbox = BBox(rd.vec3(braw.get("lo"), f"{path}.bbox.lo"),
                            rd.vec3(braw.get("hi"), f"{path}.bbox.hi"))
            except ValueError as exc:
                rd.fail(f"{path}.bbox", str(exc))
            ids = rd.array(rraw, "object_ids", path, default=[])
            for j, oid in enumerate(ids):
                if not isinstance(oid, str):
                    rd.fail(f"{path}.object_ids[{j}]", f"expected string id, got {oid!r}")
            regions.append(Region(rd.text(rraw, "id", path), rd.text(rraw, "label", path),
                                  bbox, tuple(ids)))

        objects = []
        for i, oraw in enumerate(rd.array(doc, "objects", "$", default=[])):
            path = f"$.objects[{i}]"
            if not isinstance(oraw, dict):
                rd.fail(path, "expected object")
            objects.append(SceneObject(rd.text(oraw, "id", path), rd.text(oraw, "label", path),
                                       rd.vec3(oraw.get("position"), f"{path}.position"),
                                       rd.number(oraw, "radius", path)))

        humans = []
        for i, hraw in enumerate(rd.array(doc, "humans", "$", default=[])):
            path = f"$.humans[{i}]"
            if not isinstance(hraw, dict):
                rd.fail(path, "expected object")
            mraw = rd.mapping(hraw, "motion", path)
            frames = []
            for j, fraw in enumerate(rd.array(mraw, "frames", f"{path}.motion")):
                fpath = f"{path}.motion.frames[{j}]"
                if not isinstance(fraw, list) or len(fraw) != 4:
                    rd.fail(fpath, f"expected [x, y, z, heading], got {fraw!r}")
                for c in fraw:
                    if not isinstance(c, (int, float)) or isinstance(c, bool) or not math.isfinite(c):
                        rd.fail(fpath, f"expected finite numbers, got {fraw!r}")
                frames.append(MotionFrame(Vec3(float(fraw[0]), float(fraw[1]), float(fraw[2])),
                                          float(fraw[3])))
            motion = MotionSequence(tuple(frames), rd.number(mraw, "radius", f"{path}.motion"),
                                    rd.text(mraw, "description", f"{path}.motion", default=""),
                                    rd.text(mraw, "region_label", f"{path}.motion", default=""))
            group = hraw.get("group_id")
            if group is not None and not isinstance(group, str):
                rd.fail(f"{path}.group_id", f"expected string or null, got {group!r}")
            humans.append(HumanModel(rd.text(hraw, "id", path), motion,
                                     rd.vec3(hraw.get("base_position"), f"{path}.base_position"),
                                     rd.text(hraw, "region_id", path), group))

        nraw = rd.mapping(doc, "nav_graph", "$", default={"nodes": {}, "edges": []})
        nodes = {}
        for node_id, praw in rd.mapping(nraw, "nodes", "$.nav_graph", default={}).items():
            nodes[node_id] = rd.vec3(praw, f"$.nav_graph.nodes[{node_id!r}]")
        edges = []
        for i, eraw in enumerate(rd.array(nraw, "edges", "$.nav_graph", default=[])):
            path = f"$.nav_graph.edges[{i}]"
            if (not isinstance(eraw, list) or len(eraw) != 3
                    or not isinstance(eraw[0], str) or not isinstance(eraw[1], str)
                    or not isinstance(eraw[2], (int, float)) or isinstance(eraw[2], bool)
                    or not math.isfinite(eraw[2])):
                rd.fail(path, f"expected [node_a, node_b, length], got {eraw!r}")
            edges.append((eraw[0], eraw[1], float(eraw[2])))
    except _Bail:
        raise SceneError(rd.violations) from None
    return Scene(scene_id, grid, tuple(regions), tuple(objects), tuple(humans),
                 NavGraph(nodes, tuple(edges)))


def load_scene(source) -> Scene:
    """Parse, build, and validate a scene from bytes, text, a file object, or a path.

    Any error-severity violation raises SceneError carrying every violation
    found, each with a path to the offending field.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        # a scene document is always a JSON object; anything else is a path
        if source.lstrip().startswith("{"):
            text = source
        else:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError([_err("$", f"invalid JSON: {exc}")]) from None
    scene = parse_scene_document(doc)
    violations = validate_scene(scene)
    if any(v.severity == "error" for v in violations):
        raise SceneError(violations)
    return scene


def validate_scene(scene: Scene) -> list:
    """Check cross-references and physical invariants; returns all violations."""
    out = []
    grid = scene.grid

    region_ids = {}
    for i, region in enumerate(scene.regions):
        if region.id in region_ids:
            out.append(_err(f"$.regions[{i}].id", f"duplicate region id {region.id!r}"))
        region_ids[region.id] = region

    object_ids = {}
    for i, obj in enumerate(scene.objects):
        path = f"$.objects[{i}]"
        if obj.id in object_ids:
            out.append(_err(f"{path}.id", f"duplicate object id {obj.id!r}"))
        object_ids[obj.id] = obj
        if obj.radius <= 0.0:
            out.append(_err(f"{path}.radius", f"radius must be positive, got {obj.radius}"))
        if not grid.in_extent(obj.position):
            out.append(_err(f"{path}.position", "object lies outside the grid extent"))
        elif grid.is_blocked(*grid.world_to_cell(obj.position)):
            out.append(_err(f"{path}.position", "object sits on a blocked cell"))

    for i, region in enumerate(scene.regions):
        for j, oid in enumerate(region.object_ids):
            if oid not in object_ids:
                out.append(_err(f"$.regions[{i}].object_ids[{j}]",
                                f"unknown object id {oid!r}"))

    human_ids = set()
    for i, human in enumerate(scene.humans):
        path = f"$.humans[{i}]"
        if human.id in human_ids:
            out.append(_err(f"{path}.id", f"duplicate human id {human.id!r}"))
        human_ids.add(human.id)
        motion = human.motion
        if len(motion.frames) < 1:
            out.append(_err(f"{path}.motion.frames", "motion must have at least one frame"))
        if motion.radius <= 0.0:
            out.append(_err(f"{path}.motion.radius",
                            f"radius must be positive, got {motion.radius}"))
        for j in range(1, len(motion.frames)):
            a = motion.frames[j - 1].translation
            b = motion.frames[j].translation
            if a.distance_to(b) >= MAX_FRAME_STEP:
                out.append(_err(f"{path}.motion.frames[{j}]",
                                f"translation jumps {a.distance_to(b):.3f} m between "
                                f"consecutive frames (limit {MAX_FRAME_STEP})"))
        region = region_ids.get(human.region_id)
        if region is None:
            out.append(_err(f"{path}.region_id", f"unknown region id {human.region_id!r}"))
        elif not region.bbox.contains(human.base_position):
            out.append(_err(f"{path}.base_position",
                            f"base position outside region {human.region_id!r} bbox"))
        if not grid.in_extent(human.base_position):
            out.append(_err(f"{path}.base_position", "base position outside the grid extent"))
        else:
            if grid.is_blocked(*grid.world_to_cell(human.base_position)):
                out.append(_err(f"{path}.base_position", "base position on a blocked cell"))
            for j, frame in enumerate(motion.frames):
                if not grid.in_extent(human.base_position + frame.translation):
                    out.append(_err(f"{path}.motion.frames[{j}]",
                                    "playback position leaves the grid extent"))
                    break

    nav = scene.nav_graph
    for i, (a, b, length) in enumerate(nav.edges):
        path = f"$.nav_graph.edges[{i}]"
        missing = [n for n in (a, b) if n not in nav.nodes]
        if missing:
            out.append(_err(path, f"unknown node id {missing[0]!r}"))
            continue
        actual = nav.nodes[a].distance_to(nav.nodes[b])
        if abs(actual - length) > 1e-6:
            out.append(_err(path, f"edge length {length} != node distance {actual:.9f}"))
    if nav.nodes:
        seen = set()
        frontier = [next(iter(sorted(nav.nodes)))]
        while frontier:
            node = frontier.pop()
            if node in seen:
                continue
            seen.add(node)
            frontier.extend(nbr for nbr, _ in nav.adjacency[node] if nbr not in seen)
        stranded = sorted(set(nav.nodes) - seen)
        if stranded:
            out.append(_err("$.nav_graph", f"graph is disconnected; unreachable nodes {stranded}"))
        for node_id, pos in nav.nodes.items():
            if not grid.in_extent(pos):
                out.append(_err(f"$.nav_graph.nodes[{node_id!r}]", "node outside the grid extent"))
    return out


# ---------- canonical serialization ----------


def scene_to_document(scene: Scene) -> dict:
    """Canonical document form: fixed key order, graph entries sorted."""
    grid = scene.grid
    doc = {
        "id": scene.id,
        "grid": {
            "origin": grid.origin.as_list(),
            "cell_size": float(grid.cell_size),
            "width": grid.width,
            "height": grid.height,
            "blocked": rle_encode(grid.cells),
        },
        "regions": [
            {
                "id": r.id,
                "label": r.label,
                "bbox": {"lo": r.bbox.lo.as_list(), "hi": r.bbox.hi.as_list()},
                "object_ids": list(r.object_ids),
            }
            for r in scene.regions
        ],
        "objects": [
            {"id": o.id, "label": o.label, "position": o.position.as_list(), "radius": float(o.radius)}
            for o in scene.objects
        ],
        "humans": [
            {
                "id": h.id,
                "region_id": h.region_id,
                "group_id": h.group_id,
                "base_position": h.base_position.as_list(),
                "motion": {
                    "frames": [[f.translation.x, f.translation.y, f.translation.z, float(f.heading)]
                               for f in h.motion.frames],
                    "radius": float(h.motion.radius),
                    "description": h.motion.description,
                    "region_label": h.motion.region_label,
                },
            }
            for h in scene.humans
        ],
        "nav_graph": {
            "nodes": {node_id: scene.nav_graph.nodes[node_id].as_list()
                      for node_id in sorted(scene.nav_graph.nodes)},
            "edges": sorted([a, b, float(length)] if a <= b else [b, a, float(length)]
                            for a, b, length in scene.nav_graph.edges),
        },
    }
    return doc


def serialize_scene(scene: Scene) -> str:
    return json.dumps(scene_to_document(scene), ensure_ascii=False,
                      separators=(",", ":"), allow_nan=False)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_scene(scene))
        fh.write("\n")
