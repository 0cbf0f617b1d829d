"""Shared scene builders for the test suite."""
import math

import pytest

from havln.geometry import BBox, OccupancyGrid, Vec3
from havln.scene import HumanModel, MotionFrame, MotionSequence, Region, Scene, SceneObject


def box_grid(width: int, height: int, cell_size: float = 0.25,
             extra_blocked=()) -> OccupancyGrid:
    """Grid with a one-cell wall around the border plus any extra blocked cells."""
    blocked = set(extra_blocked)
    for c in range(width):
        blocked.add((c, 0))
        blocked.add((c, height - 1))
    for r in range(height):
        blocked.add((0, r))
        blocked.add((width - 1, r))
    return OccupancyGrid.from_blocked(Vec3(0, 0), cell_size, width, height, blocked)


def static_human(human_id: str, position: Vec3, radius: float = 0.3,
                 region_id: str = "room", n_frames: int = 120,
                 description: str = "standing still") -> HumanModel:
    frames = tuple(MotionFrame(Vec3(0, 0, 0), 0.0) for _ in range(n_frames))
    return HumanModel(
        id=human_id,
        motion=MotionSequence(frames=frames, radius=radius, description=description),
        base_position=position,
        region_id=region_id,
    )


def pacing_human(human_id: str, position: Vec3, amplitude: float,
                 radius: float = 0.3, region_id: str = "room",
                 n_frames: int = 120, axis: str = "x") -> HumanModel:
    """Triangle-wave pacing centered on the base position, closed over the loop."""
    frames = []
    for i in range(n_frames):
        phase = i / n_frames  # in [0, 1)
        tri = 4 * phase if phase < 0.25 else (2 - 4 * phase if phase < 0.75 else 4 * phase - 4)
        offset = amplitude * tri
        heading = math.pi if 0.25 <= phase < 0.75 else 0.0
        if axis == "x":
            frames.append(MotionFrame(Vec3(offset, 0.0, 0.0), heading))
        else:
            frames.append(MotionFrame(Vec3(0.0, offset, 0.0), heading + math.pi / 2))
    return HumanModel(
        id=human_id,
        motion=MotionSequence(frames=tuple(frames), radius=radius,
                              description="pacing back and forth"),
        base_position=position,
        region_id=region_id,
    )


def make_room_scene(humans=(), objects=(), width: int = 42, height: int = 22,
                    cell_size: float = 0.25, extra_blocked=(),
                    scene_id: str = "test-room") -> Scene:
    """One rectangular room covering the full walkable interior."""
    grid = box_grid(width, height, cell_size, extra_blocked)
    room = Region(
        id="room",
        label="room",
        bbox=BBox(Vec3(0, 0, -1.0), Vec3(width * cell_size, height * cell_size, 3.0)),
        object_ids=tuple(o.id for o in objects),
    )
    return Scene(id=scene_id, grid=grid, regions=(room,),
                 objects=tuple(objects), humans=tuple(humans))


@pytest.fixture
def empty_room() -> Scene:
    return make_room_scene()


@pytest.fixture
def room_with_static_human() -> Scene:
    return make_room_scene(humans=(static_human("h0", Vec3(5.0, 2.75)),))


def sample_object(object_id: str = "obj0", position: Vec3 = Vec3(7.0, 2.75),
                  radius: float = 0.3, label: str = "table") -> SceneObject:
    return SceneObject(id=object_id, label=label, position=position, radius=radius)


def motion_chord_length(motion: MotionSequence) -> float:
    """Distance covered over one playback loop, summed frame to frame."""
    frames = motion.frames
    total = 0.0
    for a, b in zip(frames, frames[1:] + (frames[0],)):
        total += math.hypot(b.translation.x - a.translation.x,
                            b.translation.y - a.translation.y)
    return total


@pytest.fixture(scope="session")
def generated_human_arcs():
    """Loop lengths of 1000 humans from generated scenes across seeds."""
    from havln.generate import GenParams, gen_scene

    arcs = []
    seed = 0
    while len(arcs) < 1000:
        scene = gen_scene(GenParams(seed=seed, humans=8))
        arcs.extend(motion_chord_length(h.motion) for h in scene.humans)
        seed += 1
    return tuple(arcs[:1000])


def displacement_band_shares(arcs) -> tuple:
    """Histogram over the bands (<=0.5, 0.5-1, 1-1.5, 1.5-2, >2), as fractions."""
    counts = [0, 0, 0, 0, 0]
    for arc in arcs:
        if arc <= 0.5:
            counts[0] += 1
        elif arc <= 1.0:
            counts[1] += 1
        elif arc <= 1.5:
            counts[2] += 1
        elif arc <= 2.0:
            counts[3] += 1
        else:
            counts[4] += 1
    return tuple(c / len(arcs) for c in counts)
