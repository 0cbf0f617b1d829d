"""Command line entry points.

Subcommands cover the full artifact cycle: generate a scene, sample
episodes, annotate humans into an existing scene from placement requests,
refresh ground-truth annotations, run agent batches, re-evaluate logs, and
inspect documents. Set HAVLN_LOG=DEBUG (or INFO) for progress logging.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .annotation import Infeasible, NoCleanPose, PlacementProblem, PsoParams, \
    pso_place, refine_placement
from .generate import GenParams, gen_episodes, gen_scene, stand_off
from .metrics import compute_metrics, is_success, read_log, record_from_log
from .planner import Unreachable, annotate_ground_truth
from .runner import RunManifest, load_episodes, load_manifest, run_batch, \
    save_episodes
from .scene import HumanModel, MotionFrame, MotionSequence, Scene, load_scene, \
    save_scene, validate_scene
from .simulator import SimConfig, SimulationError
from .geometry import Vec3

log = logging.getLogger("havln")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("ce", "de"), default="ce",
                   help="continuous steps or discrete graph hops")
    p.add_argument("--step-size", type=float, default=0.25, metavar="M")
    p.add_argument("--collision-mode", choices=("endpoint", "substep"),
                   default="endpoint")
    p.add_argument("--max-steps", type=int, default=500)


def _config_from(args) -> SimConfig:
    return SimConfig(mode=args.mode, step_size=args.step_size,
                     collision_mode=args.collision_mode, max_steps=args.max_steps)


def _cmd_gen_scene(args) -> int:
    params = GenParams(width=args.width, height=args.height, rooms=args.rooms,
                       corridor_width=args.corridor_width, objects=args.objects,
                       humans=args.humans, seed=args.seed)
    scene = gen_scene(params)
    save_scene(scene, args.out)
    log.info("wrote scene %s to %s", scene.id, args.out)
    print(f"{scene.id}: {scene.grid.width}x{scene.grid.height} cells, "
          f"{len(scene.regions)} regions, {len(scene.objects)} objects, "
          f"{len(scene.humans)} humans")
    return 0


def _cmd_gen_episodes(args) -> int:
    scene = load_scene(args.scene)
    episodes = gen_episodes(scene, args.count, seed=args.seed,
                            config=_config_from(args))
    save_episodes(episodes, args.out, scene_id=scene.id)
    influenced = sum(1 for e in episodes if e.human_influence == "direct")
    print(f"{len(episodes)} episodes written to {args.out} "
          f"({influenced} directly human-influenced)")
    return 0


def _parse_motion(doc, where: str) -> MotionSequence:
    try:
        frames = tuple(MotionFrame(Vec3(float(f[0]), float(f[1]), float(f[2])),
                                   float(f[3])) for f in doc["frames"])
        return MotionSequence(frames=frames, radius=float(doc["radius"]),
                              description=str(doc.get("description", "")),
                              region_label=str(doc.get("region_label", "")))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise SystemExit(f"error: {where}: malformed motion ({exc})")


def _cmd_annotate(args) -> int:
    scene = load_scene(args.scene)
    raw = json.loads(Path(args.requests).read_text(encoding="utf-8"))
    requests = raw.get("requests") if isinstance(raw, dict) else None
    if not isinstance(requests, list):
        raise SystemExit(f"error: {args.requests}: expected {{'requests': [...]}}")
    humans = list(scene.humans)
    for i, req in enumerate(requests):
        where = f"requests[{i}]"
        try:
            region = scene.regions_by_id[req["region"]]
            target = scene.objects_by_id[req["target_object"]]
            human_id = str(req["id"])
        except KeyError as exc:
            raise SystemExit(f"error: {where}: unknown reference {exc}")
        others = tuple(o for o in scene.objects if o.id != target.id)
        problem = PlacementProblem(
            region=region, target_object=target, other_objects=others,
            epsilon=float(req.get("epsilon", 1.0)),
            proximity=float(req.get("proximity", 1.0)),
            height_offset=req.get("height_offset"))
        base = pso_place(problem, PsoParams(
            particle_count=args.pso_particles, iterations=args.pso_iters,
            seed=int(req.get("seed", args.seed))))
        motion = _parse_motion(req["motion"], where)
        # the swarm optimum may sit on the target disc; back away before refining
        bounds = (region.bbox.lo.x, region.bbox.lo.y,
                  region.bbox.hi.x, region.bbox.hi.y)
        base = stand_off(base, target, bounds, motion.radius)
        human = HumanModel(id=human_id, motion=motion, base_position=base,
                           region_id=region.id, group_id=req.get("group_id"))
        base = refine_placement(
            replace(scene, humans=tuple(humans)), human,
            max_nudge=float(req.get("max_nudge", 0.5)))
        humans.append(HumanModel(id=human_id, motion=motion, base_position=base,
                                 region_id=region.id, group_id=req.get("group_id")))
        log.info("placed %s at (%.3f, %.3f)", human_id, base.x, base.y)
    annotated = Scene(id=scene.id, grid=scene.grid, regions=scene.regions,
                      objects=scene.objects, humans=tuple(humans),
                      nav_graph=scene.nav_graph)
    violations = [v for v in validate_scene(annotated) if v.severity == "error"]
    if violations:
        for v in violations:
            print(f"error: {v.path}: {v.message}", file=sys.stderr)
        return 1
    save_scene(annotated, args.out)
    print(f"{len(requests)} humans placed; scene written to {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    scene = load_scene(args.scene)
    episodes = load_episodes(args.episodes)
    config = _config_from(args)
    refreshed = [annotate_ground_truth(scene, e, config) for e in episodes]
    save_episodes(refreshed, args.out, scene_id=scene.id)
    reachable = sum(1 for e in refreshed if e.gt_path is not None)
    print(f"{len(refreshed)} episodes annotated ({reachable} reachable); "
          f"written to {args.out}")
    return 0


def _cmd_run(args) -> int:
    if args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        missing = [n for n, v in (("--scene", args.scene),
                                  ("--episodes", args.episodes),
                                  ("--out", args.out)) if not v]
        if missing or not args.agent:
            raise SystemExit("error: run needs --manifest or --scene/--episodes/"
                             "--out plus at least one --agent")
        manifest = RunManifest(scene_path=args.scene, episodes_path=args.episodes,
                               agents=tuple(args.agent), out_dir=args.out,
                               seed=args.seed, config=_config_from(args),
                               continue_on_error=args.continue_on_error)
    reports = run_batch(manifest)
    for name in manifest.agents:
        report = reports.get(name)
        if report is None:
            print(f"{name}: no completed episodes")
            continue
        detail = Path(manifest.out_dir) / f"report-{name}.json"
        for row in json.loads(detail.read_text(encoding="utf-8"))["per_episode"]:
            print(f"{name} {row['episode_id']}: steps={row['steps']} "
                  f"collisions={row['c']} final_distance={row['d']:.3f} "
                  f"success={str(row['success']).lower()}")
        print(f"{name}: TCR={report.tcr:.3f} CR={report.cr:.3f} "
              f"NE={report.ne:.3f} SR_collision={report.sr_collision:.3f} "
              f"SR_full={report.sr_full:.3f}")
    table = Path(manifest.out_dir) / "report.txt"
    if table.exists():
        print(f"aggregate table: {table}")
    return 0


def _cmd_eval(args) -> int:
    episodes = {e.id: e for e in load_episodes(args.episodes)}
    records = []
    for path in sorted(Path(args.logs).glob("*.jsonl")):
        episode = episodes.get(path.stem)
        if episode is None:
            log.warning("skipping %s: no matching episode", path.name)
            continue
        records.append(record_from_log(read_log(path), episode))
    if not records:
        raise SystemExit(f"error: no logs under {args.logs} match {args.episodes}")
    report = compute_metrics(records)
    doc = {"L": report.episode_count, "beta": report.beta, "TCR": report.tcr,
           "CR": report.cr, "NE": report.ne,
           "SR_collision": report.sr_collision, "SR_full": report.sr_full,
           "per_episode": [{
               "episode_id": r.episode_id, "c": r.c, "a_c": r.a_c,
               "net": r.net_collisions(), "d": r.d, "steps": r.steps,
               "stopped": r.stopped, "human_influenced": r.human_influenced,
               "success": is_success(r)} for r in records],
           "notes": report.as_dict()["notes"]}
    out = json.dumps(doc, indent=2, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(out + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        print(out)
    return 0


def _cmd_inspect(args) -> int:
    raw = json.loads(Path(args.path).read_text(encoding="utf-8"))
    kind = raw.get("format") if isinstance(raw, dict) else None
    if kind == "havln-episodes":
        episodes = load_episodes(args.path)
        print(f"episode document: {len(episodes)} episodes for scene "
              f"{raw.get('scene_id')}")
        for e in episodes:
            goal = f"({e.goal.x:.2f}, {e.goal.y:.2f})"
            print(f"  {e.id}: goal {goal}, influence={e.human_influence}, "
                  f"unavoidable={e.unavoidable_encounters}")
        return 0
    scene = load_scene(args.path)
    grid = scene.grid
    blocked = sum(grid.cells)
    print(f"scene {scene.id}: {grid.width}x{grid.height} cells at "
          f"{grid.cell_size} m ({blocked} blocked)")
    for region in scene.regions:
        print(f"  region {region.id} ({region.label}): "
              f"{len(region.object_ids)} objects")
    for obj in scene.objects:
        print(f"  object {obj.id} ({obj.label}) r={obj.radius:.2f} at "
              f"({obj.position.x:.2f}, {obj.position.y:.2f})")
    for human in scene.humans:
        arc = sum(a.translation.distance_to(b.translation) for a, b in
                  zip(human.motion.frames, human.motion.frames[1:]))
        print(f"  human {human.id} in {human.region_id}: "
              f"{len(human.motion.frames)} frames, arc {arc:.2f} m")
    print(f"  nav graph: {len(scene.nav_graph.nodes)} nodes, "
          f"{len(scene.nav_graph.edges)} edges")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="havln",
        description="human-aware navigation simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=140)
    p.add_argument("--height", type=int, default=100)
    p.add_argument("--rooms", type=int, default=4)
    p.add_argument("--corridor-width", type=float, default=2.0)
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--humans", type=int, default=4)
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("gen-episodes", help="sample annotated episodes")
    p.add_argument("--scene", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_gen_episodes)

    p = sub.add_parser("annotate",
                       help="place humans into a scene from a request file")
    p.add_argument("--scene", required=True)
    p.add_argument("--requests", required=True,
                   help="JSON file with placement requests and inline motions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pso-particles", type=int, default=40)
    p.add_argument("--pso-iters", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("oracle", help="refresh ground-truth route annotations")
    p.add_argument("--scene", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("run", help="run agents over an episode batch")
    p.add_argument("--manifest", help="JSON manifest; overrides other flags")
    p.add_argument("--scene")
    p.add_argument("--episodes")
    p.add_argument("--agent", action="append", default=[],
                   help="agent name; repeat for several")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--continue-on-error", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="recompute metrics from trajectory logs")
    p.add_argument("--logs", required=True, help="directory of <episode>.jsonl")
    p.add_argument("--episodes", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="summarize a scene or episode document")
    p.add_argument("path")
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("HAVLN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, SimulationError, Infeasible,
            NoCleanPose, Unreachable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
