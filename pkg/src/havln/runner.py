"""Episode documents, trajectory logs, and deterministic batch execution.

Batches are sequential on purpose: with a fixed manifest the whole output
tree (logs, per-agent reports, the aggregate table) is byte-identical
across reruns. Nothing here records wall-clock time or machine state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .agents import AgentContext, make_agent
from .generate import child_seed
from .geometry import Pose, Vec3
from .metrics import aggregate_report, compute_metrics, format_report_table, \
    is_success, record_from_log
from .planner import EpisodeSpec, PlanResult
from .scene import load_scene
from .simulator import Action, SimConfig, Simulator

EPISODE_FORMAT = "havln-episodes"
EPISODE_VERSION = 1


def _dumps(doc) -> str:
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":"),
                      allow_nan=False)


def pose_to_doc(pose: Pose) -> dict:
    return {"position": pose.position.as_list(), "heading": pose.heading,
            "pitch": pose.pitch}


def _pose_from_doc(doc, where: str) -> Pose:
    try:
        p = doc["position"]
        return Pose(position=Vec3(float(p[0]), float(p[1]), float(p[2])),
                    heading=float(doc["heading"]),
                    pitch=float(doc.get("pitch", 0.0)))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ValueError(f"{where}: malformed pose ({exc})") from None


def episode_to_doc(episode: EpisodeSpec) -> dict:
    gt = None
    if episode.gt_path is not None:
        plan = episode.gt_path
        gt = {"waypoints": [p.as_list() for p in plan.waypoints],
              "length": plan.length, "replans": plan.replans,
              "unavoidable_encounters": plan.unavoidable_encounters,
              "reachable": plan.reachable}
    return {
        "id": episode.id,
        "scene_id": episode.scene_id,
        "start": pose_to_doc(episode.start),
        "goal": episode.goal.as_list(),
        "instruction": episode.instruction,
        "instruction_synthetic": episode.instruction_synthetic,
        "gt_path": gt,
        "human_influence": episode.human_influence,
        "unavoidable_encounters": episode.unavoidable_encounters,
    }


def episode_from_doc(doc, where: str = "episode") -> EpisodeSpec:
    if not isinstance(doc, dict):
        raise ValueError(f"{where}: expected an object")
    for key in ("id", "scene_id", "start", "goal"):
        if key not in doc:
            raise ValueError(f"{where}: missing {key!r}")
    goal = doc["goal"]
    if not isinstance(goal, list) or len(goal) != 3:
        raise ValueError(f"{where}: goal must be [x, y, z]")
    gt_doc = doc.get("gt_path")
    gt = None
    if gt_doc is not None:
        try:
            gt = PlanResult(
                waypoints=tuple(Vec3(float(p[0]), float(p[1]), float(p[2]))
                                for p in gt_doc["waypoints"]),
                length=float(gt_doc["length"]),
                replans=int(gt_doc["replans"]),
                unavoidable_encounters=int(gt_doc["unavoidable_encounters"]),
                reachable=bool(gt_doc["reachable"]))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ValueError(f"{where}: malformed gt_path ({exc})") from None
    return EpisodeSpec(
        id=str(doc["id"]),
        scene_id=str(doc["scene_id"]),
        start=_pose_from_doc(doc["start"], f"{where}.start"),
        goal=Vec3(float(goal[0]), float(goal[1]), float(goal[2])),
        instruction=str(doc.get("instruction", "")),
        instruction_synthetic=bool(doc.get("instruction_synthetic", True)),
        gt_path=gt,
        human_influence=doc.get("human_influence"),
        unavoidable_encounters=int(doc.get("unavoidable_encounters", 0)),
    )


def save_episodes(episodes, path, scene_id: str | None = None) -> None:
    if scene_id is None and episodes:
        scene_id = episodes[0].scene_id
    doc = {"format": EPISODE_FORMAT, "version": EPISODE_VERSION,
           "scene_id": scene_id,
           "episodes": [episode_to_doc(e) for e in episodes]}
    Path(path).write_text(_dumps(doc) + "\n", encoding="utf-8")


def load_episodes(path) -> list:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or raw.get("format") != EPISODE_FORMAT:
        raise ValueError(f"{path}: not an episode document")
    eps = raw.get("episodes")
    if not isinstance(eps, list):
        raise ValueError(f"{path}: 'episodes' must be a list")
    return [episode_from_doc(doc, f"episodes[{i}]") for i, doc in enumerate(eps)]


def collision_to_doc(event) -> dict | None:
    if event is None:
        return None
    return {"kind": event.kind, "entity_id": event.entity_id,
            "distance": event.distance_at_contact,
            "human_within_1m": event.human_within_1m}


def run_episode(scene, episode: EpisodeSpec, agent, config: SimConfig = SimConfig(),
                seed: int = 0) -> tuple:
    """Drive one agent through one episode; returns (step records, final state)."""
    sim = Simulator(scene, config)
    state, obs = sim.reset(episode.start, seed=seed)
    records = []
    step = 0
    while True:
        ctx = AgentContext(episode=episode, observation=obs, config=config)
        action = agent.act(ctx)
        if not isinstance(action, Action):
            raise TypeError(f"agent returned {action!r}, expected an Action")
        pre = state.agent
        result = sim.apply_action(action)
        obs = result.observation
        records.append({
            "step": step,
            "action": action.value,
            "pre_pose": pose_to_doc(pre),
            "post_pose": pose_to_doc(state.agent),
            "frame_index": obs.frame_index,
            "collision": collision_to_doc(result.collision),
            "visible_human_ids": [h.human_id for h in obs.visible_humans],
            "flags": list(agent.take_flags()) + list(result.flags),
        })
        step += 1
        if result.done:
            return records, state


def write_log(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


@dataclass(frozen=True)
class RunManifest:
    scene_path: str
    episodes_path: str
    agents: tuple
    out_dir: str
    seed: int = 0
    config: SimConfig = SimConfig()
    continue_on_error: bool = False


def load_manifest(path) -> RunManifest:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: manifest must be an object")
    for key in ("scene", "episodes", "agents", "out"):
        if key not in raw:
            raise ValueError(f"{path}: manifest missing {key!r}")
    cfg_doc = raw.get("config", {})
    if not isinstance(cfg_doc, dict):
        raise ValueError(f"{path}: 'config' must be an object")
    known = {f.name for f in fields(SimConfig)}
    unknown = set(cfg_doc) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return RunManifest(
        scene_path=str(raw["scene"]),
        episodes_path=str(raw["episodes"]),
        agents=tuple(str(a) for a in raw["agents"]),
        out_dir=str(raw["out"]),
        seed=int(raw.get("seed", 0)),
        config=SimConfig(**cfg_doc),
        continue_on_error=bool(raw.get("continue_on_error", False)),
    )


def run_batch(manifest: RunManifest) -> dict:
    """Run every agent over every episode and write the output tree.

    Per-agent and per-episode seeds derive from the manifest seed, the agent
    name, and the episode id, so adding an agent or episode never disturbs
    the others' randomness.
    """
    scene = load_scene(manifest.scene_path)
    episodes = load_episodes(manifest.episodes_path)
    out = Path(manifest.out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    reports = {}
    rows = []
    failures = []
    for name in manifest.agents:
        agent_dir = out / "logs" / name
        agent_dir.mkdir(parents=True, exist_ok=True)
        eval_records = []
        for episode in episodes:
            run_seed = child_seed(manifest.seed, name, episode.id)
            agent = make_agent(name, scene, manifest.config, seed=run_seed)
            try:
                records, _ = run_episode(scene, episode, agent, manifest.config,
                                         seed=run_seed)
            except Exception as exc:
                if not manifest.continue_on_error:
                    raise
                failures.append(f"{name}\t{episode.id}\t{type(exc).__name__}: {exc}")
                continue
            write_log(agent_dir / f"{episode.id}.jsonl", records)
            eval_records.append(record_from_log(records, episode))
        if not eval_records:
            failures.append(f"{name}\t-\tno episodes completed")
            continue
        report = compute_metrics(eval_records)
        reports[name] = report
        per_episode = [{
            "episode_id": r.episode_id, "c": r.c, "a_c": r.a_c,
            "net": r.net_collisions(), "d": r.d, "steps": r.steps,
            "stopped": r.stopped, "human_influenced": r.human_influenced,
            "success": is_success(r),
        } for r in eval_records]
        (out / f"report-{name}.json").write_text(
            _dumps({"agent": name, **report.as_dict(),
                    "per_episode": per_episode}) + "\n", encoding="utf-8")
        rows.append((name, "all", report))
    if rows:
        table = format_report_table(aggregate_report(rows))
        (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n",
                                          encoding="utf-8")
    return reports
