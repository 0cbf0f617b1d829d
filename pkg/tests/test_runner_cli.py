"""Episode documents, batch running, and the command line surface."""
import json
import subprocess
import sys

import pytest
from conftest import make_room_scene, pacing_human, sample_object

from havln.agents import Agent, make_agent
from havln.cli import main
from havln.geometry import Pose, Vec3
from havln.metrics import read_log
from havln.planner import EpisodeSpec, PlanResult, annotate_ground_truth
from havln.runner import (RunManifest, episode_from_doc, episode_to_doc,
                          load_episodes, load_manifest, run_batch, run_episode,
                          save_episodes, write_log)
from havln.scene import save_scene, load_scene
from havln.simulator import Action, SimConfig, SimulationError

RECORD_KEYS = {"step", "action", "pre_pose", "post_pose", "frame_index",
               "collision", "visible_human_ids", "flags"}


def _episode(eid="ep0", start=Vec3(2.0, 2.75), goal=Vec3(8.0, 2.75),
             heading=0.0, **kw):
    return EpisodeSpec(id=eid, scene_id="test-room",
                       start=Pose(position=start, heading=heading),
                       goal=goal, **kw)


class TestEpisodeDocuments:
    def test_round_trip_with_plan(self):
        plan = PlanResult(waypoints=(Vec3(1.0, 2.0), Vec3(3.0, 4.0)),
                          length=2.83, replans=1, unavoidable_encounters=2,
                          reachable=True)
        ep = _episode(instruction="go there", instruction_synthetic=False,
                      gt_path=plan, human_influence="direct",
                      unavoidable_encounters=2)
        assert episode_from_doc(episode_to_doc(ep)) == ep

    def test_round_trip_without_plan(self):
        ep = _episode()
        back = episode_from_doc(episode_to_doc(ep))
        assert back == ep
        assert back.gt_path is None

    def test_doc_defaults(self):
        ep = episode_from_doc({"id": "e", "scene_id": "s",
                               "start": {"position": [1, 2, 0], "heading": 0.5},
                               "goal": [3.0, 4.0, 0.0]})
        assert ep.instruction == ""
        assert ep.instruction_synthetic is True
        assert ep.gt_path is None
        assert ep.human_influence is None
        assert ep.unavoidable_encounters == 0
        assert ep.start.pitch == 0.0

    @pytest.mark.parametrize("missing", ["id", "scene_id", "start", "goal"])
    def test_missing_required_field(self, missing):
        doc = episode_to_doc(_episode())
        del doc[missing]
        with pytest.raises(ValueError, match=missing):
            episode_from_doc(doc)

    def test_malformed_goal(self):
        doc = episode_to_doc(_episode())
        doc["goal"] = [1.0, 2.0]
        with pytest.raises(ValueError, match="goal"):
            episode_from_doc(doc)

    def test_malformed_pose(self):
        doc = episode_to_doc(_episode())
        doc["start"] = {"position": [1.0], "heading": 0.0}
        with pytest.raises(ValueError, match="pose"):
            episode_from_doc(doc)

    def test_malformed_plan(self):
        doc = episode_to_doc(_episode(gt_path=PlanResult(
            waypoints=(), length=0.0, replans=0, unavoidable_encounters=0,
            reachable=False)))
        del doc["gt_path"]["length"]
        with pytest.raises(ValueError, match="gt_path"):
            episode_from_doc(doc)

    def test_file_round_trip(self, tmp_path):
        episodes = [_episode("a"), _episode("b", goal=Vec3(9.0, 4.0))]
        path = tmp_path / "eps.json"
        save_episodes(episodes, path)
        assert load_episodes(path) == episodes
        raw = json.loads(path.read_text())
        assert raw["format"] == "havln-episodes"
        assert raw["version"] == 1
        assert raw["scene_id"] == "test-room"

    def test_rejects_foreign_document(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else", "episodes": []}')
        with pytest.raises(ValueError, match="not an episode document"):
            load_episodes(path)

    def test_rejects_non_list_episodes(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "havln-episodes", "episodes": 4}')
        with pytest.raises(ValueError, match="list"):
            load_episodes(path)


class _Scripted(Agent):
    def __init__(self, scene, config, actions):
        super().__init__(scene, config)
        self._actions = list(actions)

    def act(self, ctx):
        return self._actions.pop(0) if self._actions else Action.STOP


class _NotAnAction(Agent):
    def act(self, ctx):
        return "forward"


class TestRunEpisode:
    def test_record_schema_and_chaining(self, empty_room):
        agent = make_agent("oracle", empty_room, SimConfig())
        episode = annotate_ground_truth(empty_room, _episode())
        records, state = run_episode(empty_room, episode, agent)
        assert records
        for k, rec in enumerate(records):
            assert set(rec) == RECORD_KEYS
            assert rec["step"] == k
        for prev, cur in zip(records, records[1:]):
            assert cur["pre_pose"] == prev["post_pose"]
        assert records[-1]["action"] == "stop"
        assert state.agent.position.planar_distance_to(Vec3(8.0, 2.75)) <= 3.0

    def test_same_seed_identical_records(self, empty_room):
        runs = []
        for _ in range(2):
            agent = make_agent("random", empty_room, SimConfig(), seed=7)
            records, _ = run_episode(empty_room, _episode(), agent, seed=7)
            runs.append(records)
        assert runs[0] == runs[1]

    def test_random_agent_stops_before_cap(self, empty_room):
        config = SimConfig(max_steps=10)
        agent = make_agent("random", empty_room, config, seed=3)
        records, _ = run_episode(empty_room, _episode(), agent, config)
        assert len(records) <= 10
        assert records[-1]["action"] == "stop"

    def test_rejects_non_action(self, empty_room):
        agent = _NotAnAction(empty_room, SimConfig())
        with pytest.raises(TypeError, match="expected an Action"):
            run_episode(empty_room, _episode(), agent)

    def test_collision_record_fields(self, room_with_static_human):
        # drive straight into the human at (5.0, 2.75)
        agent = _Scripted(room_with_static_human, SimConfig(),
                          [Action.FORWARD] * 30)
        records, _ = run_episode(room_with_static_human,
                                 _episode(start=Vec3(3.9, 2.75)), agent)
        hits = [r["collision"] for r in records if r["collision"] is not None]
        assert hits
        first = hits[0]
        assert set(first) == {"kind", "entity_id", "distance", "human_within_1m"}
        assert first["kind"] == "human"
        assert first["entity_id"] == "h0"
        assert first["distance"] < 0.5
        assert first["human_within_1m"] is True

    def test_log_file_round_trip(self, empty_room, tmp_path):
        agent = make_agent("oracle", empty_room, SimConfig())
        records, _ = run_episode(empty_room, _episode(), agent)
        path = tmp_path / "run.jsonl"
        write_log(path, records)
        assert read_log(path) == records


def _manifest_doc(tmp_path, **overrides):
    doc = {"scene": str(tmp_path / "scene.json"),
           "episodes": str(tmp_path / "eps.json"),
           "agents": ["oracle"], "out": str(tmp_path / "out")}
    doc.update(overrides)
    return doc


class TestLoadManifest:
    def test_parses_fields(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(_manifest_doc(
            tmp_path, seed=9, config={"mode": "de", "step_size": 0.5},
            continue_on_error=True)))
        m = load_manifest(path)
        assert m.scene_path == str(tmp_path / "scene.json")
        assert m.episodes_path == str(tmp_path / "eps.json")
        assert m.agents == ("oracle",)
        assert m.out_dir == str(tmp_path / "out")
        assert m.seed == 9
        assert m.config.mode == "de"
        assert m.config.step_size == 0.5
        assert m.continue_on_error is True

    def test_defaults(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(_manifest_doc(tmp_path)))
        m = load_manifest(path)
        assert m.seed == 0
        assert m.config == SimConfig()
        assert m.continue_on_error is False

    @pytest.mark.parametrize("missing", ["scene", "episodes", "agents", "out"])
    def test_missing_key(self, tmp_path, missing):
        doc = _manifest_doc(tmp_path)
        del doc[missing]
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match=missing):
            load_manifest(path)

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(_manifest_doc(tmp_path,
                                                 config={"stride": 1.0})))
        with pytest.raises(ValueError, match="stride"):
            load_manifest(path)

    def test_non_object_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("[1, 2]")
        with pytest.raises(ValueError, match="object"):
            load_manifest(path)

    def test_non_object_config(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(_manifest_doc(tmp_path, config=[1])))
        with pytest.raises(ValueError, match="config"):
            load_manifest(path)


def _batch_fixture(tmp_path, episodes=None, humans=()):
    scene = make_room_scene(humans=humans)
    save_scene(scene, tmp_path / "scene.json")
    if episodes is None:
        episodes = [_episode("ep0"),
                    _episode("ep1", start=Vec3(2.0, 4.0), goal=Vec3(9.0, 1.5))]
    save_episodes(episodes, tmp_path / "eps.json", scene_id=scene.id)
    return scene, episodes


class TestRunBatch:
    def test_output_tree(self, tmp_path):
        _batch_fixture(tmp_path)
        manifest = RunManifest(scene_path=str(tmp_path / "scene.json"),
                               episodes_path=str(tmp_path / "eps.json"),
                               agents=("oracle", "greedy"),
                               out_dir=str(tmp_path / "out"))
        reports = run_batch(manifest)
        assert set(reports) == {"oracle", "greedy"}
        out = tmp_path / "out"
        for agent in ("oracle", "greedy"):
            for eid in ("ep0", "ep1"):
                assert (out / "logs" / agent / f"{eid}.jsonl").is_file()
            detail = json.loads((out / f"report-{agent}.json").read_text())
            assert detail["agent"] == agent
            assert len(detail["per_episode"]) == 2
            for row in detail["per_episode"]:
                assert set(row) >= {"episode_id", "c", "a_c", "net", "d",
                                    "steps", "stopped", "human_influenced",
                                    "success"}
        assert (out / "report.txt").is_file()
        assert not (out / "failures.txt").exists()

    def test_rerun_byte_identical(self, tmp_path):
        _batch_fixture(tmp_path,
                       humans=(pacing_human("h0", Vec3(5.0, 2.75), 1.0, axis="y"),))
        outputs = []
        for name in ("one", "two"):
            manifest = RunManifest(scene_path=str(tmp_path / "scene.json"),
                                   episodes_path=str(tmp_path / "eps.json"),
                                   agents=("oracle", "greedy", "random"),
                                   out_dir=str(tmp_path / name), seed=5)
            run_batch(manifest)
            tree = {}
            for path in sorted((tmp_path / name).rglob("*")):
                if path.is_file():
                    tree[path.relative_to(tmp_path / name).as_posix()] = \
                        path.read_bytes()
            outputs.append(tree)
        assert outputs[0] == outputs[1]

    def test_continue_on_error(self, tmp_path):
        poisoned = _episode("bad", start=Vec3(0.1, 0.1))  # starts inside the wall
        _batch_fixture(tmp_path, episodes=[_episode("ep0"), poisoned])
        manifest = RunManifest(scene_path=str(tmp_path / "scene.json"),
                               episodes_path=str(tmp_path / "eps.json"),
                               agents=("oracle",), out_dir=str(tmp_path / "out"),
                               continue_on_error=True)
        reports = run_batch(manifest)
        assert "oracle" in reports
        assert (tmp_path / "out" / "logs" / "oracle" / "ep0.jsonl").is_file()
        assert not (tmp_path / "out" / "logs" / "oracle" / "bad.jsonl").exists()
        failures = (tmp_path / "out" / "failures.txt").read_text()
        assert "bad" in failures and "SimulationError" in failures
        detail = json.loads((tmp_path / "out" / "report-oracle.json").read_text())
        assert len(detail["per_episode"]) == 1

    def test_error_propagates_without_flag(self, tmp_path):
        poisoned = _episode("bad", start=Vec3(0.1, 0.1))
        _batch_fixture(tmp_path, episodes=[poisoned])
        manifest = RunManifest(scene_path=str(tmp_path / "scene.json"),
                               episodes_path=str(tmp_path / "eps.json"),
                               agents=("oracle",), out_dir=str(tmp_path / "out"))
        with pytest.raises(SimulationError):
            run_batch(manifest)

    def test_all_failures_leave_agent_unreported(self, tmp_path):
        poisoned = _episode("bad", start=Vec3(0.1, 0.1))
        _batch_fixture(tmp_path, episodes=[poisoned])
        manifest = RunManifest(scene_path=str(tmp_path / "scene.json"),
                               episodes_path=str(tmp_path / "eps.json"),
                               agents=("oracle",), out_dir=str(tmp_path / "out"),
                               continue_on_error=True)
        reports = run_batch(manifest)
        assert reports == {}
        failures = (tmp_path / "out" / "failures.txt").read_text()
        assert "no episodes completed" in failures
        assert not (tmp_path / "out" / "report-oracle.json").exists()


@pytest.fixture
def cli_workspace(tmp_path):
    """Scene + episodes on disk for command line runs."""
    scene = make_room_scene(
        objects=(sample_object(),),
        humans=(pacing_human("h0", Vec3(3.0, 2.75), 0.8, axis="y"),))
    save_scene(scene, tmp_path / "scene.json")
    rc = main(["gen-episodes", "--scene", str(tmp_path / "scene.json"),
               "--count", "2", "--seed", "0",
               "--out", str(tmp_path / "eps.json")])
    assert rc == 0
    return tmp_path


class TestCli:
    def test_gen_scene(self, tmp_path, capsys):
        out = tmp_path / "gen.json"
        rc = main(["gen-scene", "--seed", "0", "--out", str(out),
                   "--width", "60", "--height", "60",
                   "--humans", "2", "--objects", "4"])
        assert rc == 0
        assert "scene-0000" in capsys.readouterr().out
        scene = load_scene(out)
        assert scene.id == "scene-0000"
        assert len(scene.humans) == 2

    def test_gen_scene_bad_params(self, tmp_path, capsys):
        rc = main(["gen-scene", "--seed", "0", "--width", "10",
                   "--out", str(tmp_path / "x.json")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")
        assert not (tmp_path / "x.json").exists()

    def test_gen_episodes(self, cli_workspace, capsys):
        episodes = load_episodes(cli_workspace / "eps.json")
        assert len(episodes) == 2
        assert all(e.scene_id == "test-room" for e in episodes)

    def test_oracle_refresh(self, cli_workspace, capsys):
        rc = main(["oracle", "--scene", str(cli_workspace / "scene.json"),
                   "--episodes", str(cli_workspace / "eps.json"),
                   "--out", str(cli_workspace / "eps2.json")])
        assert rc == 0
        assert "2 episodes annotated" in capsys.readouterr().out
        refreshed = load_episodes(cli_workspace / "eps2.json")
        assert all(e.gt_path is not None for e in refreshed)

    def test_run_and_eval(self, cli_workspace, capsys):
        rc = main(["run", "--scene", str(cli_workspace / "scene.json"),
                   "--episodes", str(cli_workspace / "eps.json"),
                   "--agent", "oracle", "--agent", "random",
                   "--out", str(cli_workspace / "out")])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "oracle: TCR=" in stdout
        assert "random: TCR=" in stdout
        assert "aggregate table:" in stdout

        rc = main(["eval", "--logs", str(cli_workspace / "out" / "logs" / "oracle"),
                   "--episodes", str(cli_workspace / "eps.json"),
                   "--out", str(cli_workspace / "eval.json")])
        assert rc == 0
        doc = json.loads((cli_workspace / "eval.json").read_text())
        assert set(doc) == {"L", "beta", "TCR", "CR", "NE", "SR_collision",
                            "SR_full", "per_episode", "notes"}
        assert doc["L"] == 2
        assert len(doc["per_episode"]) == 2
        report = json.loads(
            (cli_workspace / "out" / "report-oracle.json").read_text())
        assert doc["TCR"] == report["TCR"]
        assert doc["NE"] == report["NE"]

    def test_eval_prints_without_out(self, cli_workspace, capsys):
        main(["run", "--scene", str(cli_workspace / "scene.json"),
              "--episodes", str(cli_workspace / "eps.json"),
              "--agent", "oracle", "--out", str(cli_workspace / "out")])
        capsys.readouterr()
        rc = main(["eval", "--logs", str(cli_workspace / "out" / "logs" / "oracle"),
                   "--episodes", str(cli_workspace / "eps.json")])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["L"] == 2

    def test_eval_no_matching_logs(self, cli_workspace, tmp_path):
        empty = tmp_path / "empty-logs"
        empty.mkdir(exist_ok=True)
        with pytest.raises(SystemExit, match="no logs"):
            main(["eval", "--logs", str(empty),
                  "--episodes", str(cli_workspace / "eps.json")])

    def test_run_from_manifest(self, cli_workspace, capsys):
        manifest = {"scene": str(cli_workspace / "scene.json"),
                    "episodes": str(cli_workspace / "eps.json"),
                    "agents": ["greedy"], "out": str(cli_workspace / "mout"),
                    "config": {"step_size": 0.25}}
        (cli_workspace / "manifest.json").write_text(json.dumps(manifest))
        rc = main(["run", "--manifest", str(cli_workspace / "manifest.json")])
        assert rc == 0
        assert (cli_workspace / "mout" / "report-greedy.json").is_file()

    def test_run_requires_sources(self):
        with pytest.raises(SystemExit, match="run needs"):
            main(["run", "--agent", "oracle"])

    def test_run_missing_scene_file(self, tmp_path, capsys):
        manifest = {"scene": str(tmp_path / "nope.json"),
                    "episodes": str(tmp_path / "nope2.json"),
                    "agents": ["oracle"], "out": str(tmp_path / "out")}
        (tmp_path / "m.json").write_text(json.dumps(manifest))
        rc = main(["run", "--manifest", str(tmp_path / "m.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_annotate(self, cli_workspace, capsys):
        requests = {"requests": [{
            "id": "h9", "region": "room", "target_object": "obj0",
            "epsilon": 1.0,
            "motion": {"frames": [[0, 0, 0, 0.0]], "radius": 0.3,
                       "description": "standing by the table"}}]}
        (cli_workspace / "reqs.json").write_text(json.dumps(requests))
        rc = main(["annotate", "--scene", str(cli_workspace / "scene.json"),
                   "--requests", str(cli_workspace / "reqs.json"),
                   "--out", str(cli_workspace / "scene2.json")])
        assert rc == 0
        assert "1 humans placed" in capsys.readouterr().out
        scene = load_scene(cli_workspace / "scene2.json")
        h9 = next(h for h in scene.humans if h.id == "h9")
        gap = h9.base_position.planar_distance_to(Vec3(7.0, 2.75))
        assert gap >= 0.6  # clear of the target disc

    def test_annotate_unknown_region(self, cli_workspace):
        requests = {"requests": [{
            "id": "h9", "region": "atrium", "target_object": "obj0",
            "motion": {"frames": [[0, 0, 0, 0.0]], "radius": 0.3}}]}
        (cli_workspace / "reqs.json").write_text(json.dumps(requests))
        with pytest.raises(SystemExit, match="unknown reference"):
            main(["annotate", "--scene", str(cli_workspace / "scene.json"),
                  "--requests", str(cli_workspace / "reqs.json"),
                  "--out", str(cli_workspace / "scene2.json")])

    def test_inspect_scene_and_episodes(self, cli_workspace, capsys):
        assert main(["inspect", str(cli_workspace / "scene.json")]) == 0
        out = capsys.readouterr().out
        assert "scene test-room" in out
        assert "human h0" in out
        assert main(["inspect", str(cli_workspace / "eps.json")]) == 0
        assert "episode document: 2 episodes" in capsys.readouterr().out

    def test_log_env_smoke(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("HAVLN_LOG", "DEBUG")
        rc = main(["gen-scene", "--seed", "1", "--out", str(tmp_path / "s.json"),
                   "--width", "60", "--height", "60",
                   "--humans", "0", "--objects", "2"])
        assert rc == 0

    def test_console_script(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-c",
             "import sys; from havln.cli import main; sys.exit(main(sys.argv[1:]))",
             "gen-scene", "--seed", "2", "--out", str(tmp_path / "s.json"),
             "--width", "60", "--height", "60", "--humans", "0",
             "--objects", "2"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "scene-0002" in proc.stdout
        assert load_scene(tmp_path / "s.json").id == "scene-0002"
