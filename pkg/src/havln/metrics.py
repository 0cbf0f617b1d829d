"""Social-navigation evaluation over trajectory logs.

Per episode we keep the raw human-collision count c, the annotated number
of unavoidable encounters a_c, the final distance to goal d, whether the
route was human-influenced, and whether the agent stopped deliberately.
The net collision count is clamped at zero (n = max(c - a_c, 0)) so an
over-annotated episode cannot offset collisions elsewhere in the batch; the
clamp is recorded in report notes. The human-influenced collision rate is
defined as 0 for batches with no influenced episodes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .geometry import Vec3

SUCCESS_RADIUS = 3.0

REPORT_NOTES = {
    "net_collisions": "max(c - a_c, 0) per episode",
    "cr_beta_zero": "CR defined as 0.0 when no episode is human-influenced",
}


class LogError(Exception):
    """A trajectory log line is missing or malformed."""


@dataclass(frozen=True)
class EpisodeRecord:
    episode_id: str
    c: int
    a_c: int
    d: float
    human_influenced: bool
    steps: int
    stopped: bool

    def net_collisions(self) -> int:
        return max(self.c - self.a_c, 0)


@dataclass(frozen=True)
class EvalReport:
    episode_count: int
    beta: float
    tcr: float
    cr: float
    ne: float
    sr_collision: float
    sr_full: float

    def as_dict(self) -> dict:
        return {
            "episode_count": self.episode_count,
            "beta": self.beta,
            "TCR": self.tcr,
            "CR": self.cr,
            "NE": self.ne,
            "SR_collision": self.sr_collision,
            "SR_full": self.sr_full,
            "notes": dict(REPORT_NOTES),
        }


def read_log(path) -> list:
    """Parse a JSONL trajectory log; malformed lines raise with their number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogError(f"{path}: line {i}: invalid JSON ({exc})") from None
            if not isinstance(rec, dict):
                raise LogError(f"{path}: line {i}: expected object")
            records.append(rec)
    return records


def record_from_log(records, episode, goal: Vec3 | None = None) -> EpisodeRecord:
    """Fold one episode's step records into an evaluation record.

    Counts only human collisions flagged within a meter of a human. The
    final distance is measured from the last post-action pose (or the start
    pose for an empty log) to the episode goal.
    """
    if goal is None:
        goal = episode.goal
    c = 0
    for i, rec in enumerate(records):
        for key in ("action", "pre_pose", "post_pose", "collision"):
            if key not in rec:
                raise LogError(f"step record {i} missing {key!r}")
        hit = rec["collision"]
        if hit is not None:
            if not isinstance(hit, dict) or "kind" not in hit:
                raise LogError(f"step record {i} has malformed collision entry")
            if hit["kind"] == "human" and hit.get("human_within_1m", False):
                c += 1
    if records:
        last = records[-1]["post_pose"]["position"]
        final = Vec3(float(last[0]), float(last[1]), float(last[2]))
        stopped = records[-1]["action"] == "stop"
    else:
        final = episode.start.position
        stopped = False
    return EpisodeRecord(
        episode_id=episode.id,
        c=c,
        a_c=episode.unavoidable_encounters,
        d=final.distance_to(goal),
        human_influenced=episode.human_influence == "direct",
        steps=len(records),
        stopped=stopped,
    )


def is_success(record: EpisodeRecord, threshold: float = SUCCESS_RADIUS) -> bool:
    """Full success: no net collisions, stopped within threshold of the goal."""
    return record.net_collisions() == 0 and record.stopped and record.d <= threshold


def compute_metrics(records) -> EvalReport:
    """Batch metrics over episode records.

    beta: fraction of human-influenced episodes.
    TCR: total net collisions per episode.
    CR: fraction-weighted rate of episodes with any net collision, scaled by
        1/beta so it reads as a rate over influenced episodes; 0 when beta=0.
    NE: mean final distance to goal.
    SR_collision: fraction of episodes with zero net collisions.
    SR_full: fraction that also stopped within the success radius.
    """
    count = len(records)
    if count == 0:
        raise ValueError("cannot evaluate an empty batch")
    influenced = sum(1 for r in records if r.human_influenced)
    beta = influenced / count
    nets = [r.net_collisions() for r in records]
    tcr = sum(nets) / count
    if beta > 0.0:
        cr = sum(min(n, 1) for n in nets) / (beta * count)
    else:
        cr = 0.0
    ne = sum(r.d for r in records) / count
    sr_collision = sum(1 for n in nets if n == 0) / count
    sr_full = sum(1 for r in records if is_success(r)) / count
    return EvalReport(episode_count=count, beta=beta, tcr=tcr, cr=cr, ne=ne,
                      sr_collision=sr_collision, sr_full=sr_full)


def aggregate_report(entries) -> dict:
    """Combine (agent, split, EvalReport) entries into one sorted document."""
    rows = []
    if not entries:
        raise ValueError("no report entries to aggregate")
    for agent, split, report in entries:
        row = {"agent": agent, "split": split}
        row.update(report.as_dict())
        del row["notes"]
        rows.append(row)
    rows.sort(key=lambda r: (r["agent"], r["split"]))
    return {"rows": rows, "notes": dict(REPORT_NOTES)}


def format_report_table(doc: dict) -> str:
    """Fixed-width text table for a report document."""
    headers = ["agent", "split", "episodes", "beta", "TCR", "CR", "NE",
               "SR_collision", "SR_full"]
    lines = []
    rows = []
    for row in doc["rows"]:
        rows.append([
            row["agent"], row["split"], str(row["episode_count"]),
            f"{row['beta']:.3f}", f"{row['TCR']:.3f}", f"{row['CR']:.3f}",
            f"{row['NE']:.3f}", f"{row['SR_collision']:.3f}", f"{row['SR_full']:.3f}",
        ])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines) + "\n"
