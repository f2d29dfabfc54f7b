"""Plain-text episode logs, multi-seed result files and the comparison table."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenegen.types import Scenario
from .simulator import MetricsReport, EpisodeResult

EPISODE_HEADER = "# latentdriver episode v1"
RESULTS_HEADER = "# latentdriver results v1"
TABLE_COLUMNS = ("AR[95:75]", "mAR[95:75]", "OR", "CR", "PR")


class RecordFormatError(ValueError):
    pass


@dataclass
class EpisodeLog:
    scenario_id: str
    scene_type: str
    progress_ratio: float
    collided: bool
    offroad: bool
    collision_step: int | None
    offroad_step: int | None
    ego_extent: tuple[float, float]
    road: np.ndarray  # (v, 2)
    centerline: np.ndarray  # (p, 2)
    agent_extents: np.ndarray  # (a, 2)
    trace: np.ndarray  # (steps, 3)
    agent_trace: np.ndarray  # (steps, a, 3)
    expert: np.ndarray  # (steps, 3)

    @classmethod
    def from_result(cls, scenario: Scenario, result: EpisodeResult) -> "EpisodeLog":
        n_agents = len(scenario.agents)
        at = result.agent_trace if result.agent_trace is not None else np.zeros((len(result.trace), n_agents, 3))
        return cls(result.scenario_id, result.scene_type.value, result.progress_ratio, result.collided,
                   result.offroad, result.collision_step, result.offroad_step, scenario.ego_extent,
                   scenario.road.polygon.vertices, scenario.road.centerline.points,
                   np.array([[a.length, a.width] for a in scenario.agents]).reshape(-1, 2),
                   result.trace, at.reshape(len(result.trace), n_agents, 3), scenario.expert)


def _rows(arr: np.ndarray) -> list[str]:
    return [" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(arr)]


def write_episode_log(log: EpisodeLog, path) -> None:
    opt = lambda v: "none" if v is None else str(v)  # noqa: E731
    lines = [EPISODE_HEADER,
             f"scenario_id={log.scenario_id}", f"scene_type={log.scene_type}",
             f"progress_ratio={log.progress_ratio!r}", f"collided={log.collided}", f"offroad={log.offroad}",
             f"collision_step={opt(log.collision_step)}", f"offroad_step={opt(log.offroad_step)}",
             f"ego_extent={log.ego_extent[0]!r},{log.ego_extent[1]!r}"]
    lines += ["[road]"] + _rows(log.road)
    lines += ["[centerline]"] + _rows(log.centerline)
    lines += ["[agents]"] + (_rows(log.agent_extents) if len(log.agent_extents) else [])
    lines += ["[trace]"] + _rows(log.trace)
    lines += ["[expert]"] + _rows(log.expert)
    lines += ["[agent_trace]"]
    for k, frame in enumerate(log.agent_trace):
        lines += [f"{k} {i} " + row for i, row in enumerate(_rows(frame))] if len(frame) else []
    Path(path).write_text("\n".join(lines) + "\n")


def read_episode_log(path) -> EpisodeLog:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != EPISODE_HEADER:
        raise RecordFormatError(f"{path}: not an episode log")
    head, sections, cur = {}, {}, None
    for line in text[1:]:
        if not line.strip():
            continue
        if line.startswith("["):
            cur = line.strip("[]")
            sections[cur] = []
        elif cur is None:
            k, _, v = line.partition("=")
            head[k] = v
        else:
            sections[cur].append([float(x) for x in line.split()])
    try:
        arr = lambda name, w: np.array(sections.get(name, []), dtype=np.float64).reshape(-1, w)  # noqa: E731
        trace = arr("trace", 3)
        agents = arr("agents", 2)
        at = np.zeros((len(trace), len(agents), 3))
        for k, i, x, y, yaw in sections.get("agent_trace", []):
            at[int(k), int(i)] = (x, y, yaw)
        opt = lambda v: None if v == "none" else int(v)  # noqa: E731
        ext = tuple(float(v) for v in head["ego_extent"].split(","))
        return EpisodeLog(head["scenario_id"], head["scene_type"], float(head["progress_ratio"]),
                          head["collided"] == "True", head["offroad"] == "True",
                          opt(head["collision_step"]), opt(head["offroad_step"]), ext,
                          arr("road", 2), arr("centerline", 2), agents, trace, at, arr("expert", 3))
    except (KeyError, ValueError) as exc:
        raise RecordFormatError(f"{path}: malformed episode log ({exc})") from exc


# -- multi-seed results --------------------------------------------------------

def summarize(reports: dict[int, MetricsReport]) -> dict[str, tuple[float, float]]:
    """Mean and population std of every metric across seeds."""
    keys = list(next(iter(reports.values())).as_dict())
    out = {}
    for k in keys:
        vals = np.array([r.as_dict().get(k, np.nan) for r in reports.values()])
        out[k] = (float(np.mean(vals)), float(np.std(vals)))
    return out


def write_results(path, name: str, reports: dict[int, MetricsReport], config: str = "") -> None:
    lines = [RESULTS_HEADER, f"name={name}", "seeds=" + ",".join(str(s) for s in reports)]
    for k, (m, s) in summarize(reports).items():
        lines.append(f"mean.{k}={m!r}")
        lines.append(f"std.{k}={s!r}")
    for seed, rep in reports.items():
        lines += [f"seed{seed}.{k}={v!r}" for k, v in rep.as_dict().items()]
    lines += [f"config.{ln}" for ln in config.splitlines() if ln.strip()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_results(path) -> dict[str, str]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != RESULTS_HEADER:
        raise RecordFormatError(f"{path}: not a results file")
    out = {}
    for line in text[1:]:
        k, sep, v = line.partition("=")
        if sep:
            out[k] = v
    return out


def format_mean_std(summary: dict[str, tuple[float, float]], columns=TABLE_COLUMNS) -> str:
    return "  ".join(f"{c}={summary[c][0]:.2f}±{summary[c][1]:.2f}" for c in columns)


def comparison_table(results: list[dict[str, str]], columns=TABLE_COLUMNS) -> str:
    """One row per results file, fixed column order, mean±std cells."""
    width = max([len("run")] + [len(r.get("name", "")) for r in results])
    head = f"{'run':<{width}}" + "".join(f"{c:>16}" for c in columns)
    rows = [head, "-" * len(head)]
    for r in results:
        cells = []
        for c in columns:
            m, s = r.get(f"mean.{c}"), r.get(f"std.{c}")
            cells.append(f"{float(m):.2f}±{float(s):.2f}" if m is not None else "-")
        rows.append(f"{r.get('name', ''):<{width}}" + "".join(f"{c:>16}" for c in cells))
    return "\n".join(rows)
