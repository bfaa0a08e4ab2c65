"""Goal-rate bookkeeping, metrics/trajectory CSV files and SVG replays."""
from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from dataclasses import astuple, dataclass, fields
from pathlib import Path

from .uavenv import EVENTS, N_AGENTS
from .worldmap import WorldMap

METRICS_HEADER = (
    "iteration", "stage", "episodes", "agent_goals", "goal_rate", "ma10_goal_rate",
    "mean_episode_reward", "policy_loss", "value_loss", "entropy",
)
TRAJECTORY_HEADER = ("episode", "step", "agent", "x", "y", "yaw", "action", "reward", "event")
PX_PER_M = 20
MARGIN_PX = 10


def goal_rate(episodes: int, agent_goals: int) -> float:
    """Fraction of agent tasks that reached the goal; two tasks per episode."""
    if episodes < 0 or agent_goals < 0:
        raise ValueError("counts must be non-negative")
    if agent_goals > N_AGENTS * episodes:
        raise ValueError(f"{agent_goals} goals exceed {N_AGENTS} x {episodes} episodes")
    if episodes == 0:
        return 0.0
    return agent_goals / (N_AGENTS * episodes)


def moving_average(series, window: int = 10) -> list[float]:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    for k in range(len(series)):
        chunk = series[max(0, k - window + 1):k + 1]
        out.append(sum(chunk) / len(chunk))
    return out


@dataclass
class IterationMetricsRow:
    iteration: int
    stage: str
    episodes: int
    agent_goals: int
    goal_rate: float
    ma10_goal_rate: float
    mean_episode_reward: float
    policy_loss: float
    value_loss: float
    entropy: float


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in astuple(row)])


def append_metrics_row(row: IterationMetricsRow, path) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow([_fmt(v) for v in astuple(row)])


def read_metrics_csv(path) -> list[IterationMetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        types = [f.type for f in fields(IterationMetricsRow)]
        conv = {"int": int, "str": str, "float": float}
        return [IterationMetricsRow(*(conv[t](v) for t, v in zip(types, rec))) for rec in reader]


@dataclass
class TrajectoryRow:
    episode: int
    step: int
    agent: int
    x: float
    y: float
    yaw: float
    action: int  # -1 on the step-0 row, which records the start pose
    reward: float
    event: str


def write_trajectory_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in astuple(r)])


class TrajectoryParseError(ValueError):
    pass


def read_trajectory_csv(path) -> list[TrajectoryRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRAJECTORY_HEADER:
            raise TrajectoryParseError(f"line 1: expected header {','.join(TRAJECTORY_HEADER)}")
        for rec in reader:
            line = reader.line_num
            if len(rec) != len(TRAJECTORY_HEADER):
                raise TrajectoryParseError(f"line {line}: expected {len(TRAJECTORY_HEADER)} fields, got {len(rec)}")
            try:
                row = TrajectoryRow(int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3]), float(rec[4]),
                                    float(rec[5]), int(rec[6]), float(rec[7]), rec[8])
            except ValueError as exc:
                raise TrajectoryParseError(f"line {line}: {exc}") from exc
            if row.event not in EVENTS:
                raise TrajectoryParseError(f"line {line}: unknown event {row.event!r}")
            if row.agent not in range(N_AGENTS):
                raise TrajectoryParseError(f"line {line}: agent must be 0 or 1")
            rows.append(row)
    return rows


_AGENT_COLOURS = ("#1f77b4", "#d62728")


def render_trajectory_svg(rows, world: WorldMap, path) -> None:
    """Arena, obstacles, spawn cells and one polyline per (episode, agent)."""
    W = world.width * PX_PER_M
    H = world.height * PX_PER_M

    def px(x, y):
        return MARGIN_PX + x * PX_PER_M, MARGIN_PX + (world.height - y) * PX_PER_M

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(W + 2 * MARGIN_PX), height=str(H + 2 * MARGIN_PX))
    ET.SubElement(svg, "rect", id="arena", x=str(MARGIN_PX), y=str(MARGIN_PX), width=str(W), height=str(H),
                  fill="white", stroke="black")
    for r in world.obstacles:
        x0, y0 = px(r.x_min, r.y_max)
        ET.SubElement(svg, "rect", {"class": "obstacle", "x": str(x0), "y": str(y0),
                                    "width": str((r.x_max - r.x_min) * PX_PER_M),
                                    "height": str((r.y_max - r.y_min) * PX_PER_M), "fill": "#777"})
    half = 0.5 * PX_PER_M
    for p in world.spawn_cells:
        cx, cy = px(p.x, p.y)
        ET.SubElement(svg, "rect", {"class": "spawn", "x": str(cx - half / 2), "y": str(cy - half / 2),
                                    "width": str(half), "height": str(half), "fill": "none", "stroke": "red"})

    tracks: dict = {}
    for r in rows:
        tracks.setdefault((r.episode, r.agent), []).append(r)
    for (ep, agent), pts in tracks.items():
        pts.sort(key=lambda r: r.step)
        colour = _AGENT_COLOURS[agent % len(_AGENT_COLOURS)]
        coords = [px(r.x, r.y) for r in pts]
        ET.SubElement(svg, "polyline", {"class": "track", "data-episode": str(ep), "data-agent": str(agent),
                                        "points": " ".join(f"{x:.2f},{y:.2f}" for x, y in coords),
                                        "fill": "none", "stroke": colour})
        sx, sy = coords[0]
        ET.SubElement(svg, "circle", {"class": "start", "cx": f"{sx:.2f}", "cy": f"{sy:.2f}", "r": "4", "fill": colour})
        ex, ey = coords[-1]
        end = pts[-1].event
        ET.SubElement(svg, "circle", {"class": f"end {end}", "cx": f"{ex:.2f}", "cy": f"{ey:.2f}", "r": "5",
                                      "fill": "none" if end != "goal" else colour, "stroke": colour})
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
