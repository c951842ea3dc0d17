"""Scenario and lane-map domain types, SE(2) transforms, agent filtering, and file IO.

A scenario is a fixed-horizon recording of up to ``MAX_AGENTS`` vehicle
trajectories at 2 Hz plus a polyline lane map.  Trajectories are stored as a
padded ``[M, T, 5]`` array with channels ``[x, y, v, cos_h, sin_h]`` and an
``[M, T]`` validity mask; padded entries are all-zero and stay out of every
loss and metric.  Agent 0 is the ego vehicle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyScenario, FormatError

# Channel indices of the 5-dim state [x, y, v, cos_h, sin_h].
X, Y, V, COS_H, SIN_H = 0, 1, 2, 3, 4

T_STEPS = 17          # 8 s at 2 Hz, both endpoints included
MAX_AGENTS = 11
LANE_POINTS = 20
MAX_LANES = 100
DEFAULT_LANE_WIDTH = 3.5
MIN_TRAVEL = 3.0

FORMAT_VERSION = 1

HEADING_NORM_TOL = 1e-6


def _frozen(arr: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AgentTrajectory:
    """One agent's states over the horizon, ``[T, 5]``."""

    states: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states))
        object.__setattr__(self, "valid", _frozen(self.valid, dtype=bool))

    def path_length(self) -> float:
        pts = self.states[self.valid][:, (X, Y)]
        if len(pts) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


@dataclass(frozen=True)
class LaneMap:
    """Polyline lane centerlines, ``[L, LANE_POINTS, 4]`` with ``[x, y, cos_h, sin_h]``."""

    lanes: np.ndarray
    lane_width: float = DEFAULT_LANE_WIDTH

    def __post_init__(self):
        lanes = np.asarray(self.lanes, dtype=np.float64)
        if lanes.size == 0:
            lanes = np.zeros((0, LANE_POINTS, 4))
        object.__setattr__(self, "lanes", _frozen(lanes))
        object.__setattr__(self, "lane_width", float(self.lane_width))

    @property
    def num_lanes(self) -> int:
        return self.lanes.shape[0]

    def centers(self) -> np.ndarray:
        """Mean point of each lane, ``[L, 2]``."""
        if self.num_lanes == 0:
            return np.zeros((0, 2))
        return self.lanes[:, :, :2].mean(axis=1)


@dataclass(frozen=True)
class Scenario:
    """Padded multi-agent scenario: the unit of storage, retrieval, and generation."""

    trajectories: np.ndarray           # [M, T, 5]
    valid: np.ndarray                  # [M, T] bool
    lane_map: LaneMap
    scene_id: str
    tags: tuple[str, ...] | None = None
    provenance: dict | None = None

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=np.float64).copy()
        valid = np.asarray(self.valid, dtype=bool)
        traj[~valid] = 0.0             # padded entries are all-zero by construction
        object.__setattr__(self, "trajectories", _frozen(traj))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def num_agents(self) -> int:
        return int(self.agent_valid.sum())

    @property
    def agent_valid(self) -> np.ndarray:
        """Per-agent mask: an agent is valid if any of its steps is valid."""
        return self.valid.any(axis=1)

    @property
    def agents(self) -> tuple[AgentTrajectory, ...]:
        return tuple(
            AgentTrajectory(self.trajectories[i], self.valid[i])
            for i in range(self.trajectories.shape[0])
        )

    def with_tags(self, tags) -> "Scenario":
        return replace(self, tags=tuple(tags))


def initial_poses(scenario: Scenario) -> np.ndarray:
    """First valid state of each agent, ``[M, 5]``; zero rows for padding."""
    M, T, _ = scenario.trajectories.shape
    out = np.zeros((M, 5))
    for i in range(M):
        idx = np.flatnonzero(scenario.valid[i])
        if idx.size:
            out[i] = scenario.trajectories[i, idx[0]]
    return out


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    agent: int | None = None
    step: int | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind, message, agent=None, step=None):
        self.violations.append(Violation(kind, message, agent, step))

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(
            f"[{v.kind}] agent={v.agent} step={v.step}: {v.message}"
            for v in self.violations
        )


def validate(scenario: Scenario) -> ValidationReport:
    """Check structural invariants; never raises.

    Travel-distance policy (the 3 m filter) is enforced by :func:`filter_agents`
    rather than here, so that datasets may carry deliberately stopped agents.
    """
    report = ValidationReport()
    traj, valid = scenario.trajectories, scenario.valid

    if traj.ndim != 3 or traj.shape[2] != 5 or valid.shape != traj.shape[:2]:
        report.add("shape", f"trajectories {traj.shape} / valid {valid.shape} inconsistent")
        return report
    M, T = valid.shape
    if M > MAX_AGENTS:
        report.add("shape", f"{M} agent slots exceed maximum {MAX_AGENTS}")
    if T != T_STEPS:
        report.add("shape", f"T={T}, expected {T_STEPS}")

    if not valid[0].any():
        report.add("ego", "agent 0 has no valid step")

    for i in range(M):
        for t in range(T):
            if valid[i, t]:
                c, s = traj[i, t, COS_H], traj[i, t, SIN_H]
                norm_sq = c * c + s * s
                if abs(norm_sq - 1.0) > HEADING_NORM_TOL:
                    report.add("heading-norm", f"cos^2+sin^2={norm_sq:.8f}", agent=i, step=t)
                if traj[i, t, V] < 0:
                    report.add("negative-speed", f"v={traj[i, t, V]:.6f}", agent=i, step=t)
            elif np.any(traj[i, t] != 0.0):
                report.add("padding", "invalid step has nonzero state", agent=i, step=t)

    lanes = scenario.lane_map.lanes
    if lanes.shape[0] > MAX_LANES:
        report.add("map", f"{lanes.shape[0]} lanes exceed maximum {MAX_LANES}")
    if lanes.shape[0] and lanes.shape[1] != LANE_POINTS:
        report.add("map", f"lanes have {lanes.shape[1]} points, expected {LANE_POINTS}")
    else:
        for li in range(lanes.shape[0]):
            norms = lanes[li, :, 2] ** 2 + lanes[li, :, 3] ** 2
            bad = np.flatnonzero(np.abs(norms - 1.0) > HEADING_NORM_TOL)
            if bad.size:
                report.add("map", f"lane {li} heading not unit-norm at point {bad[0]}")

    if scenario.tags is not None and len(scenario.tags) != scenario.num_agents:
        report.add("tags", f"{len(scenario.tags)} tags for {scenario.num_agents} valid agents")

    return report


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def transform_points(points: np.ndarray, theta: float, t=(0.0, 0.0)) -> np.ndarray:
    """Rotate ``[..., 2]`` points by theta about the origin, then translate."""
    return points @ rotation_matrix(theta).T + np.asarray(t, dtype=np.float64)


def rotate_headings(cos_h: np.ndarray, sin_h: np.ndarray, theta: float):
    c, s = np.cos(theta), np.sin(theta)
    return cos_h * c - sin_h * s, cos_h * s + sin_h * c


def transform(scenario: Scenario, theta: float, t=(0.0, 0.0)) -> Scenario:
    """Apply a rigid SE(2) motion to trajectories and map; mask and tags are kept.

    Rotation is about the world origin.  Speeds are untouched and padded
    entries stay zero.
    """
    traj = scenario.trajectories.copy()
    valid = scenario.valid
    pos = transform_points(traj[:, :, (X, Y)], theta, t)
    cos_h, sin_h = rotate_headings(traj[:, :, COS_H], traj[:, :, SIN_H], theta)
    traj[:, :, X] = np.where(valid, pos[:, :, 0], 0.0)
    traj[:, :, Y] = np.where(valid, pos[:, :, 1], 0.0)
    traj[:, :, COS_H] = np.where(valid, cos_h, 0.0)
    traj[:, :, SIN_H] = np.where(valid, sin_h, 0.0)

    lanes = scenario.lane_map.lanes.copy()
    if lanes.size:
        lanes[:, :, :2] = transform_points(lanes[:, :, :2], theta, t)
        lanes[:, :, 2], lanes[:, :, 3] = rotate_headings(lanes[:, :, 2], lanes[:, :, 3], theta)

    return replace(
        scenario,
        trajectories=traj,
        valid=valid,
        lane_map=LaneMap(lanes, scenario.lane_map.lane_width),
    )


def filter_agents(
    scenario: Scenario,
    min_travel: float = MIN_TRAVEL,
    max_agents: int = MAX_AGENTS,
) -> Scenario:
    """Drop near-static agents and keep the ``max_agents`` closest to the ego.

    The ego (agent 0) is always kept: a scenario without an ego is not a
    scenario.  Survivors are ordered by distance of their first valid position
    to the ego's first valid position, then re-padded to the original width.
    """
    traj, valid = scenario.trajectories, scenario.valid
    M = traj.shape[0]
    agent_valid = scenario.valid.any(axis=1)
    if not agent_valid.any():
        raise EmptyScenario(f"{scenario.scene_id}: no valid agents")

    poses = initial_poses(scenario)
    keep = []
    for i in range(M):
        if not agent_valid[i]:
            continue
        if i == 0 or AgentTrajectory(traj[i], valid[i]).path_length() >= min_travel:
            keep.append(i)
    if not keep:
        raise EmptyScenario(f"{scenario.scene_id}: no agents after filtering")

    ego_xy = poses[0, :2]
    dist = {i: float(np.linalg.norm(poses[i, :2] - ego_xy)) for i in keep}
    non_ego = sorted((i for i in keep if i != 0), key=lambda i: (dist[i], i))
    order = ([0] if 0 in keep else []) + non_ego
    order = order[:max_agents]

    tags_in = scenario.tags
    valid_indices = list(np.flatnonzero(agent_valid))
    new_traj = np.zeros_like(traj)
    new_valid = np.zeros_like(valid)
    new_tags = [] if tags_in is not None else None
    for slot, i in enumerate(order):
        new_traj[slot] = traj[i]
        new_valid[slot] = valid[i]
        if new_tags is not None:
            new_tags.append(tags_in[valid_indices.index(i)])

    return replace(
        scenario,
        trajectories=new_traj,
        valid=new_valid,
        tags=tuple(new_tags) if new_tags is not None else None,
    )


def _scenario_record(s: Scenario) -> dict:
    rec = {
        "scene_id": s.scene_id,
        "agents": s.trajectories.tolist(),
        "valid": s.valid.tolist(),
        "lanes": s.lane_map.lanes.tolist(),
        "lane_width": s.lane_map.lane_width,
    }
    if s.tags is not None:
        rec["tags"] = list(s.tags)
    if s.provenance is not None:
        rec["provenance"] = s.provenance
    return rec


def _scenario_from_record(rec: dict, index: int) -> Scenario:
    try:
        return Scenario(
            trajectories=np.asarray(rec["agents"], dtype=np.float64),
            valid=np.asarray(rec["valid"], dtype=bool),
            lane_map=LaneMap(np.asarray(rec["lanes"], dtype=np.float64), rec["lane_width"]),
            scene_id=rec["scene_id"],
            tags=tuple(rec["tags"]) if "tags" in rec else None,
            provenance=rec.get("provenance"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad scenario field: {exc}", record_index=index) from exc


def write_scenarios(path, scenarios) -> None:
    """Write scenarios as JSON lines with a leading header record."""
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "T": T_STEPS, "M": MAX_AGENTS}
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for s in scenarios:
            fh.write(json.dumps(_scenario_record(s), separators=(",", ":")) + "\n")


def read_scenarios(path) -> list[Scenario]:
    """Read a scenario file; raises :class:`FormatError` with the record index."""
    path = Path(path)
    scenarios = []
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("missing header record", record_index=0)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparsable header: {exc}", record_index=0) from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}",
            record_index=0,
        )
    for k, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"unparsable record: {exc}", record_index=k) from exc
        scenarios.append(_scenario_from_record(rec, k))
    return scenarios


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    """Field-for-field equality at full float precision."""
    return (
        a.scene_id == b.scene_id
        and np.array_equal(a.trajectories, b.trajectories)
        and np.array_equal(a.valid, b.valid)
        and np.array_equal(a.lane_map.lanes, b.lane_map.lanes)
        and a.lane_map.lane_width == b.lane_map.lane_width
        and a.tags == b.tags
        and a.provenance == b.provenance
    )
