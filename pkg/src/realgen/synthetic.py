"""Deterministic synthetic lane maps and tagged multi-agent scenarios.

Stands in for a recorded-driving dataset at desk scale.  Maps are built from
line and circular-arc primitives; agents follow the same primitives at 2 Hz,
so the drivable corridor and the trajectories agree by construction.  All
randomness flows through one ``numpy.random.Generator`` seeded from the spec,
so equal seeds give bit-identical output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import PlacementError
from .scenario import (
    DEFAULT_LANE_WIDTH,
    LANE_POINTS,
    MAX_AGENTS,
    T_STEPS,
    LaneMap,
    Scenario,
    write_scenarios,
)

DT = 0.5  # 2 Hz

TAGS = (
    "left-turn",
    "right-turn",
    "left-lane-change",
    "right-lane-change",
    "straight",
    "stop",
    "u-turn",
)
LAYOUTS = ("straight-road", "intersection", "curve")

MIN_SPAWN_GAP = 4.0       # center-to-center at t=0
TURN_RADIUS_LEFT = 8.0
TURN_RADIUS_RIGHT = 4.0
UTURN_RADIUS = 1.75
CURVE_RADIUS = 25.0


@dataclass(frozen=True)
class WorldSpec:
    """Recipe for one synthetic scenario (or a whole dataset of them)."""

    seed: int
    layout: str = "straight-road"
    n_agents: int = 6
    behavior_mix: dict = field(
        default_factory=lambda: {"straight": 0.55, "stop": 0.15, "left-turn": 0.1,
                                 "right-turn": 0.1, "left-lane-change": 0.05,
                                 "right-lane-change": 0.05}
    )
    speed_range: tuple[float, float] = (3.0, 12.0)

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if not 1 <= self.n_agents <= MAX_AGENTS:
            raise ValueError(f"n_agents={self.n_agents} outside 1..{MAX_AGENTS}")
        if any(w < 0 for w in self.behavior_mix.values()):
            raise ValueError("behavior weights must be non-negative")
        if sum(self.behavior_mix.values()) <= 0:
            raise ValueError("behavior weights must not all be zero")
        unknown = set(self.behavior_mix) - set(TAGS)
        if unknown:
            raise ValueError(f"unknown behavior tags {sorted(unknown)}")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad speed_range {self.speed_range}")


# --------------------------------------------------------------------------
# Path primitives: piecewise line/arc curves with analytic tangents.

@dataclass(frozen=True)
class _Line:
    start: tuple[float, float]
    heading: float
    length: float

    def eval(self, s):
        c, si = math.cos(self.heading), math.sin(self.heading)
        return self.start[0] + s * c, self.start[1] + s * si, self.heading


@dataclass(frozen=True)
class _Arc:
    center: tuple[float, float]
    radius: float
    phi0: float       # angle of entry point as seen from center
    sweep: float      # signed total angle; + is counterclockwise

    @property
    def length(self):
        return abs(self.sweep) * self.radius

    def eval(self, s):
        phi = self.phi0 + math.copysign(s / self.radius, self.sweep)
        x = self.center[0] + self.radius * math.cos(phi)
        y = self.center[1] + self.radius * math.sin(phi)
        heading = phi + math.copysign(math.pi / 2, self.sweep)
        return x, y, heading


def _path_length(segments):
    return sum(seg.length for seg in segments)


def _path_eval(segments, s):
    """Point and tangent heading at arclength ``s`` (clamped to the path end)."""
    for seg in segments:
        if s <= seg.length or seg is segments[-1]:
            return seg.eval(min(s, seg.length))
        s -= seg.length
    raise AssertionError("empty path")


def _rotate_segments(segments, theta):
    """Rigid rotation of a whole path about the origin."""
    def rot(p):
        c, s = math.cos(theta), math.sin(theta)
        return (c * p[0] - s * p[1], s * p[0] + c * p[1])

    out = []
    for seg in segments:
        if isinstance(seg, _Line):
            out.append(_Line(rot(seg.start), seg.heading + theta, seg.length))
        else:
            out.append(_Arc(rot(seg.center), seg.radius, seg.phi0 + theta, seg.sweep))
    return out


def _sample_polyline(segments, n_points):
    """Evenly spaced points with tangent headings, as ``[n, 4]``."""
    total = _path_length(segments)
    out = np.zeros((n_points, 4))
    for k, s in enumerate(np.linspace(0.0, total, n_points)):
        x, y, h = _path_eval(segments, s)
        out[k] = (x, y, math.cos(h), math.sin(h))
    return out


# --------------------------------------------------------------------------
# Map construction.

_STRAIGHT_OFFSETS = (-5.25, -1.75, 1.75, 5.25)
_ROAD_SPAN = 80.0


def _left_turn_arc(radius):
    # Canonical east approach on lane y = -1.75, exiting north on x = +1.75.
    enter_x = 1.75 - radius
    return _Arc(center=(enter_x, -1.75 + radius), radius=radius,
                phi0=-math.pi / 2, sweep=math.pi / 2)


def _right_turn_arc(radius):
    # Canonical east approach, exiting south on x = -1.75.
    enter_x = -1.75 - radius
    return _Arc(center=(enter_x, -1.75 - radius), radius=radius,
                phi0=math.pi / 2, sweep=-math.pi / 2)


def _straight_road_lanes():
    lanes = []
    for off in _STRAIGHT_OFFSETS:
        seg = _Line((-_ROAD_SPAN, off), 0.0, 2 * _ROAD_SPAN)
        lanes.append(_sample_polyline([seg], LANE_POINTS))
    return lanes


def _intersection_lanes():
    lanes = []
    for k in range(4):
        theta = k * math.pi / 2
        through = _Line((-_ROAD_SPAN, -1.75), 0.0, 2 * _ROAD_SPAN)
        for segs in ([through], [_left_turn_arc(TURN_RADIUS_LEFT)],
                     [_right_turn_arc(TURN_RADIUS_RIGHT)]):
            lanes.append(_sample_polyline(_rotate_segments(segs, theta), LANE_POINTS))
    return lanes


def _curve_segments(bend_left, lateral_offset):
    """One lane of a 90-degree bend: approach, arc, exit."""
    sign = 1.0 if bend_left else -1.0
    radius = CURVE_RADIUS - sign * lateral_offset
    approach = _Line((-30.0, lateral_offset), 0.0, 30.0)
    arc = _Arc(center=(0.0, sign * CURVE_RADIUS), radius=radius,
               phi0=-sign * math.pi / 2, sweep=sign * math.pi / 2)
    ex, ey, eh = arc.eval(arc.length)
    exit_line = _Line((ex, ey), eh, 30.0)
    return [approach, arc, exit_line]


def _curve_lanes(bend_left):
    return [
        _sample_polyline(_curve_segments(bend_left, off), LANE_POINTS)
        for off in (-3.5, 0.0, 3.5)
    ]


def _sort_lanes(lanes_array, center):
    centers = lanes_array[:, :, :2].mean(axis=1)
    dist = np.linalg.norm(centers - np.asarray(center), axis=1)
    order = np.argsort(dist, kind="stable")
    return lanes_array[order]


def _curve_bends_left(seed):
    return bool(np.random.Generator(np.random.PCG64(seed)).integers(0, 2))


def generate_map(spec: WorldSpec) -> LaneMap:
    """Lane map for the spec's layout, ordered by lane-center distance to the origin."""
    if spec.layout == "straight-road":
        lanes = _straight_road_lanes()
    elif spec.layout == "intersection":
        lanes = _intersection_lanes()
    else:
        lanes = _curve_lanes(_curve_bends_left(spec.seed))
    arr = _sort_lanes(np.stack(lanes), (0.0, 0.0))
    return LaneMap(arr, DEFAULT_LANE_WIDTH)


# --------------------------------------------------------------------------
# Trajectory synthesis.

def _speed_steps(tag, v0, rng):
    """Per-step speeds over the horizon; stop agents ramp down to zero."""
    v = np.full(T_STEPS, v0)
    if tag == "stop":
        t_stop = rng.uniform(3.5, 6.0)
        times = np.arange(T_STEPS) * DT
        v = v0 * np.clip(1.0 - times / t_stop, 0.0, None)
    return v


def _distances(v):
    s = np.zeros(T_STEPS)
    s[1:] = np.cumsum((v[:-1] + v[1:]) / 2.0 * DT)
    return s


def _states_from_path(segments, v):
    s = _distances(v)
    states = np.zeros((T_STEPS, 5))
    for t in range(T_STEPS):
        x, y, h = _path_eval(segments, s[t])
        states[t] = (x, y, v[t], math.cos(h), math.sin(h))
    return states


def _lane_change_states(y_from, direction, v, x0, rng):
    """Lateral blend between adjacent lane centerlines, parametrized by x."""
    width = DEFAULT_LANE_WIDTH * direction
    length = rng.uniform(20.0, 35.0)
    x_start = x0 + v[0] * DT * rng.integers(2, 6)
    x = x0 + _distances(v)
    u = np.clip((x - x_start) / length, 0.0, 1.0)
    y = y_from + width * (3 * u**2 - 2 * u**3)
    slope = width * (6 * u - 6 * u**2) / length
    heading = np.arctan2(slope, 1.0)
    states = np.zeros((T_STEPS, 5))
    states[:, 0] = x
    states[:, 1] = y
    states[:, 2] = v
    states[:, 3] = np.cos(heading)
    states[:, 4] = np.sin(heading)
    return states


def _allowed_tags(layout, speed_min, bend_left=True):
    if layout == "straight-road":
        return ("straight", "stop", "left-lane-change", "right-lane-change")
    if layout == "intersection":
        return ("straight", "stop", "left-turn", "right-turn", "u-turn")
    turn = "left-turn" if bend_left else "right-turn"
    tags = [turn, "stop"]
    if speed_min <= 3.4:
        tags.append("straight")
    return tuple(tags)


def _pick_tag(rng, mix, allowed):
    weights = np.array([mix.get(t, 0.0) for t in allowed])
    if weights.sum() <= 0:
        raise PlacementError(
            f"behavior mix has no weight on tags placeable in this layout {allowed}"
        )
    return allowed[rng.choice(len(allowed), p=weights / weights.sum())]


def _place_straight_road(rng, tag, spec):
    vmin, vmax = spec.speed_range
    v0 = rng.uniform(vmin, vmax)
    v = _speed_steps(tag, v0, rng)
    total = _distances(v)[-1]
    if tag in ("left-lane-change", "right-lane-change"):
        direction = 1 if tag == "left-lane-change" else -1
        usable = [off for off in _STRAIGHT_OFFSETS
                  if off + direction * DEFAULT_LANE_WIDTH in _STRAIGHT_OFFSETS]
        y0 = usable[rng.choice(len(usable))]
        x0 = rng.uniform(-70.0, _ROAD_SPAN - total - 5.0)
        return _lane_change_states(y0, direction, v, x0, rng)
    y0 = _STRAIGHT_OFFSETS[rng.choice(len(_STRAIGHT_OFFSETS))]
    x0 = rng.uniform(-70.0, _ROAD_SPAN - total - 5.0)
    return _states_from_path([_Line((x0, y0), 0.0, total + 10.0)], v)


def _place_intersection(rng, tag, spec):
    vmin, vmax = spec.speed_range
    approach = rng.integers(0, 4) * math.pi / 2
    if tag in ("straight", "stop"):
        v0 = rng.uniform(vmin, vmax)
        v = _speed_steps(tag, v0, rng)
        total = _distances(v)[-1]
        x0 = rng.uniform(-70.0, _ROAD_SPAN - total - 5.0)
        segs = [_Line((x0, -1.75), 0.0, total + 10.0)]
    elif tag == "u-turn":
        v0 = rng.uniform(min(vmin, 4.5), min(4.5, vmax))
        v = _speed_steps(tag, v0, rng)
        total = _distances(v)[-1]
        arc_len = math.pi * UTURN_RADIUS
        d_a = rng.uniform(2.0, max(2.5, total - arc_len - 3.0))
        x_enter = rng.uniform(-40.0, -6.0)
        segs = [
            _Line((x_enter - d_a, -1.75), 0.0, d_a),
            _Arc(center=(x_enter, 0.0), radius=UTURN_RADIUS,
                 phi0=-math.pi / 2, sweep=math.pi),
            _Line((x_enter, 1.75), math.pi, 60.0),
        ]
    else:
        radius = TURN_RADIUS_LEFT if tag == "left-turn" else TURN_RADIUS_RIGHT
        arc = _left_turn_arc(radius) if tag == "left-turn" else _right_turn_arc(radius)
        arc_len = arc.length
        v_hi = min(9.0, vmax)
        v_lo = min(vmin, v_hi)
        v0 = rng.uniform(max(v_lo, (arc_len + 6.0) / 8.0), v_hi)
        v = _speed_steps(tag, v0, rng)
        total = _distances(v)[-1]
        d_a = rng.uniform(1.0, max(1.5, total - arc_len - 3.0))
        enter_x, enter_y, _ = arc.eval(0.0)
        ex, ey, eh = arc.eval(arc_len)
        segs = [
            _Line((enter_x - d_a, enter_y), 0.0, d_a),
            arc,
            _Line((ex, ey), eh, 60.0),
        ]
    return _states_from_path(_rotate_segments(segs, approach), v)


def _place_curve(rng, tag, spec, bend_left):
    vmin, vmax = spec.speed_range
    off = (-3.5, 0.0, 3.5)[rng.choice(3)]
    segs = _curve_segments(bend_left, off)
    arc_len = segs[1].length
    if tag in ("left-turn", "right-turn"):
        v_hi = min(9.0, vmax)
        v0 = rng.uniform(min(max(5.5, vmin), v_hi), v_hi)
        v = _speed_steps(tag, v0, rng)
        total = _distances(v)[-1]
        d_a = rng.uniform(0.0, max(0.5, min(30.0, total - arc_len - 2.0)))
        start = 30.0 - d_a
    elif tag == "stop":
        v0 = rng.uniform(vmin, vmax)
        v = _speed_steps(tag, v0, rng)
        start = rng.uniform(0.0, 15.0)
    else:  # straight, only offered when slow speeds are available
        v0 = rng.uniform(vmin, min(3.4, vmax))
        v = _speed_steps(tag, v0, rng)
        total = _distances(v)[-1]
        start = rng.uniform(0.0, max(0.1, 30.0 - total - 1.0))
    # Walk the lane from the chosen start offset.
    s = _distances(v) + start
    states = np.zeros((T_STEPS, 5))
    for t in range(T_STEPS):
        x, y, h = _path_eval(segs, s[t])
        states[t] = (x, y, v[t], math.cos(h), math.sin(h))
    return states


def generate_scenario(spec: WorldSpec) -> Scenario:
    """One tagged scenario; deterministic in ``spec.seed``.

    Raises :class:`PlacementError` if agents cannot be spawned without initial
    overlap after 100 attempts.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    bend_left = _curve_bends_left(spec.seed) if spec.layout == "curve" else True
    allowed = _allowed_tags(spec.layout, spec.speed_range[0], bend_left)

    states_list, tags = [], []
    for _ in range(spec.n_agents):
        placed = False
        for _attempt in range(100):
            tag = _pick_tag(rng, spec.behavior_mix, allowed)
            if spec.layout == "curve":
                states = _place_curve(rng, tag, spec, bend_left)
            elif spec.layout == "intersection":
                states = _place_intersection(rng, tag, spec)
            else:
                states = _place_straight_road(rng, tag, spec)
            p0 = states[0, :2]
            if all(np.linalg.norm(p0 - s[0, :2]) >= MIN_SPAWN_GAP for s in states_list):
                states_list.append(states)
                tags.append(tag)
                placed = True
                break
        if not placed:
            raise PlacementError(
                f"could not place agent {len(states_list)} without overlap"
            )

    traj = np.zeros((MAX_AGENTS, T_STEPS, 5))
    valid = np.zeros((MAX_AGENTS, T_STEPS), dtype=bool)
    for i, states in enumerate(states_list):
        traj[i] = states
        valid[i] = True

    lane_map = generate_map(spec)
    ego_xy = traj[0, 0, :2]
    lanes = _sort_lanes(lane_map.lanes.copy(), ego_xy)

    return Scenario(
        trajectories=traj,
        valid=valid,
        lane_map=LaneMap(lanes, lane_map.lane_width),
        scene_id=f"syn-{spec.layout}-{spec.seed:08d}",
        tags=tuple(tags),
    )


# --------------------------------------------------------------------------
# Datasets.

def dataset_specs(spec: WorldSpec, n: int, mixed: bool = False) -> list[WorldSpec]:
    """Per-scenario specs with seeds ``seed+i``.

    With ``mixed=True`` the layout cycles between straight roads and
    intersections and each scenario concentrates its behavior mix on one
    dominant tag, which makes scenario-level tags informative for retrieval.
    """
    if not mixed:
        return [replace(spec, seed=spec.seed + i) for i in range(n)]
    layouts = ("straight-road", "intersection")
    specs = []
    for i in range(n):
        layout = layouts[i % len(layouts)]
        allowed = _allowed_tags(layout, spec.speed_range[0])
        dominant = allowed[(i // len(layouts)) % len(allowed)]
        mix = {dominant: 0.75, "straight": 0.15, "stop": 0.10}
        if dominant == "straight":
            mix = {"straight": 0.85, "stop": 0.15}
        n_agents = min(spec.n_agents, 2 + (spec.seed + i) % max(1, spec.n_agents - 1))
        specs.append(replace(spec, seed=spec.seed + i, layout=layout,
                             behavior_mix=mix, n_agents=n_agents))
    return specs


def generate_dataset(spec: WorldSpec, n: int, out_dir, mixed: bool = False):
    """Write ``scenarios.jsonl`` and the ``tags.jsonl`` manifest; returns both paths."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenarios = [generate_scenario(s) for s in dataset_specs(spec, n, mixed=mixed)]
    scen_path = out_dir / "scenarios.jsonl"
    manifest_path = out_dir / "tags.jsonl"
    write_scenarios(scen_path, scenarios)
    with manifest_path.open("w", encoding="utf-8") as fh:
        for s in scenarios:
            rec = {"scene_id": s.scene_id, "tags": [[t] for t in s.tags]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return scen_path, manifest_path


def read_tag_manifest(path) -> dict[str, list[list[str]]]:
    out = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["scene_id"]] = rec["tags"]
    return out


# --------------------------------------------------------------------------
# Drivable area.

def _segment_distances(lanes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Min distance from each point to any lane centerline segment, ``[N]``."""
    if lanes.shape[0] == 0:
        return np.full(points.shape[0], np.inf)
    a = lanes[:, :-1, :2].reshape(-1, 2)
    b = lanes[:, 1:, :2].reshape(-1, 2)
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(points[:, None, :] - proj, axis=2)
    return d.min(axis=1)


def drivable_mask(lane_map: LaneMap, points: np.ndarray) -> np.ndarray:
    """True for points within half a lane width of a centerline (closed boundary)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _segment_distances(lane_map.lanes, points) <= lane_map.lane_width / 2.0


def in_drivable(lane_map: LaneMap, point) -> bool:
    return bool(drivable_mask(lane_map, np.asarray(point, dtype=np.float64))[0])


def heading_change(states: np.ndarray, valid: np.ndarray) -> float:
    """Unwrapped heading delta between the first and last valid step of one agent."""
    idx = np.flatnonzero(valid)
    if idx.size < 2:
        return 0.0
    angles = np.arctan2(states[idx, 4], states[idx, 3])
    unwrapped = np.unwrap(angles)
    return float(unwrapped[-1] - unwrapped[0])
