"""Synthetic four-way signalized intersection emitting track/signal CSVs.

Geometry (right-hand traffic, intersection centred on the origin): each
approach lane runs 1.75 m right of the road axis, the stop bar sits 12 m from
the centre, turns are quarter circles tangent to the approach and exit lanes.
Vehicles move along their path with piecewise-constant acceleration updated
at 30 fps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import (
    AgentClass,
    AgentTrack,
    SignalTimeline,
    parse_signals,
    parse_tracks,
    serialize_signals,
    serialize_tracks,
)
from .errors import ConfigError

FPS = 30
DT = 1.0 / FPS
LANE_OFFSET = 1.75
STOP_BAR = 12.0
STOP_MARGIN = 1.0
APPROACH_LENGTH = 80.0
EXIT_LENGTH = 50.0
TURN_SPEED = 6.0
TIME_GAP = 1.5
MIN_GAP = 2.0
MAX_DECEL = 5.0

APPROACHES = {
    "northbound": (0.0, 1.0),
    "southbound": (0.0, -1.0),
    "eastbound": (1.0, 0.0),
    "westbound": (-1.0, 0.0),
}
AXIS = {"northbound": "ns", "southbound": "ns", "eastbound": "ew", "westbound": "ew"}
GREEN = {"ns": {1}, "ew": {4}}
YELLOW = {"ns": {2}, "ew": {5}}
RED = {"ns": {3, 4, 5}, "ew": {1, 2, 3}}

# nominal length, width (m) and acceleration cap (m/s^2)
CLASS_SPECS = {
    AgentClass.CAR: (4.6, 1.8, 2.5),
    AgentClass.TRUCK: (7.5, 2.4, 1.5),
    AgentClass.BUS: (11.0, 2.5, 1.2),
    AgentClass.MOTORCYCLE: (2.0, 0.8, 3.0),
    AgentClass.BICYCLE: (1.8, 0.6, 1.0),
    AgentClass.TRICYCLE: (2.5, 1.2, 1.0),
}

# Phase order; code 3 (all red) sits between every change of axis.
CYCLE = (1, 2, 3, 4, 5, 3)


@dataclass
class ScenarioConfig:
    seed: int = 0
    agents_per_approach: int = 10
    approaches: tuple = ("northbound", "southbound", "eastbound", "westbound")
    green_s: float = 15.0
    yellow_s: float = 3.0
    all_red_s: float = 2.0
    initial_code: int = 1
    speed_range: tuple = (8.0, 13.0)
    comfortable_decel: float = 2.5
    class_mix: dict = field(
        default_factory=lambda: {"car": 0.7, "truck": 0.1, "bus": 0.1, "motorcycle": 0.1}
    )
    turn_mix: dict = field(default_factory=lambda: {"straight": 0.6, "left": 0.2, "right": 0.2})
    duration_s: float = 120.0
    spawn_times: tuple = ()

    def validate(self):
        for name in ("green_s", "yellow_s", "all_red_s", "duration_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.agents_per_approach < 0:
            raise ConfigError("agents_per_approach must be >= 0")
        for a in self.approaches:
            if a not in APPROACHES:
                raise ConfigError(f"unknown approach {a!r}")
        if self.initial_code not in CYCLE:
            raise ConfigError(f"initial_code must be in 1..5, got {self.initial_code}")
        lo, hi = self.speed_range
        if not 0 < lo <= hi < 40:
            raise ConfigError(f"speed_range must satisfy 0 < lo <= hi < 40, got {self.speed_range}")
        if not 0 < self.comfortable_decel <= MAX_DECEL:
            raise ConfigError(f"comfortable_decel must be in (0, {MAX_DECEL}]")
        for name, mix, allowed in (
            ("class_mix", self.class_mix, {c.value for c in CLASS_SPECS}),
            ("turn_mix", self.turn_mix, {"straight", "left", "right"}),
        ):
            if any(k not in allowed for k in mix):
                raise ConfigError(f"{name} has unknown keys {sorted(set(mix) - allowed)}")
            if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
                raise ConfigError(f"{name} proportions must be non-negative and sum to 1")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("approaches", "speed_range", "spawn_times"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario config keys {sorted(unknown)}")
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- signals


def signal_codes(config, n_frames):
    """Per-frame signal code array following the fixed cycle."""
    durations = {1: config.green_s, 2: config.yellow_s, 4: config.green_s, 5: config.yellow_s}
    phase_frames = [max(1, round(durations.get(c, config.all_red_s) * FPS)) for c in CYCLE]
    start = CYCLE.index(config.initial_code)
    codes = np.empty(n_frames, dtype=np.int64)
    k, left = start, phase_frames[start]
    for f in range(n_frames):
        codes[f] = CYCLE[k]
        left -= 1
        if left == 0:
            k = (k + 1) % len(CYCLE)
            left = phase_frames[k]
    return codes


# ---------------------------------------------------------------- geometry


class LanePath:
    """Arc-length parameterised path from spawn point to exit."""

    def __init__(self, approach, turn):
        self.approach = approach
        self.turn = turn
        d = np.array(APPROACHES[approach])
        r = np.array([d[1], -d[0]])
        self.d, self.r = d, r
        self.start = -(STOP_BAR + APPROACH_LENGTH) * d + LANE_OFFSET * r
        self.bar_s = APPROACH_LENGTH
        if turn == "straight":
            self.radius = None
            self.arc_len = 0.0
            self.exit_dir = d
            self.exit_start = -STOP_BAR * d + LANE_OFFSET * r
            self.length = APPROACH_LENGTH + 2 * STOP_BAR + EXIT_LENGTH
        else:
            sign = 1.0 if turn == "right" else -1.0
            self.radius = STOP_BAR - sign * LANE_OFFSET
            self.center = -STOP_BAR * d + sign * STOP_BAR * r
            self.sign = sign
            self.arc_len = self.radius * math.pi / 2
            self.exit_dir = sign * r
            self.exit_start = self.center + self.radius * d
            self.length = APPROACH_LENGTH + self.arc_len + EXIT_LENGTH

    def pose(self, s, v, a):
        """Position, velocity and acceleration vectors at arc length ``s``."""
        if s <= self.bar_s or self.radius is None:
            p = self.start + s * self.d
            return p, v * self.d, a * self.d
        u = s - self.bar_s
        if u <= self.arc_len:
            th = u / self.radius
            c, sn = math.cos(th), math.sin(th)
            p = self.center + self.radius * (-self.sign * c * self.r + sn * self.d)
            t = self.sign * sn * self.r + c * self.d
            inward = (self.center - p) / self.radius
            return p, v * t, a * t + (v * v / self.radius) * inward
        w = u - self.arc_len
        return self.exit_start + w * self.exit_dir, v * self.exit_dir, a * self.exit_dir


# ---------------------------------------------------------------- vehicles


@dataclass
class KinematicState:
    """Longitudinal state along a path: arc length, speed, acceleration."""

    s: float
    v: float
    a: float = 0.0
    path: str = "straight"


@dataclass
class _Vehicle:
    agent_id: str
    agent_class: AgentClass
    length: float
    width: float
    a_max: float
    v_des: float
    path: LanePath
    state: KinematicState
    committed: bool = False
    frames: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def stopping_accel(v, dist):
    """Constant acceleration that brings speed ``v`` to rest over ``dist`` metres."""
    if dist <= 1e-9:
        return -MAX_DECEL if v > 0 else 0.0
    return -v * v / (2.0 * dist)


def _target_accel(v, target, dist):
    """Constant acceleration reaching speed ``target`` after ``dist`` metres (v > target)."""
    if dist <= 1e-9:
        return -MAX_DECEL
    return -(v * v - target * target) / (2.0 * dist)


def _choose_accel(veh, leader, code, config):
    st = veh.state
    v, s = st.v, st.s
    path = veh.path
    b_c = config.comfortable_decel
    on_arc = path.radius is not None and path.bar_s < s <= path.bar_s + path.arc_len
    v_cap = min(veh.v_des, TURN_SPEED) if on_arc else veh.v_des
    if v < v_cap:
        a = min(veh.a_max, (v_cap - v) / DT)
    else:
        a = max(-b_c, (v_cap - v) / DT)

    # slow to the turning speed by the start of the arc
    if path.radius is not None and s < path.bar_s and v > TURN_SPEED:
        d = path.bar_s - s
        coast = d - v * DT
        if coast <= 0 or (v * v - TURN_SPEED**2) / (2 * coast) > b_c:
            a = min(a, _target_accel(v, TURN_SPEED, d))

    # signal: stop before the bar unless green or committed
    axis = AXIS[path.approach]
    if s < path.bar_s and code not in GREEN[axis] and not veh.committed:
        d = path.bar_s - STOP_MARGIN - s
        if v <= 1e-9 and d < 0.5:
            a = min(a, 0.0)
        else:
            coast = d - v * DT
            if coast <= 0 or v * v / (2 * coast) > b_c:
                a = min(a, stopping_accel(v, d))

    if leader is not None:
        ls = leader.state
        gap = (ls.s - s) - 0.5 * (leader.length + veh.length)
        a_follow = 0.3 * (gap - MIN_GAP - TIME_GAP * v) + 0.9 * (ls.v - v)
        if v > ls.v:
            a_follow = min(a_follow, -(v * v - ls.v * ls.v) / (2.0 * max(gap - MIN_GAP, 0.1)))
        if gap - MIN_GAP < 0.5 and v <= ls.v:
            a_follow = min(a_follow, 0.0)
        a = min(a, a_follow)

    a = max(-MAX_DECEL, min(a, veh.a_max))
    if v + a * DT < 0:
        a = -v / DT
    return a


def _update_commit(veh, code):
    """At a non-green light, commit when a stop before the bar needs more than the maximum decel."""
    st, path = veh.state, veh.path
    axis = AXIS[path.approach]
    if veh.committed or st.s >= path.bar_s or code in GREEN[axis]:
        return
    if code in YELLOW[axis]:
        d = path.bar_s - st.s
        if st.v * st.v > 2 * MAX_DECEL * d:
            veh.committed = True


def _emit(veh, frame, s_next, v_next):
    """Record the state at ``frame``; acceleration is the mean over the coming frame interval."""
    st = veh.state
    p, vel, _ = veh.path.pose(st.s, st.v, st.a)
    _, vel_next, _ = veh.path.pose(s_next, v_next, st.a)
    acc = (vel_next - vel) / DT
    veh.frames.append(frame)
    veh.rows.append(
        [round(float(p[0]), 4), round(float(p[1]), 4), round(float(vel[0]), 4), round(float(vel[1]), 4),
         round(float(acc[0]), 4), round(float(acc[1]), 4)]
    )


def _draw(rng, mix):
    keys = list(mix)
    probs = np.array([mix[k] for k in keys], dtype=np.float64)
    return keys[int(rng.choice(len(keys), p=probs / probs.sum()))]


def simulate_tracks(config):
    """Run the scenario and return ``(tracks, signal timeline)`` in memory."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_frames = int(round(config.duration_s * FPS))
    codes = signal_codes(config, n_frames)

    pending = {}
    counter = 0
    for approach in config.approaches:
        if config.spawn_times:
            times = sorted(config.spawn_times)[: config.agents_per_approach]
        else:
            times = np.sort(rng.uniform(0.0, config.duration_s, size=config.agents_per_approach)).tolist()
        specs = []
        for t in times:
            cls = AgentClass(_draw(rng, config.class_mix))
            length, width, a_max = CLASS_SPECS[cls]
            jitter = rng.uniform(0.95, 1.05, size=2)
            turn = _draw(rng, config.turn_mix)
            v_des = float(rng.uniform(*config.speed_range))
            counter += 1
            specs.append(
                dict(
                    frame=int(math.ceil(t * FPS - 1e-9)),
                    agent_id=f"{counter}",
                    agent_class=cls,
                    length=round(float(length * jitter[0]), 3),
                    width=round(float(width * jitter[1]), 3),
                    a_max=a_max,
                    v_des=v_des,
                    turn=turn,
                )
            )
        pending[approach] = specs

    lanes = {a: [] for a in config.approaches}
    finished = []
    for frame in range(n_frames):
        code = int(codes[frame])
        # spawn
        for approach in config.approaches:
            queue = pending[approach]
            if not queue or queue[0]["frame"] > frame:
                continue
            entry = queue[0]
            lane = lanes[approach]
            v0 = entry["v_des"]
            if lane:
                last = lane[-1]
                gap = last.state.s - 0.5 * (last.length + entry["length"])
                if gap < MIN_GAP + 3.0:
                    continue
                v0 = min(v0, last.state.v, max(0.0, (gap - MIN_GAP) / TIME_GAP))
            queue.pop(0)
            lane.append(
                _Vehicle(
                    agent_id=entry["agent_id"],
                    agent_class=entry["agent_class"],
                    length=entry["length"],
                    width=entry["width"],
                    a_max=entry["a_max"],
                    v_des=entry["v_des"],
                    path=LanePath(approach, entry["turn"]),
                    state=KinematicState(0.0, v0, 0.0, entry["turn"]),
                )
            )
        # choose accelerations from the current snapshot
        for approach in config.approaches:
            lane = lanes[approach]
            for k, veh in enumerate(lane):
                _update_commit(veh, code)
                leader = None
                for j in range(k - 1, -1, -1):
                    cand = lane[j]
                    if cand.state.s < cand.path.bar_s or cand.path.turn == veh.path.turn:
                        leader = cand
                        break
                veh.state.a = _choose_accel(veh, leader, code, config)
        # emit the current state, then integrate the step
        for approach in config.approaches:
            keep = []
            for veh in lanes[approach]:
                st = veh.state
                s_next = st.s + st.v * DT + 0.5 * st.a * DT * DT
                v_next = max(0.0, st.v + st.a * DT)
                _emit(veh, frame, s_next, v_next)
                st.s, st.v = s_next, v_next
                if st.s > veh.path.length:
                    finished.append(veh)
                else:
                    keep.append(veh)
            lanes[approach] = keep
    finished.extend(v for a in config.approaches for v in lanes[a])
    finished.sort(key=lambda v: int(v.agent_id))
    tracks = [
        AgentTrack(v.agent_id, v.agent_class, v.length, v.width, v.frames, v.rows)
        for v in finished
        if v.frames
    ]
    timeline = SignalTimeline(list(range(n_frames)), [int(c) for c in codes])
    return tracks, timeline


def simulate(config):
    """Return ``(track CSV bytes, signal CSV bytes)`` for ``config``."""
    tracks, timeline = simulate_tracks(config)
    return serialize_tracks(tracks), serialize_signals(timeline)


# ---------------------------------------------------------------- label check


@dataclass
class LabelReport:
    vehicles: int = 0
    crossings: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def _approach_of(x, y):
    if abs(y) >= abs(x):
        return "northbound" if y < 0 else "southbound"
    return "eastbound" if x < 0 else "westbound"


def label_check(track_csv, signal_csv):
    """Flag vehicles whose first stop-bar crossing happens while their axis is red.

    Uses the simulator's geometry: the approach is inferred from the first
    recorded position and the bar sits ``STOP_BAR`` metres before the centre.
    """
    tracks = parse_tracks(track_csv) if isinstance(track_csv, (bytes, str)) else track_csv
    signals = parse_signals(signal_csv) if isinstance(signal_csv, (bytes, str)) else signal_csv
    report = LabelReport()
    for t in tracks:
        if t.agent_class is AgentClass.PEDESTRIAN or len(t) < 2:
            continue
        report.vehicles += 1
        x0, y0 = t.positions[0]
        approach = _approach_of(x0, y0)
        d = np.array(APPROACHES[approach])
        along = t.positions @ d
        crossed = np.nonzero((along[:-1] < -STOP_BAR) & (along[1:] >= -STOP_BAR))[0]
        if crossed.size == 0:
            continue
        report.crossings += 1
        frame = int(t.frame_ids[crossed[0] + 1])
        if not signals.covers(frame):
            continue
        code = signals.code_at(frame)
        if code in RED[AXIS[approach]]:
            report.violations.append((t.agent_id, frame, code))
    return report
