"""Track and signal ingestion, resampling and scene windowing.

Track CSV columns: ``agent_id,frame_id,agent_type,length,width,x,y,vx,vy,ax,ay``
(SI units, frame ids at the source rate). Extra columns such as heading are
ignored. Signal CSV is either ``frame_id,code`` or the per-direction variant
``frame_id,north,south,east,west``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AgentClassError,
    ConfigError,
    CoverageError,
    DataError,
    ParseError,
    SchemaError,
    SignalCodeError,
    SignalConflictError,
)

TRACK_COLUMNS = ("agent_id", "frame_id", "agent_type", "length", "width", "x", "y", "vx", "vy", "ax", "ay")
SOURCE_FPS = 30
MAX_SPEED = 40.0


class AgentClass(enum.Enum):
    CAR = "car"
    BUS = "bus"
    TRUCK = "truck"
    MOTORCYCLE = "motorcycle"
    BICYCLE = "bicycle"
    TRICYCLE = "tricycle"
    PEDESTRIAN = "pedestrian"

    @classmethod
    def parse(cls, label):
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            raise AgentClassError(f"unknown agent class {label!r}") from None

    @property
    def index(self):
        return _CLASS_INDEX[self]


_CLASS_INDEX = {c: k for k, c in enumerate(AgentClass)}
CLASS_BY_INDEX = list(AgentClass)


# Table of (north, south, east, west) light colours to joint signal code.
SIGNAL_TABLE = {
    1: ("green", "green", "red", "red"),
    2: ("yellow", "yellow", "red", "red"),
    3: ("red", "red", "red", "red"),
    4: ("red", "red", "green", "green"),
    5: ("red", "red", "yellow", "yellow"),
}
_CODE_BY_LIGHTS = {v: k for k, v in SIGNAL_TABLE.items()}
SIGNAL_CODES = tuple(SIGNAL_TABLE)


def code_from_directions(north, south, east, west):
    key = tuple(s.strip().lower() for s in (north, south, east, west))
    try:
        return _CODE_BY_LIGHTS[key]
    except KeyError:
        raise SignalCodeError(f"light combination {key} has no signal code") from None


def validate_code(code):
    if code not in SIGNAL_TABLE:
        raise SignalCodeError(f"signal code {code!r} not in 1..5")
    return code


# ---------------------------------------------------------------- tracks


@dataclass(eq=False)
class AgentTrack:
    """One road user. ``states`` columns are x, y, vx, vy, ax, ay."""

    agent_id: str
    agent_class: AgentClass
    length: float
    width: float
    frame_ids: np.ndarray
    states: np.ndarray
    frame_step: int = 1

    def __post_init__(self):
        self.frame_ids = np.asarray(self.frame_ids, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1, 6)
        if len(self.frame_ids) != len(self.states):
            raise DataError(f"agent {self.agent_id}: {len(self.frame_ids)} frame ids vs {len(self.states)} states")
        if len(self.frame_ids) > 1 and np.any(np.diff(self.frame_ids) <= 0):
            raise DataError(f"agent {self.agent_id}: frame ids not strictly increasing")

    def __len__(self):
        return len(self.frame_ids)

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.agent_class == other.agent_class
            and self.length == other.length
            and self.width == other.width
            and self.frame_step == other.frame_step
            and np.array_equal(self.frame_ids, other.frame_ids)
            and np.array_equal(self.states, other.states)
        )

    @property
    def positions(self):
        return self.states[:, 0:2]

    @property
    def velocities(self):
        return self.states[:, 2:4]

    @property
    def accelerations(self):
        return self.states[:, 4:6]


def _text(data):
    if isinstance(data, (bytes, bytearray)):
        return data.decode("utf-8-sig")
    return data


def _float(raw, column, line):
    try:
        val = float(raw)
    except ValueError:
        raise ParseError(f"column {column!r}: {raw!r} is not a number", line) from None
    if not math.isfinite(val):
        raise ParseError(f"column {column!r}: non-finite value {raw!r}", line)
    return val


def _int(raw, column, line):
    try:
        return int(raw)
    except ValueError:
        pass
    val = _float(raw, column, line)
    if val != int(val):
        raise ParseError(f"column {column!r}: {raw!r} is not an integer", line)
    return int(val)


def parse_tracks(data):
    """Parse a track CSV into one :class:`AgentTrack` per agent, in first-seen order."""
    reader = csv.reader(io.StringIO(_text(data)))
    header = next(reader, None)
    if header is None:
        raise SchemaError("track file is empty (no header)")
    header = [h.strip() for h in header]
    for col in TRACK_COLUMNS:
        if col not in header:
            raise SchemaError(f"track file missing column {col!r}")
    pos = {col: header.index(col) for col in TRACK_COLUMNS}
    groups = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        agent_id = row[pos["agent_id"]].strip()
        cls = AgentClass.parse(row[pos["agent_type"]])
        frame = _int(row[pos["frame_id"]], "frame_id", line)
        dims = []
        for col in ("length", "width"):
            raw = row[pos[col]].strip()
            if raw == "" and cls is AgentClass.PEDESTRIAN:
                dims.append(0.0)
            else:
                dims.append(_float(raw, col, line))
        if cls is not AgentClass.PEDESTRIAN and (dims[0] <= 0 or dims[1] <= 0):
            raise ParseError(f"agent {agent_id}: non-positive dimensions {dims}", line)
        state = [_float(row[pos[c]], c, line) for c in ("x", "y", "vx", "vy", "ax", "ay")]
        if math.hypot(state[2], state[3]) >= MAX_SPEED:
            raise ParseError(f"agent {agent_id}: speed {math.hypot(state[2], state[3]):.1f} m/s exceeds bound", line)
        g = groups.get(agent_id)
        if g is None:
            g = groups[agent_id] = {"cls": cls, "dims": dims, "rows": []}
        elif g["cls"] is not cls:
            raise ParseError(f"agent {agent_id}: class changes from {g['cls'].value} to {cls.value}", line)
        g["rows"].append((frame, line, state))
    tracks = []
    for agent_id, g in groups.items():
        rows = sorted(g["rows"], key=lambda r: r[0])
        frames = [r[0] for r in rows]
        for a, b in zip(rows, rows[1:]):
            if a[0] == b[0]:
                raise ParseError(f"agent {agent_id}: duplicate frame {a[0]}", b[1])
        tracks.append(
            AgentTrack(agent_id, g["cls"], g["dims"][0], g["dims"][1], frames, [r[2] for r in rows])
        )
    return tracks


def serialize_tracks(tracks):
    """Render tracks as CSV bytes, rows ordered by frame then agent id."""
    rows = []
    for t in tracks:
        for f, s in zip(t.frame_ids.tolist(), t.states.tolist()):
            rows.append((f, t.agent_id, t, s))
    rows.sort(key=lambda r: (r[0], r[1]))
    out = io.StringIO()
    out.write(",".join(TRACK_COLUMNS) + "\n")
    for f, _, t, s in rows:
        out.write(
            f"{t.agent_id},{f},{t.agent_class.value},{t.length!r},{t.width!r},"
            + ",".join(repr(v) for v in s)
            + "\n"
        )
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------- signals


@dataclass
class SignalTimeline:
    """Signal codes keyed by source frame.

    Each entry holds from its frame until the next entry; the timeline covers
    ``[first frame, last frame]``.
    """

    frames: list
    codes: list

    def __post_init__(self):
        if len(self.frames) != len(self.codes):
            raise DataError("signal frames and codes differ in length")

    @classmethod
    def from_mapping(cls, mapping):
        items = sorted(mapping.items())
        return cls([f for f, _ in items], [validate_code(c) for _, c in items])

    def as_dict(self):
        return dict(zip(self.frames, self.codes))

    @property
    def first_frame(self):
        return self.frames[0] if self.frames else None

    @property
    def last_frame(self):
        return self.frames[-1] if self.frames else None

    def covers(self, frame):
        return bool(self.frames) and self.frames[0] <= frame <= self.frames[-1]

    def code_at(self, frame):
        if not self.covers(frame):
            raise CoverageError(f"no signal code for frame {frame}")
        return self.codes[bisect_right(self.frames, frame) - 1]

    def __len__(self):
        return len(self.frames)


def parse_signals(data):
    reader = csv.reader(io.StringIO(_text(data)))
    header = next(reader, None)
    if header is None:
        raise SchemaError("signal file is empty (no header)")
    header = [h.strip().lower() for h in header]
    if "frame_id" not in header:
        raise SchemaError("signal file missing column 'frame_id'")
    fi = header.index("frame_id")
    if "code" in header:
        ci = header.index("code")
        directions = None
    else:
        for col in ("north", "south", "east", "west"):
            if col not in header:
                raise SchemaError(f"signal file missing column 'code' (or per-direction column {col!r})")
        directions = [header.index(c) for c in ("north", "south", "east", "west")]
    mapping = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        frame = _int(row[fi], "frame_id", line)
        if directions is None:
            code = _int(row[ci], "code", line)
            if code not in SIGNAL_TABLE:
                raise SignalCodeError(f"line {line}: signal code {code} not in 1..5")
        else:
            try:
                code = code_from_directions(*(row[k] for k in directions))
            except SignalCodeError as exc:
                raise SignalCodeError(f"line {line}: {exc}") from None
        prev = mapping.get(frame)
        if prev is not None and prev != code:
            raise SignalConflictError(f"line {line}: frame {frame} has codes {prev} and {code}")
        mapping[frame] = code
    return SignalTimeline.from_mapping(mapping)


def serialize_signals(timeline):
    out = io.StringIO()
    out.write("frame_id,code\n")
    for f, c in zip(timeline.frames, timeline.codes):
        out.write(f"{f},{c}\n")
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------- resampling


def resample(track, step):
    """Keep every ``step``-th sample of ``track``.

    Frame ids stay in source units; a frame is kept when it is a multiple of
    ``step * track.frame_step``, so resampling composes multiplicatively.
    """
    if step < 1:
        raise ConfigError(f"resample step must be >= 1, got {step}")
    if step == 1:
        return track
    new_step = step * track.frame_step
    keep = track.frame_ids % new_step == 0
    return replace(track, frame_ids=track.frame_ids[keep], states=track.states[keep], frame_step=new_step)


# ---------------------------------------------------------------- windows


@dataclass(eq=False)
class SceneWindow:
    """Aligned observation + prediction window over every fully covered agent.

    Arrays are indexed ``[agent, step]``; positions are absolute unless
    ``normalized`` is set, in which case each agent's positions are relative to
    its ``anchor`` (absolute last observed position, always retained).
    """

    obs_len: int
    pred_len: int
    agent_ids: list
    classes: np.ndarray
    dims: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    signals: np.ndarray
    is_target: np.ndarray
    anchor: np.ndarray
    start_frame: int = 0
    frame_step: int = 1
    normalized: bool = False
    source: str = ""

    @property
    def n_agents(self):
        return len(self.agent_ids)

    @property
    def seq_len(self):
        return self.obs_len + self.pred_len

    @property
    def frames(self):
        return [self.start_frame + k * self.frame_step for k in range(self.seq_len)]

    @property
    def obs_positions(self):
        return self.positions[:, : self.obs_len]

    @property
    def future_positions(self):
        return self.positions[:, self.obs_len :]

    @property
    def absolute_positions(self):
        if self.normalized:
            return self.positions + self.anchor[:, None, :]
        return self.positions

    @property
    def last_velocity(self):
        return self.velocities[:, self.obs_len - 1]

    @property
    def final_observed_code(self):
        return int(self.signals[self.obs_len - 1])

    def validate(self):
        n, L = self.n_agents, self.seq_len
        if n < 1:
            raise DataError("window has no agents")
        for name in ("positions", "velocities", "accelerations"):
            if getattr(self, name).shape != (n, L, 2):
                raise DataError(f"window {name} shape {getattr(self, name).shape} != {(n, L, 2)}")
        if self.signals.shape != (L,):
            raise DataError(f"window signal sequence length {self.signals.shape} != {L}")
        return self

    def subset(self, rows):
        rows = np.asarray(rows)
        return replace(
            self,
            agent_ids=[self.agent_ids[k] for k in rows],
            classes=self.classes[rows],
            dims=self.dims[rows],
            positions=self.positions[rows],
            velocities=self.velocities[rows],
            accelerations=self.accelerations[rows],
            is_target=self.is_target[rows],
            anchor=self.anchor[rows],
        )

    def translated(self, offset):
        """Copy with every absolute coordinate shifted by ``offset``."""
        offset = np.asarray(offset, dtype=np.float64)
        positions = self.positions if self.normalized else self.positions + offset
        return replace(self, positions=positions, anchor=self.anchor + offset)


def _runs(samples):
    """Maximal runs of consecutive integers as (start, end_inclusive) pairs."""
    if len(samples) == 0:
        return []
    breaks = np.nonzero(np.diff(samples) != 1)[0]
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [len(samples) - 1]])
    return [(int(samples[s]), int(samples[e])) for s, e in zip(starts, ends)]


def make_windows(
    tracks,
    signals,
    obs_len=12,
    pred_len=12,
    stride=12,
    include_pedestrians=False,
    source="",
):
    """Slice resampled tracks into scene windows.

    Window offsets start at the earliest sample and advance by ``stride``
    samples. An agent joins a window only when it has every sample of it;
    windows without a prediction target are skipped.
    """
    if obs_len < 1 or pred_len < 1 or stride < 1:
        raise ConfigError("obs_len, pred_len and stride must be >= 1")
    tracks = [t for t in tracks if len(t)]
    if not tracks:
        return []
    steps = {t.frame_step for t in tracks}
    if len(steps) != 1:
        raise DataError(f"tracks have mixed frame steps {sorted(steps)}")
    base = steps.pop()
    L = obs_len + pred_len
    samples = []
    for t in tracks:
        if np.any(t.frame_ids % base):
            raise DataError(f"agent {t.agent_id}: frames not aligned to step {base}")
        samples.append(t.frame_ids // base)
    origin = int(min(s[0] for s in samples))
    members = {}
    for k, s in enumerate(samples):
        for lo, hi in _runs(s):
            last_offset = hi - L + 1
            if last_offset < lo:
                continue
            first = origin + -(-(lo - origin) // stride) * stride
            for off in range(first, last_offset + 1, stride):
                members.setdefault(off, []).append(k)
    windows = []
    for off in sorted(members):
        agents = members[off]
        target = np.array(
            [include_pedestrians or tracks[k].agent_class is not AgentClass.PEDESTRIAN for k in agents]
        )
        if not target.any():
            continue
        codes = np.array([signals.code_at((off + j) * base) for j in range(L)], dtype=np.int64)
        block = np.stack(
            [tracks[k].states[np.searchsorted(samples[k], off) :][:L] for k in agents]
        )
        positions = block[:, :, 0:2].copy()
        windows.append(
            SceneWindow(
                obs_len=obs_len,
                pred_len=pred_len,
                agent_ids=[tracks[k].agent_id for k in agents],
                classes=np.array([tracks[k].agent_class.index for k in agents], dtype=np.int64),
                dims=np.array([[tracks[k].length, tracks[k].width] for k in agents]),
                positions=positions,
                velocities=block[:, :, 2:4].copy(),
                accelerations=block[:, :, 4:6].copy(),
                signals=codes,
                is_target=target,
                anchor=positions[:, obs_len - 1].copy(),
                start_frame=off * base,
                frame_step=base,
                source=source,
            )
        )
    return windows


@dataclass
class NormalizationTransform:
    """Per-agent translation by the last observed position."""

    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def apply(self, positions):
        return positions - self.anchors[:, None, :]

    def invert(self, positions):
        return positions + self.anchors[:, None, :]


def normalize(window):
    if window.normalized:
        return window, NormalizationTransform(window.anchor.copy())
    tf = NormalizationTransform(window.positions[:, window.obs_len - 1].copy())
    out = replace(window, positions=tf.apply(window.positions), anchor=tf.anchors.copy(), normalized=True)
    return out, tf


def denormalize(window, transform):
    if not window.normalized:
        return window
    return replace(window, positions=transform.invert(window.positions), normalized=False)


# ---------------------------------------------------------------- datasets


def load_recording(data_dir, step=15):
    """Read ``tracks.csv`` and ``signals.csv`` from a directory and resample."""
    d = Path(data_dir)
    track_path, signal_path = d / "tracks.csv", d / "signals.csv"
    for p in (track_path, signal_path):
        if not p.is_file():
            raise DataError(f"missing input file {p}")
    tracks = [resample(t, step) for t in parse_tracks(track_path.read_bytes())]
    return tracks, parse_signals(signal_path.read_bytes())


def load_windows(data_dir, obs_len=12, pred_len=12, stride=12, step=15, include_pedestrians=False):
    tracks, signals = load_recording(data_dir, step)
    windows = make_windows(tracks, signals, obs_len, pred_len, stride, include_pedestrians, source=str(data_dir))
    return [normalize(w)[0] for w in windows]
