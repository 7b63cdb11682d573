"""On-disk formats, loaders, ground truth, segmentation and synthetic corpora.

Seconds are 0-based: label ``l[t]`` covers video time ``[t, t + 1)``.

File formats
------------
pose (``.jsonl``)
    One JSON object per frame::

        {"f": 12, "t": 0.6, "players": [{"vis": true, "joints": [[x, y, z], ...]}, ...]}

    Joint order is :data:`JOINTS_3D` for 3D tracks and :data:`JOINTS_2D` for 2D
    tracks. A player missing from ``players`` (or with ``"vis": false``) is
    invisible in that frame. A ``null`` joint of a visible player is a tracker
    dropout and carries forward the last observed position.
holistic (``.csv``)
    Headerless; row ``t`` is segment ``t``'s feature vector.
annotations (``.csv``)
    Header ``annotator_id,group,s0,...,s{T-1}``; one row per annotator with
    group ``E`` or ``NE`` and one 0/1 mark per second.
labels / EDL (``.csv``)
    Header ``start_sec,end_sec``; one half-open interval per row.
raw descriptors (``.csv``)
    Headerless; ``segment_index,d0,d1,...`` with any number of rows per segment.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

JOINTS_3D = (
    "head", "neck", "torso",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
)
JOINTS_2D = tuple(j for j in JOINTS_3D if j not in ("neck", "torso"))
NUM_JOINTS = {3: len(JOINTS_3D), 2: len(JOINTS_2D)}

GROUPS = ("E", "NE")
DEFAULT_VOTE_THRESHOLD = 0.4
DEFAULT_TAU = 3


class FormatError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class CoverageError(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"pose track has no frames for seconds {self.missing}")


# ----------------------------------------------------------------- types --

@dataclass
class PoseTrack:
    video_id: str
    dims: int
    frame_index: np.ndarray  # (N,) int
    time_sec: np.ndarray  # (N,)
    coords: np.ndarray  # (N, Q, J, dims), camera coordinates
    visible: np.ndarray  # (N, Q) bool

    @property
    def num_frames(self) -> int:
        return len(self.frame_index)

    @property
    def num_players(self) -> int:
        return self.coords.shape[1]

    @property
    def num_joints(self) -> int:
        return self.coords.shape[2]

    def validate(self) -> "PoseTrack":
        if self.dims not in NUM_JOINTS:
            raise SchemaError(f"dims must be 2 or 3, got {self.dims}")
        if self.num_frames == 0:
            raise SchemaError("pose track has no frames")
        if self.coords.shape[2] != NUM_JOINTS[self.dims] or self.coords.shape[3] != self.dims:
            raise SchemaError(f"expected {NUM_JOINTS[self.dims]} joints of {self.dims} coordinates, "
                              f"got shape {self.coords.shape[2:]}")
        if np.any(np.diff(self.frame_index) <= 0) or np.any(np.diff(self.time_sec) <= 0):
            raise SchemaError("frames must be strictly increasing in index and time")
        return self


@dataclass
class HolisticTrack:
    video_id: str
    feature_kind: str  # BOW400 | RAW4096 | CUSTOM
    vectors: np.ndarray  # (T, D_y); row t belongs to segment t

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def holistic_kind(dim: int) -> str:
    return {400: "BOW400", 4096: "RAW4096"}.get(dim, "CUSTOM")


@dataclass
class AnnotationSet:
    video_id: str
    annotator_ids: list
    groups: list
    marks: np.ndarray  # (annotators, T) of 0/1

    @property
    def duration(self) -> int:
        return self.marks.shape[1]


@dataclass
class LabelTrack:
    video_id: str
    labels: np.ndarray  # (T,) int 0/1
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD

    @property
    def duration(self) -> int:
        return len(self.labels)


@dataclass
class SegmentSet:
    video_id: str
    tau: int
    spans: np.ndarray  # (T, 2) int, half-open second intervals
    frames: list  # per segment: array of row indices into the pose track

    def __len__(self) -> int:
        return len(self.frames)


class HighlightRun(NamedTuple):
    start: int
    end: int

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass
class RawDescriptors:
    video_id: str
    segment_index: np.ndarray  # (M,) int
    vectors: np.ndarray  # (M, D)

    def for_segment(self, t: int) -> np.ndarray:
        return self.vectors[self.segment_index == t]


# --------------------------------------------------------------- loaders --

def load_pose_track(path, dims: int, video_id: str | None = None) -> PoseTrack:
    """Parse and validate a JSON-lines pose file."""
    path = Path(path)
    if dims not in NUM_JOINTS:
        raise SchemaError(f"dims must be 2 or 3, got {dims}")
    J = NUM_JOINTS[dims]
    fidx, times, frames = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                fidx.append(int(obj["f"]))
                times.append(float(obj["t"]))
                players = obj["players"]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            frames.append((lineno, players))
    if not frames:
        raise SchemaError(f"{path}: empty frame list")
    Q = max(len(p) for _, p in frames)
    coords = np.zeros((len(frames), Q, J, dims))
    visible = np.zeros((len(frames), Q), dtype=bool)
    last = np.zeros((Q, J, dims))
    seen = np.zeros((Q, J), dtype=bool)
    for n, (lineno, players) in enumerate(frames):
        for q, player in enumerate(players):
            if not player.get("vis", True):
                continue
            joints = player.get("joints")
            if joints is None or len(joints) != J:
                raise SchemaError(f"{path}:{lineno}: player {q} has "
                                  f"{'no' if joints is None else len(joints)} joints, expected {J}")
            for j, pt in enumerate(joints):
                if pt is None:
                    continue
                if len(pt) != dims:
                    raise SchemaError(f"{path}:{lineno}: joint {j} of player {q} has {len(pt)} coordinates")
                last[q, j] = pt
                seen[q, j] = True
            coords[n, q] = np.where(seen[q][:, None], last[q], 0.0)
            visible[n, q] = True
    track = PoseTrack(video_id or path.stem, dims, np.array(fidx), np.array(times), coords, visible)
    return track.validate()


def save_pose_track(track: PoseTrack, path) -> None:
    with open(path, "w") as fh:
        for n in range(track.num_frames):
            players = []
            for q in range(track.num_players):
                if track.visible[n, q]:
                    players.append({"vis": True, "joints": [[float(v) for v in pt] for pt in track.coords[n, q]]})
                else:
                    players.append({"vis": False})
            fh.write(json.dumps({"f": int(track.frame_index[n]), "t": float(track.time_sec[n]),
                                 "players": players}) + "\n")


def _read_float_rows(path) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return rows


def load_holistic_track(path, video_id: str | None = None) -> HolisticTrack:
    rows = _read_float_rows(path)
    if not rows:
        raise SchemaError(f"{path}: no rows")
    D = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != D:
            raise SchemaError(f"{path}: row {i} has {len(row)} values, first row has {D}")
    return HolisticTrack(video_id or Path(path).stem, holistic_kind(D), np.array(rows, dtype=np.float64))


def save_holistic_track(track: HolisticTrack, path) -> None:
    np.savetxt(path, track.vectors, delimiter=",", fmt="%.17g")


def load_descriptors(path, video_id: str | None = None) -> RawDescriptors:
    rows = _read_float_rows(path)
    if not rows:
        raise SchemaError(f"{path}: no rows")
    D = len(rows[0])
    if any(len(r) != D for r in rows):
        raise SchemaError(f"{path}: rows of differing length")
    arr = np.array(rows)
    return RawDescriptors(video_id or Path(path).stem, arr[:, 0].astype(np.int64), arr[:, 1:].copy())


def save_descriptors(desc: RawDescriptors, path) -> None:
    out = np.column_stack([desc.segment_index.astype(np.float64), desc.vectors])
    with open(path, "w") as fh:
        for row in out:
            fh.write(str(int(row[0])) + "," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")


def load_annotations(path, video_id: str | None = None) -> AnnotationSet:
    ids, groups, marks = [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0] == "annotator_id":
                continue
            if len(row) < 3:
                raise FormatError(f"{path}:{lineno}: expected annotator_id, group and marks")
            if row[1] not in GROUPS:
                raise SchemaError(f"{path}:{lineno}: unknown group {row[1]!r}")
            try:
                m = [int(v) for v in row[2:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if any(v not in (0, 1) for v in m):
                raise SchemaError(f"{path}:{lineno}: marks must be 0 or 1")
            ids.append(row[0])
            groups.append(row[1])
            marks.append(m)
    if not marks:
        raise SchemaError(f"{path}: no annotators")
    T = len(marks[0])
    if any(len(m) != T for m in marks):
        raise SchemaError(f"{path}: annotators disagree on duration")
    return AnnotationSet(video_id or Path(path).stem, ids, groups, np.array(marks, dtype=np.int64))


def save_annotations(ann: AnnotationSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["annotator_id", "group"] + [f"s{t}" for t in range(ann.duration)])
        for aid, g, m in zip(ann.annotator_ids, ann.groups, ann.marks):
            w.writerow([aid, g] + [int(v) for v in m])


def save_runs(runs: Sequence[HighlightRun], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_sec", "end_sec"])
        for r in runs:
            w.writerow([int(r[0]), int(r[1])])


def load_runs(path) -> list[HighlightRun]:
    runs = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0] == "start_sec":
                continue
            try:
                s, e = int(row[0]), int(row[1])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if e <= s:
                raise SchemaError(f"{path}:{lineno}: empty interval [{s}, {e})")
            runs.append(HighlightRun(s, e))
    return runs


def load_labels(path, duration: int, video_id: str | None = None) -> LabelTrack:
    runs = load_runs(path)
    if runs and max(r.end for r in runs) > duration:
        raise SchemaError(f"{path}: interval beyond duration {duration}")
    return LabelTrack(video_id or Path(path).stem, runs_to_labels(runs, duration))


# ---------------------------------------------------------- ground truth --

def aggregate_ground_truth(ann: AnnotationSet, group: str,
                           vote_threshold: float = DEFAULT_VOTE_THRESHOLD) -> LabelTrack:
    """Majority-style vote: a second is interesting when at least
    ``vote_threshold`` of the group's annotators marked it."""
    if not 0.0 < vote_threshold <= 1.0:
        raise ValueError(f"vote_threshold must be in (0, 1], got {vote_threshold}")
    rows = [m for g, m in zip(ann.groups, ann.marks) if g == group]
    if not rows:
        raise ValueError(f"no annotators in group {group!r}")
    counts = np.sum(rows, axis=0)
    # integer comparison avoids 0.4 * 10 rounding below 4
    need = math.ceil(vote_threshold * len(rows) - 1e-9)
    return LabelTrack(ann.video_id, (counts >= need).astype(np.int64), vote_threshold)


# ----------------------------------------------------------- segmentation --

def segment_spans(T: int, tau: int = DEFAULT_TAU) -> np.ndarray:
    if T < 1 or tau < 1:
        raise ValueError("T and tau must be >= 1")
    t = np.arange(T)
    lead = (tau - 1) // 2  # seconds before t; 1 for the default tau = 3
    return np.column_stack([np.maximum(t - lead, 0), np.minimum(t - lead + tau, T)])


def segment_video(pose: PoseTrack, T: int, tau: int = DEFAULT_TAU) -> SegmentSet:
    """One segment per second ``t``, a ``tau``-second window around ``t`` clamped to ``[0, T)``.

    For ``tau = 3`` segment ``t`` spans ``[t - 1, t + 2)``.
    """
    spans = segment_spans(T, tau)
    sec = np.floor(pose.time_sec).astype(np.int64)
    covered = np.zeros(T, dtype=bool)
    inside = (sec >= 0) & (sec < T)
    covered[sec[inside]] = True
    if not covered.all():
        raise CoverageError(np.flatnonzero(~covered).tolist())
    starts = np.searchsorted(pose.time_sec, spans[:, 0], side="left")
    ends = np.searchsorted(pose.time_sec, spans[:, 1], side="left")
    frames = [np.arange(a, b) for a, b in zip(starts, ends)]
    return SegmentSet(pose.video_id, tau, spans, frames)


def extract_highlight_runs(labels) -> list[HighlightRun]:
    lab = np.asarray(labels, dtype=np.int64).ravel()
    if lab.size == 0:
        return []
    padded = np.concatenate([[0], (lab != 0).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return [HighlightRun(int(s), int(e)) for s, e in zip(edges[::2], edges[1::2])]


def runs_to_labels(runs, T: int) -> np.ndarray:
    out = np.zeros(T, dtype=np.int64)
    for s, e in runs:
        out[s:e] = 1
    return out


# -------------------------------------------------------------- synthetic --

@dataclass
class SynthConfig:
    num_videos: int = 6
    duration: int = 60
    fps: float = 20.0
    dims: int = 3
    num_players: int = 2
    highlight_density: float = 0.2
    mean_burst: float = 3.0
    annotators_e: int = 5
    annotators_ne: int = 10
    noise_e: float = 0.05
    noise_ne: float = 0.05
    frame_drop: float = 0.05
    occlusion_rate: float = 0.02
    descriptors_per_segment: int = 24
    descriptor_dim: int = 16
    background_modes: int = 10
    action_modes: int = 4
    descriptor_noise: float = 0.6
    tau: int = DEFAULT_TAU

    def validate(self) -> "SynthConfig":
        if self.duration < self.tau:
            raise ValueError(f"duration {self.duration} shorter than tau {self.tau}")
        if self.dims not in NUM_JOINTS:
            raise ValueError("dims must be 2 or 3")
        if not 0.0 <= self.highlight_density < 1.0:
            raise ValueError("highlight_density must be in [0, 1)")
        if self.num_videos < 1 or self.num_players < 1:
            raise ValueError("need at least one video and one player")
        return self


@dataclass
class SynthVideo:
    pose: PoseTrack
    descriptors: RawDescriptors
    annotations: AnnotationSet
    planted: np.ndarray = field(repr=False)


# rest pose in metres relative to the torso; coordinates keep clear of the
# default activity grid boundaries at +-1/3 so idle jitter stays in one cell
_REST_POSE_3D = np.array([
    [0.00, 0.62, 0.00],   # head
    [0.00, 0.45, 0.00],   # neck
    [0.00, 0.00, 0.00],   # torso
    [-0.20, 0.45, 0.00],  # r_shoulder
    [-0.45, 0.12, 0.05],  # r_elbow
    [-0.50, -0.18, 0.12],  # r_wrist
    [0.20, 0.45, 0.00],   # l_shoulder
    [0.45, 0.12, 0.05],   # l_elbow
    [0.50, -0.18, 0.12],  # l_wrist
    [-0.12, -0.20, 0.00],  # r_hip
    [-0.14, -0.60, 0.05],  # r_knee
    [-0.14, -0.95, 0.00],  # r_ankle
    [0.12, -0.20, 0.00],  # l_hip
    [0.14, -0.60, 0.05],  # l_knee
    [0.14, -0.95, 0.00],  # l_ankle
])
# per-joint swing amplitude (y, z) during an action burst
_SWING = np.array([
    [0.10, 0.15], [0.05, 0.10], [0.0, 0.0],
    [0.10, 0.20], [0.55, 0.55], [0.75, 0.75],
    [0.10, 0.20], [0.55, 0.55], [0.75, 0.75],
    [0.0, 0.10], [0.20, 0.50], [0.25, 0.60],
    [0.0, 0.10], [0.20, 0.50], [0.25, 0.60],
])
_PIXELS_PER_METRE = 200.0


def _planted_seconds(rng, T, density, mean_burst):
    """Two-state Markov chain whose stationary 'on' probability is ``density``."""
    if density <= 0.0:
        return np.zeros(T, dtype=np.int64)
    p_off = 1.0 / max(mean_burst, 1.0)
    p_on = min(1.0, density * p_off / (1.0 - density))
    u = rng.random(T)
    out = np.zeros(T, dtype=np.int64)
    state = u[0] < density
    for t in range(T):
        if t > 0:
            state = (u[t] >= p_off) if state else (u[t] < p_on)
        out[t] = state
    return out


def _synth_pose(rng, cfg: SynthConfig, video_id: str, planted: np.ndarray) -> PoseTrack:
    T, Q = cfg.duration, cfg.num_players
    n_slots = int(round(T * cfg.fps))
    times = (np.arange(n_slots) + 0.5) / cfg.fps
    keep = rng.random(n_slots) >= cfg.frame_drop
    keep[:1] = True
    idx = np.flatnonzero(keep)
    times = times[idx]
    N = len(idx)
    sec = np.minimum(np.floor(times).astype(np.int64), T - 1)
    active = planted[sec].astype(np.float64)

    roots = np.zeros((Q, 3))
    roots[:, 0] = np.linspace(-1.0, 1.0, Q) if Q > 1 else 0.0
    roots[:, 2] = 3.0
    drift = np.cumsum(rng.normal(0.0, 0.003, size=(N, Q, 3)), axis=0)
    phase = rng.uniform(0, 2 * np.pi, size=(Q, 15))
    freq = rng.uniform(1.5, 2.5, size=(Q, 1))
    coords = np.empty((N, Q, 15, 3))
    for q in range(Q):
        ang = 2 * np.pi * freq[q] * times[:, None] + phase[q][None, :]  # (N, 15)
        pose = np.broadcast_to(_REST_POSE_3D, (N, 15, 3)).copy()
        pose[:, :, 1] += active[:, None] * _SWING[:, 0] * np.sin(ang)
        pose[:, :, 2] += active[:, None] * _SWING[:, 1] * np.cos(ang)
        pose += 0.01 * np.sin(0.7 * ang)[:, :, None]
        pose += rng.normal(0.0, 0.008, size=pose.shape)
        coords[:, q] = pose + roots[q] + drift[:, q][:, None, :]

    visible = np.ones((N, Q), dtype=bool)
    if Q > 1 and cfg.occlusion_rate > 0:
        occluded = rng.random(T) < cfg.occlusion_rate
        visible[:, Q - 1] = ~occluded[sec]
    coords[~visible] = 0.0

    if cfg.dims == 2:
        keep_j = [i for i, j in enumerate(JOINTS_3D) if j in JOINTS_2D]
        coords = coords[:, :, keep_j, :2] * _PIXELS_PER_METRE
        coords[~visible] = 0.0
    return PoseTrack(video_id, cfg.dims, idx.astype(np.int64), times, coords, visible).validate()


def _synth_descriptors(rng, cfg: SynthConfig, video_id, planted, modes_bg, modes_act) -> RawDescriptors:
    T = cfg.duration
    p = planted.astype(np.float64)
    prev = np.concatenate([[0.0], p[:-1]])
    nxt = np.concatenate([p[1:], [0.0]])
    w = np.clip(0.04 + 0.72 * p + 0.08 * (prev + nxt), 0.0, 0.95)
    n = cfg.descriptors_per_segment
    seg = np.repeat(np.arange(T), n)
    is_act = rng.random(T * n) < np.repeat(w, n)
    pick_bg = rng.integers(0, len(modes_bg), size=T * n)
    pick_act = rng.integers(0, len(modes_act), size=T * n)
    centers = np.where(is_act[:, None], modes_act[pick_act], modes_bg[pick_bg])
    vecs = centers + rng.normal(0.0, cfg.descriptor_noise, size=centers.shape)
    return RawDescriptors(video_id, seg.astype(np.int64), vecs)


def _synth_annotations(rng, cfg: SynthConfig, video_id, planted) -> AnnotationSet:
    ids, groups, marks = [], [], []
    for group, count, noise in (("E", cfg.annotators_e, cfg.noise_e), ("NE", cfg.annotators_ne, cfg.noise_ne)):
        for a in range(count):
            flips = rng.random(cfg.duration) < noise
            ids.append(f"{group.lower()}{a}")
            groups.append(group)
            marks.append(np.where(flips, 1 - planted, planted))
    return AnnotationSet(video_id, ids, groups, np.array(marks, dtype=np.int64))


def synth_generate(config: SynthConfig, seed: int) -> list[SynthVideo]:
    """Deterministic synthetic corpus.

    Interesting seconds come from a bursty two-state chain with stationary
    rate ``highlight_density``. During them both players swing arms and legs
    across the activity grid and the segment's local descriptors are drawn
    mostly from a set of "action" modes instead of the background modes.
    Annotators copy the planted seconds with independent flip noise.
    """
    cfg = config.validate()
    root = np.random.SeedSequence(seed)
    corpus_ss, *video_ss = root.spawn(cfg.num_videos + 1)
    crng = np.random.default_rng(corpus_ss)
    modes_bg = crng.normal(0.0, 3.0, size=(cfg.background_modes, cfg.descriptor_dim))
    modes_act = crng.normal(0.0, 3.0, size=(cfg.action_modes, cfg.descriptor_dim))
    videos = []
    for v, ss in enumerate(video_ss):
        rng = np.random.default_rng(ss)
        vid = f"vid{v:02d}"
        planted = _planted_seconds(rng, cfg.duration, cfg.highlight_density, cfg.mean_burst)
        pose = _synth_pose(rng, cfg, vid, planted)
        desc = _synth_descriptors(rng, cfg, vid, planted, modes_bg, modes_act)
        ann = _synth_annotations(rng, cfg, vid, planted)
        videos.append(SynthVideo(pose, desc, ann, planted))
    return videos


def write_corpus(videos: Sequence[SynthVideo], root) -> Path:
    """Write ``<root>/<video_id>/{pose.jsonl,descriptors.csv,annotations.csv}`` plus ``corpus.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in videos:
        d = root / v.pose.video_id
        d.mkdir(exist_ok=True)
        save_pose_track(v.pose, d / "pose.jsonl")
        save_descriptors(v.descriptors, d / "descriptors.csv")
        save_annotations(v.annotations, d / "annotations.csv")
        entries.append({"id": v.pose.video_id, "dims": v.pose.dims, "duration": int(v.annotations.duration)})
    manifest = root / "corpus.json"
    manifest.write_text(json.dumps({"videos": entries}, indent=2, sort_keys=True) + "\n")
    return manifest
