"""Body-joint and holistic feature streams.

Per segment, the joint stream yields ``x = (h a)``: the final hidden state of
the per-segment joint LSTM and one activity value per player. The holistic
stream yields ``y``, here a bag-of-features histogram over a k-means
codebook of local descriptors. The classifier input is ``z = (x y)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .dataset import JOINTS_2D, JOINTS_3D, PoseTrack, RawDescriptors, SegmentSet
from .nncore import LstmCell, ShapeError, lstm_run, save_npz_stable

ROOT_3D = JOINTS_3D.index("torso")
NECK_3D = JOINTS_3D.index("neck")


# ------------------------------------------------------ player coordinates --

def _root_position(joints, dims, root_joint):
    if root_joint is None:
        root_joint = "torso" if dims == 3 else "hip_mid"
    if root_joint == "torso":
        if dims != 3:
            raise ValueError("torso root is only defined for 3D tracks")
        return joints[..., ROOT_3D, :]
    if root_joint == "hip_mid":
        names = JOINTS_3D if dims == 3 else JOINTS_2D
        a, b = names.index("r_hip"), names.index("l_hip")
        return 0.5 * (joints[..., a, :] + joints[..., b, :])
    if isinstance(root_joint, (int, np.integer)) and 0 <= root_joint < joints.shape[-2]:
        return joints[..., int(root_joint), :]
    raise ValueError(f"unknown root joint {root_joint!r}")


def to_player_coords(joints, visible=None, root_joint=None, scale_normalize: bool = False) -> np.ndarray:
    """Translate each player's joints so the root joint is the origin.

    ``joints`` is ``(..., Q, J, dims)`` with ``visible`` of shape ``(..., Q)``.
    Invisible players stay all-zero. ``scale_normalize`` (3D only) also divides
    by the torso-neck distance.
    """
    joints = np.asarray(joints, dtype=np.float64)
    dims = joints.shape[-1]
    root = _root_position(joints, dims, root_joint)
    rel = joints - root[..., None, :]
    if scale_normalize:
        if dims != 3:
            raise ValueError("scale normalisation needs the 3D torso and neck joints")
        length = np.linalg.norm(joints[..., NECK_3D, :] - joints[..., ROOT_3D, :], axis=-1)
        rel = rel / np.where(length > 0, length, 1.0)[..., None, None]
    if visible is not None:
        rel = np.where(np.asarray(visible, dtype=bool)[..., None, None], rel, 0.0)
    return rel


# -------------------------------------------------------- activity measure --

@dataclass
class ActivityConfig:
    extent: int = 3
    half_widths: tuple | None = None  # per axis; None -> 1.0 (3D) or half the bbox diagonal (2D)

    def validate(self) -> "ActivityConfig":
        if self.extent < 1:
            raise ValueError("extent must be >= 1")
        if self.half_widths is not None and any(h <= 0 for h in self.half_widths):
            raise ValueError("half widths must be positive")
        return self

    def num_regions(self, dims: int) -> int:
        return self.extent ** dims


def _half_widths(cfg: ActivityConfig, player_coords: np.ndarray) -> np.ndarray:
    dims = player_coords.shape[-1]
    if cfg.half_widths is not None:
        hw = np.asarray(cfg.half_widths, dtype=np.float64)
        if hw.size == 1:
            hw = np.repeat(hw, dims)
        if hw.size != dims:
            raise ValueError(f"need {dims} half widths, got {hw.size}")
        return hw
    if dims == 3:
        return np.ones(3)
    pts = player_coords.reshape(-1, dims)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return np.full(dims, 0.5 * diag if diag > 0 else 1.0)


def activity_measure(rel_coords, visible=None, cfg: ActivityConfig | None = None) -> np.ndarray:
    """Per-player sum over joints of the entropy of grid-region occupancy.

    ``rel_coords`` is ``(F, Q, J, dims)`` in player coordinates. Occupancy
    ratios are taken over the frames in which the player is visible; a player
    never visible in the segment scores 0.
    """
    cfg = (cfg or ActivityConfig()).validate()
    rel_coords = np.asarray(rel_coords, dtype=np.float64)
    if rel_coords.ndim != 4 or rel_coords.shape[0] == 0:
        raise ValueError("activity needs a non-empty (frames, players, joints, dims) array")
    F, Q, J, D = rel_coords.shape
    vis = np.ones((F, Q), dtype=bool) if visible is None else np.asarray(visible, dtype=bool)
    out = np.zeros(Q)
    for q in range(Q):
        pts = rel_coords[vis[:, q], q]
        if len(pts) == 0:
            continue
        hw = _half_widths(cfg, pts)
        cell = 2.0 * hw / cfg.extent
        out[q] = kernels.joint_entropy(np.ascontiguousarray(pts), -hw, cell, cfg.extent).sum()
    return out


# ------------------------------------------------------------ joint stream --

def assemble_joint_vectors(rel_coords, visible=None) -> np.ndarray:
    """Per-frame concatenation over players then joints: ``(F, Q * J * dims)``."""
    rel = np.asarray(rel_coords, dtype=np.float64)
    if visible is not None:
        rel = np.where(np.asarray(visible, dtype=bool)[..., None, None], rel, 0.0)
    return rel.reshape(rel.shape[0], -1)


@dataclass
class JointFeature:
    h: np.ndarray
    a: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.h, self.a])


def joint_stream_encode(cell: LstmCell, u_seq, a) -> JointFeature:
    """Feed one segment's frame vectors through ``cell`` from a zero state."""
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.ndim != 2 or u_seq.shape[1] != cell.input_dim:
        raise ShapeError(f"joint stream expects (frames, {cell.input_dim}) input, got {u_seq.shape}")
    Hs = lstm_run(cell, u_seq[:, None, :])
    return JointFeature(Hs[-1, 0].copy(), np.asarray(a, dtype=np.float64))


# ---------------------------------------------------------- bag of features --

@dataclass
class Codebook:
    centroids: np.ndarray
    seed: int = 0
    iterations: int = 0

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def save(self, path) -> None:
        save_npz_stable(path, {"centroids": self.centroids, "seed": np.int64(self.seed),
                               "iterations": np.int64(self.iterations)})

    @classmethod
    def load(cls, path) -> "Codebook":
        with np.load(path) as d:
            return cls(d["centroids"].copy(), int(d["seed"]), int(d["iterations"]))


def kmeans_pp_init(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(N), chosen)
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans(X, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding. Returns ``(centroids, labels, iterations)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    C = kmeans_pp_init(X, K, rng)
    labels, dist = kernels.nearest(X, C)
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        new = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], C)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            new[k] = X[far]
            dist[far] = 0.0
        shift = float(np.max(np.linalg.norm(new - C, axis=1)))
        C = new
        labels, dist = kernels.nearest(X, C)
        if shift < tol:
            break
    return C, labels, it


def build_codebook(descriptors, K: int = 400, seed: int = 0) -> Codebook:
    C, _, it = kmeans(descriptors, K, seed=seed)
    return Codebook(C, seed, it)


def quantize_bow(codebook: Codebook, descriptors) -> np.ndarray:
    """L1-normalised histogram of nearest codewords; zeros for an empty set."""
    d = np.asarray(descriptors, dtype=np.float64)
    if d.size == 0:
        return np.zeros(codebook.K)
    d = np.atleast_2d(d)
    if d.shape[1] != codebook.centroids.shape[1]:
        raise ShapeError(f"descriptors have {d.shape[1]} dims, codebook has {codebook.centroids.shape[1]}")
    labels, _ = kernels.nearest(d, codebook.centroids)
    hist = np.bincount(labels, minlength=codebook.K).astype(np.float64)
    return hist / hist.sum()


def holistic_bow(codebook: Codebook, desc: RawDescriptors, T: int) -> np.ndarray:
    """``(T, K)`` per-segment histograms in a single nearest-codeword pass."""
    labels, _ = kernels.nearest(desc.vectors, codebook.centroids)
    out = np.zeros((T, codebook.K))
    keep = (desc.segment_index >= 0) & (desc.segment_index < T)
    np.add.at(out, (desc.segment_index[keep], labels[keep]), 1.0)
    totals = out.sum(axis=1, keepdims=True)
    return np.divide(out, totals, out=np.zeros_like(out), where=totals > 0)


# ------------------------------------------------------------------ fusion --

@dataclass
class FusedFeature:
    z: np.ndarray
    x_dim: int
    y_dim: int


def fuse(x, y) -> FusedFeature:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y if y is not None else [], dtype=np.float64).ravel()
    return FusedFeature(np.concatenate([x, y]), x.size, y.size)


# ------------------------------------------------------------ video inputs --

@dataclass
class VideoInputs:
    """Everything the classifier consumes for one video.

    ``frames`` is right-padded ``(F_max, T, Q*J*dims)`` with ``mask``
    ``(F_max, T)`` marking real frames; ``activity`` is ``(T, Q)`` and
    ``holistic`` ``(T, D_y)`` (``D_y`` may be 0).
    """

    video_id: str
    frames: np.ndarray
    mask: np.ndarray
    activity: np.ndarray
    holistic: np.ndarray
    feature_kind: str = "CUSTOM"
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.activity.shape[0] if self.activity.size else self.holistic.shape[0]

    @property
    def joint_dim(self) -> int:
        return self.frames.shape[2]

    def save(self, path) -> None:
        save_npz_stable(path, {"video_id": np.array(self.video_id), "frames": self.frames, "mask": self.mask,
                               "activity": self.activity, "holistic": self.holistic,
                               "feature_kind": np.array(self.feature_kind)})

    @classmethod
    def load(cls, path) -> "VideoInputs":
        with np.load(path, allow_pickle=False) as d:
            return cls(str(d["video_id"]), d["frames"].copy(), d["mask"].copy(), d["activity"].copy(),
                       d["holistic"].copy(), str(d["feature_kind"]))


def featurize_video(pose: PoseTrack | None, segments: SegmentSet | None, holistic: np.ndarray | None,
                    activity_cfg: ActivityConfig | None = None, feature_kind: str = "CUSTOM",
                    root_joint=None, video_id: str | None = None) -> VideoInputs:
    """Build :class:`VideoInputs` from a pose track and/or holistic vectors."""
    if pose is not None:
        rel = to_player_coords(pose.coords, pose.visible, root_joint)
        T = len(segments)
        u_all = assemble_joint_vectors(rel, pose.visible)
        F_max = max(1, max(len(f) for f in segments.frames))
        frames = np.zeros((F_max, T, u_all.shape[1]))
        mask = np.zeros((F_max, T))
        activity = np.zeros((T, pose.num_players))
        for t, idx in enumerate(segments.frames):
            if len(idx) == 0:
                continue
            frames[:len(idx), t] = u_all[idx]
            mask[:len(idx), t] = 1.0
            activity[t] = activity_measure(rel[idx], pose.visible[idx], activity_cfg)
        vid = pose.video_id
    else:
        T = holistic.shape[0]
        frames = np.zeros((0, T, 0))
        mask = np.zeros((0, T))
        activity = np.zeros((T, 0))
        vid = video_id or "video"
    if holistic is None:
        holistic = np.zeros((T, 0))
    holistic = np.asarray(holistic, dtype=np.float64)
    if holistic.shape[0] != T:
        raise ShapeError(f"holistic track has {holistic.shape[0]} rows for {T} segments")
    return VideoInputs(video_id or vid, frames, mask, activity, holistic, feature_kind)


# ------------------------------------------------------------ feature cache --

def save_feature_cache(path, Z: np.ndarray, x_dim: int, y_dim: int, feature_kind: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# x_dim={x_dim},y_dim={y_dim},feature_kind={feature_kind}\n")
        for t, row in enumerate(Z):
            fh.write(str(t) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_feature_cache(path) -> tuple[np.ndarray, dict]:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].strip().split(","):
                    k, _, v = item.partition("=")
                    meta[k.strip()] = int(v) if v.strip().isdigit() else v.strip()
                continue
            if line.strip():
                rows.append([float(v) for v in next(csv.reader([line]))])
    arr = np.array(rows)
    order = np.argsort(arr[:, 0], kind="stable")
    return arr[order, 1:], meta


def stack_descriptors(descs: Sequence[RawDescriptors]) -> np.ndarray:
    return np.concatenate([d.vectors for d in descs], axis=0)


