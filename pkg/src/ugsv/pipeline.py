"""Glue from raw per-video files to classifier inputs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (DEFAULT_TAU, DEFAULT_VOTE_THRESHOLD, GROUPS, AnnotationSet, PoseTrack, RawDescriptors,
                      aggregate_ground_truth, load_annotations, load_descriptors, load_pose_track, segment_video)
from .features import ActivityConfig, Codebook, VideoInputs, build_codebook, featurize_video, holistic_bow


@dataclass
class RawVideo:
    pose: PoseTrack
    descriptors: RawDescriptors | None
    annotations: AnnotationSet


def load_raw_corpus(root) -> list[RawVideo]:
    """Read ``corpus.json`` and each video's pose, descriptor and annotation files."""
    root = Path(root)
    manifest = json.loads((root / "corpus.json").read_text())
    videos = []
    for entry in manifest["videos"]:
        d = root / entry["id"]
        pose = load_pose_track(d / "pose.jsonl", entry["dims"], entry["id"])
        desc = load_descriptors(d / "descriptors.csv", entry["id"]) if (d / "descriptors.csv").exists() else None
        ann = load_annotations(d / "annotations.csv", entry["id"])
        videos.append(RawVideo(pose, desc, ann))
    return videos


def corpus_codebook(videos: Sequence, K: int = 400, seed: int = 0) -> Codebook:
    desc = np.concatenate([v.descriptors.vectors for v in videos if v.descriptors is not None], axis=0)
    return build_codebook(desc, K, seed)


def prepare_video(video, codebook: Codebook | None, tau: int = DEFAULT_TAU,
                  activity_cfg: ActivityConfig | None = None, vote_threshold: float = DEFAULT_VOTE_THRESHOLD,
                  groups: Sequence[str] = GROUPS) -> tuple[VideoInputs, dict]:
    T = video.annotations.duration
    segments = segment_video(video.pose, T, tau)
    y = None
    kind = "CUSTOM"
    if codebook is not None and video.descriptors is not None:
        y = holistic_bow(codebook, video.descriptors, T)
        kind = "BOW400" if codebook.K == 400 else "CUSTOM"
    inputs = featurize_video(video.pose, segments, y, activity_cfg, kind)
    labels = {g: aggregate_ground_truth(video.annotations, g, vote_threshold).labels
              for g in groups if g in video.annotations.groups}
    return inputs, labels


def prepare_corpus(videos: Sequence, K: int = 400, codebook_seed: int = 0, tau: int = DEFAULT_TAU,
                   activity_cfg: ActivityConfig | None = None, vote_threshold: float = DEFAULT_VOTE_THRESHOLD,
                   codebook: Codebook | None = None) -> tuple[list, Codebook]:
    """Featurise every video; the codebook is fit on all descriptors unless one is given."""
    if codebook is None and any(v.descriptors is not None for v in videos):
        codebook = corpus_codebook(videos, K, codebook_seed)
    return [prepare_video(v, codebook, tau, activity_cfg, vote_threshold) for v in videos], codebook
