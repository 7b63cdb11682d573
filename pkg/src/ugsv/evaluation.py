"""Segment f-score, highlight completeness and the leave-one-out harness."""
from __future__ import annotations

import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import HighlightNet, ModelSpec, ProbabilityCurve, TrainConfig, build_network, predict_curve, train
from .dataset import HighlightRun, LabelTrack, extract_highlight_runs
from .features import VideoInputs
from .summarizer import SummaryEDL, kmeans_baseline, skim_select, threshold_select

log = logging.getLogger(__name__)

COMPLETENESS_GRID = (0.5, 0.7, 0.9)


# ------------------------------------------------------------- f-score --

@dataclass
class ConfusionCounts:
    TP: int = 0
    FP: int = 0
    FN: int = 0
    TN: int = 0

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


def fscore(c: ConfusionCounts) -> float:
    den = 2 * c.TP + c.FP + c.FN
    return 2 * c.TP / den if den else 0.0


def segment_fscore(summary: SummaryEDL, labels) -> tuple[ConfusionCounts, float]:
    """Per-second TP/FP/FN/TN of a summary against labels and ``2TP / (2TP + FP + FN)``."""
    lab = np.asarray(labels.labels if isinstance(labels, LabelTrack) else labels, dtype=np.int64)
    T = len(lab)
    for s, e in summary.intervals:
        if s < 0 or e > T:
            raise IndexError(f"summary interval [{s}, {e}) outside [0, {T})")
    sel = summary.to_labels(T).astype(bool)
    pos = lab == 1
    counts = ConfusionCounts(int(np.sum(sel & pos)), int(np.sum(sel & ~pos)),
                             int(np.sum(~sel & pos)), int(np.sum(~sel & ~pos)))
    return counts, fscore(counts)


# -------------------------------------------------------- completeness --

def overlap(a, b) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


@dataclass
class Association:
    extracted: list
    ground_truth: list
    match: dict  # extracted index -> ground-truth index
    completeness: list  # per extracted run

    def pairs(self):
        for i, run in enumerate(self.extracted):
            j = self.match.get(i)
            yield run, (self.ground_truth[j] if j is not None else None), self.completeness[i]

    @property
    def total_completeness(self) -> float:
        return float(sum(self.completeness))


def associate_highlights(extracted: Sequence, gt: Sequence) -> Association:
    """Greedy one-to-one association of extracted and ground-truth highlights.

    Overlapping pairs are visited by overlap length, largest first (ties:
    earlier ground-truth start, then earlier extracted start) and accepted
    while both sides are free. Completeness is the overlap divided by the
    ground-truth run length, 0 for unassociated runs.
    """
    ext = [HighlightRun(int(s), int(e)) for s, e in extracted]
    ref = [HighlightRun(int(s), int(e)) for s, e in gt]
    cands = []
    for i, a in enumerate(ext):
        for j, b in enumerate(ref):
            ov = overlap(a, b)
            if ov > 0:
                cands.append((-ov, b.start, a.start, i, j))
    cands.sort()
    match = {}
    taken = set()
    for _, _, _, i, j in cands:
        if i in match or j in taken:
            continue
        match[i] = j
        taken.add(j)
    comp = [overlap(ext[i], ref[match[i]]) / ref[match[i]].duration if i in match else 0.0
            for i in range(len(ext))]
    return Association(ext, ref, match, comp)


@dataclass
class CompletenessReport:
    pairs: list
    C: float
    TP: int
    FP: int
    FN: int

    @property
    def precision(self) -> float:
        return self.TP / (self.TP + self.FP) if self.TP + self.FP else 0.0

    @property
    def recall(self) -> float:
        return self.TP / (self.TP + self.FN) if self.TP + self.FN else 0.0


def completeness_pr(assoc: Association, C: float) -> CompletenessReport:
    """Highlight-level precision and recall: an extracted run is a TP when its completeness exceeds ``C``."""
    if not 0.0 < C <= 1.0:
        raise ValueError(f"completeness threshold {C} outside (0, 1]")
    tp_idx = [i for i, c in enumerate(assoc.completeness) if c > C]
    covered = {assoc.match[i] for i in tp_idx}
    TP = len(tp_idx)
    FP = len(assoc.extracted) - TP
    FN = len(assoc.ground_truth) - len(covered)
    return CompletenessReport(list(assoc.pairs()), C, TP, FP, FN)


def completeness_sweep(extracted, gt, grid=COMPLETENESS_GRID) -> dict:
    assoc = associate_highlights(extracted, gt)
    return {C: completeness_pr(assoc, C) for C in grid}


def pr_curve(curve: ProbabilityCurve, labels, C: float, steps: int = 101) -> list[tuple[float, float, float]]:
    """``(theta, recall, precision)`` for ``steps`` thresholds evenly spaced on ``[0, 1]``."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    lab = labels.labels if isinstance(labels, LabelTrack) else labels
    gt = extract_highlight_runs(lab)
    out = []
    for theta in np.linspace(0.0, 1.0, steps):
        edl = threshold_select(curve, float(theta))
        rep = completeness_pr(associate_highlights(edl.intervals, gt), C)
        out.append((float(theta), rep.recall, rep.precision))
    return out


def pr_counts(curve: ProbabilityCurve, labels, C: float, steps: int) -> np.ndarray:
    """``(steps, 3)`` highlight-level TP/FP/FN per threshold, for pooling across videos."""
    gt = extract_highlight_runs(labels)
    out = np.zeros((steps, 3), dtype=np.int64)
    for k, theta in enumerate(np.linspace(0.0, 1.0, steps)):
        rep = completeness_pr(associate_highlights(threshold_select(curve, float(theta)).intervals, gt), C)
        out[k] = (rep.TP, rep.FP, rep.FN)
    return out


# ------------------------------------------------------------------ LOO --

def derive_seed(master: int, *tags) -> int:
    """Stable 32-bit sub-seed from a master seed and a tuple of tags."""
    key = [zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(int(master), spawn_key=key).generate_state(1)[0])


@dataclass
class FoldResult:
    fold: int
    video_id: str
    group: str
    L: int
    f: float
    counts: ConfusionCounts
    train_f: float = float("nan")
    kmeans_f: float = float("nan")
    converged: bool = True
    epochs: int = 0
    final_loss: float = float("nan")
    error: str = ""
    curve: np.ndarray | None = field(default=None, repr=False)
    summary: list = field(default_factory=list, repr=False)
    pr: dict = field(default_factory=dict, repr=False)


@dataclass
class LooResult:
    folds: list
    master_seed: int

    def by_group(self, group: str) -> list:
        return [r for r in self.folds if r.group == group]

    def groups(self) -> list:
        return sorted({r.group for r in self.folds})

    def aggregate(self) -> dict:
        out = {"master_seed": self.master_seed, "groups": {}}
        for g in self.groups():
            rows = [r for r in self.by_group(g) if not r.error]
            fs = np.array([r.f for r in rows])
            km = np.array([r.kmeans_f for r in rows])
            tr = np.array([r.train_f for r in rows])
            out["groups"][g] = {
                "folds": len(self.by_group(g)),
                "failed": [r.video_id for r in self.by_group(g) if r.error],
                "not_converged": [r.video_id for r in rows if not r.converged],
                "mean_f": float(fs.mean()) if fs.size else float("nan"),
                "std_f": float(fs.std()) if fs.size else float("nan"),
                "mean_kmeans_f": float(np.nanmean(km)) if km.size else float("nan"),
                "mean_train_f": float(np.nanmean(tr)) if tr.size else float("nan"),
            }
        return out


def _score_summary(model: HighlightNet, inputs: VideoInputs, labels: np.ndarray):
    curve = predict_curve(model, inputs)
    L = int(np.sum(labels))
    edl = skim_select(curve, L)
    counts, f = segment_fscore(edl, labels)
    return curve, edl, counts, f


def _run_fold(args):
    (fold, group, corpus, spec_kw, cfg_kw, master_seed, c_grid, pr_steps, with_kmeans) = args
    vid_inputs, vid_labels = corpus[fold]
    train_set = [(inp, labs[group]) for k, (inp, labs) in enumerate(corpus) if k != fold]
    labels = vid_labels[group]
    spec = ModelSpec(**{**spec_kw, "seed": derive_seed(master_seed, "init", group, fold)})
    cfg = TrainConfig(**{**cfg_kw, "shuffle_seed": derive_seed(master_seed, "shuffle", group, fold)})
    res = FoldResult(fold, vid_inputs.video_id, group, int(np.sum(labels)), 0.0, ConfusionCounts())
    try:
        model = build_network(spec)
        tr = train(model, train_set, cfg)
    except (ArithmeticError, ValueError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        res.converged = False
        return res
    res.converged = tr.converged
    res.epochs = len(tr.history)
    res.final_loss = tr.history[-1][1]
    curve, edl, counts, f = _score_summary(model, vid_inputs, labels)
    res.curve, res.summary, res.counts, res.f = curve.p, edl.intervals, counts, f
    res.train_f = float(np.mean([_score_summary(model, inp, lab)[3] for inp, lab in train_set]))
    if with_kmeans and res.L >= 1:
        Z = model.fused(vid_inputs)
        km = kmeans_baseline(Z, res.L, seed=derive_seed(master_seed, "kmeans", group, fold),
                             video_id=vid_inputs.video_id)
        res.kmeans_f = segment_fscore(km, labels)[1]
    for C in c_grid:
        res.pr[C] = pr_counts(curve, labels, C, pr_steps)
    return res


def loo_harness(corpus: Sequence[tuple[VideoInputs, dict]], spec: ModelSpec, cfg: TrainConfig,
                master_seed: int = 0, groups: Sequence[str] = ("E", "NE"), c_grid=COMPLETENESS_GRID,
                pr_steps: int = 101, workers: int = 1, with_kmeans: bool = True, progress=None) -> LooResult:
    """Leave-one-out: for each group and held-out video, train on the rest and score its summary.

    ``corpus`` holds ``(inputs, {group: labels})`` per video. Summaries use the
    held-out video's ground-truth highlight length. Seeds for initialisation,
    shuffling and the k-means baseline derive from ``master_seed`` and
    ``(group, fold)``, so folds can run in any order or in parallel.
    """
    if len(corpus) < 2:
        raise ValueError("leave-one-out needs at least two videos")
    spec_kw = {k: v for k, v in asdict(spec).items() if k != "seed"}
    cfg_kw = {k: v for k, v in asdict(cfg).items() if k != "shuffle_seed"}
    jobs = [(fold, g, corpus, spec_kw, cfg_kw, master_seed, tuple(c_grid), pr_steps, with_kmeans)
            for g in groups for fold in range(len(corpus))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_fold, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_fold(job))
            if progress is not None:
                progress(results[-1])
    results.sort(key=lambda r: (r.group, r.fold))
    return LooResult(results, master_seed)


def write_loo_reports(result: LooResult, out_dir, c_grid=COMPLETENESS_GRID, pr_steps: int = 101) -> dict:
    """Per-fold CSV, pooled PR-curve CSVs per group and C, per-video EDL/curve files and an aggregate JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "folds.csv", "w") as fh:
        fh.write("video_id,group,f,TP,FP,FN,TN,fold,L,train_f,kmeans_f,converged,epochs,final_loss,error\n")
        for r in result.folds:
            c = r.counts
            fh.write(f"{r.video_id},{r.group},{r.f:.10g},{c.TP},{c.FP},{c.FN},{c.TN},{r.fold},{r.L},"
                     f"{r.train_f:.10g},{r.kmeans_f:.10g},{int(r.converged)},{r.epochs},{r.final_loss:.10g},"
                     f"\"{r.error}\"\n")
    thetas = np.linspace(0.0, 1.0, pr_steps)
    for g in result.groups():
        rows = [r for r in result.by_group(g) if not r.error]
        for C in c_grid:
            pooled = sum((r.pr[C] for r in rows if C in r.pr), np.zeros((pr_steps, 3), dtype=np.int64))
            with open(out / f"pr_{g}_C{int(round(C * 100))}.csv", "w") as fh:
                fh.write("theta,recall,precision\n")
                for theta, (tp, fp, fn) in zip(thetas, pooled):
                    rec = tp / (tp + fn) if tp + fn else 0.0
                    prec = tp / (tp + fp) if tp + fp else 0.0
                    fh.write(f"{theta:.4f},{rec:.10g},{prec:.10g}\n")
        for r in rows:
            d = out / g / r.video_id
            d.mkdir(parents=True, exist_ok=True)
            ProbabilityCurve(r.video_id, r.curve).save(d / "curve.csv")
            SummaryEDL(r.video_id, r.summary).save(d / "edl.csv")
    agg = result.aggregate()
    (out / "aggregate.json").write_text(json.dumps(_jsonable(agg), indent=2, sort_keys=True) + "\n")
    return agg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
