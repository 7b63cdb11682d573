"""Command-line entry point.

Exit codes: 0 success, 1 domain or configuration error, 2 usage error.
Settings come from a JSON config (``--config``) overlaid on defaults; flags
given on the command line win over both.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import VARIANTS, HighlightNet, ModelSpec, SpecError, ProbabilityCurve, TrainConfig, build_network, predict_curve, train
from .dataset import (GROUPS, extract_highlight_runs, SynthConfig, load_labels, load_runs, save_runs, synth_generate, write_corpus)
from .evaluation import (COMPLETENESS_GRID, associate_highlights, completeness_pr, derive_seed, loo_harness,
                         pr_curve, segment_fscore, write_loo_reports)
from .gradcheck import toy_gradient_check
from .features import ActivityConfig, Codebook, VideoInputs, save_feature_cache
from .pipeline import corpus_codebook, load_raw_corpus, prepare_video
from .summarizer import SummaryEDL, skim_select, threshold_select

log = logging.getLogger("ugsv")

ENV_DATA_ROOT = "UGSV_DATA_ROOT"

DEFAULTS = {
    "dataset_root": None,
    "variant": "JOINTS3D+CNNISA",
    "tau": 3,
    "vote_threshold": 0.4,
    "completeness_grid": list(COMPLETENESS_GRID),
    "codebook_k": 400,
    "output_dir": "runs/default",
    "master_seed": 0,
    "pr_steps": 101,
    "workers": 1,
    "groups": list(GROUPS),
    "kmeans_baseline": True,
    "train": {"alpha": 0.001, "max_epochs": 200, "patience": 20, "min_delta": 1e-5, "clip_norm": 5.0,
              "target_loss": 0.0},
    "activity": {"extent": 3, "half_widths": None},
    "model": {"lstm_J": None, "fc1": None, "lstm_H": None, "fc2": None, "fc3": None},
}


class ConfigError(ValueError):
    def __init__(self, field: str, msg: str):
        self.field = field
        super().__init__(f"config field '{field}': {msg}")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    dataset_root: str
    variant: str
    tau: int
    vote_threshold: float
    completeness_grid: list
    codebook_k: int
    output_dir: str
    master_seed: int
    pr_steps: int
    workers: int
    groups: list
    kmeans_baseline: bool
    train: dict
    activity: dict
    model: dict

    def model_spec(self, seed: int = 0) -> ModelSpec:
        sizes = self.model if self.variant == "CUSTOM" else {}
        return ModelSpec(self.variant, seed=seed, **{k: v for k, v in sizes.items() if v is not None})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def activity_config(self) -> ActivityConfig:
        hw = self.activity.get("half_widths")
        return ActivityConfig(self.activity["extent"], tuple(hw) if hw is not None else None)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def echo(self, out_dir=None) -> Path:
        out = Path(out_dir or self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.json"
        path.write_text(self.to_json())
        return path


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        name = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(name, "unknown field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(name, "expected an object")
            out[k] = _merge(base[k], v, name + ".")
        else:
            out[k] = v
    return out


def _check(cond, field, msg):
    if not cond:
        raise ConfigError(field, msg)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate_config(source=None, overrides: dict | None = None, require_root: bool = True) -> RunConfig:
    """Apply defaults to a JSON config (path or dict) and check every field."""
    raw = {}
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except FileNotFoundError:
            raise ConfigError("<file>", f"{source} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        _check(isinstance(raw, dict), "<root>", "expected a JSON object")
    elif isinstance(source, dict):
        raw = source
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None and not isinstance(v, dict)})
        for k in ("train", "activity", "model"):
            if overrides.get(k):
                cfg[k] = _merge(cfg[k], {a: b for a, b in overrides[k].items() if b is not None}, k + ".")
    if cfg["dataset_root"] is None:
        cfg["dataset_root"] = os.environ.get(ENV_DATA_ROOT)
    if require_root:
        _check(cfg["dataset_root"] is not None, "dataset_root", f"required (or set {ENV_DATA_ROOT})")
        _check(Path(cfg["dataset_root"]).is_dir(), "dataset_root", f"{cfg['dataset_root']} is not a directory")
    _check(cfg["variant"] in VARIANTS, "variant", f"must be one of {list(VARIANTS)}")
    _check(_is_int(cfg["tau"]) and cfg["tau"] >= 1, "tau", "must be an integer >= 1")
    _check(_is_num(cfg["vote_threshold"]) and 0 < cfg["vote_threshold"] <= 1, "vote_threshold", "must be in (0, 1]")
    grid = cfg["completeness_grid"]
    _check(isinstance(grid, list) and grid and all(_is_num(c) and 0 < c <= 1 for c in grid),
           "completeness_grid", "must be a non-empty list of values in (0, 1]")
    _check(_is_int(cfg["codebook_k"]) and cfg["codebook_k"] >= 1, "codebook_k", "must be an integer >= 1")
    _check(_is_int(cfg["master_seed"]) and cfg["master_seed"] >= 0, "master_seed", "must be a non-negative integer")
    _check(_is_int(cfg["pr_steps"]) and cfg["pr_steps"] >= 2, "pr_steps", "must be an integer >= 2")
    _check(_is_int(cfg["workers"]) and cfg["workers"] >= 1, "workers", "must be an integer >= 1")
    _check(isinstance(cfg["groups"], list) and cfg["groups"] and all(g in GROUPS for g in cfg["groups"]),
           "groups", f"must be a non-empty subset of {list(GROUPS)}")
    _check(isinstance(cfg["output_dir"], str), "output_dir", "must be a string")
    t = cfg["train"]
    _check(_is_num(t["alpha"]) and t["alpha"] > 0, "train.alpha", "must be > 0")
    _check(_is_int(t["max_epochs"]) and t["max_epochs"] >= 1, "train.max_epochs", "must be an integer >= 1")
    _check(_is_int(t["patience"]) and t["patience"] >= 1, "train.patience", "must be an integer >= 1")
    _check(_is_num(t["min_delta"]) and t["min_delta"] >= 0, "train.min_delta", "must be >= 0")
    _check(_is_num(t["clip_norm"]) and t["clip_norm"] >= 0, "train.clip_norm", "must be >= 0")
    _check(_is_num(t["target_loss"]) and t["target_loss"] >= 0, "train.target_loss", "must be >= 0")
    a = cfg["activity"]
    _check(_is_int(a["extent"]) and a["extent"] >= 1, "activity.extent", "must be an integer >= 1")
    hw = a["half_widths"]
    _check(hw is None or (isinstance(hw, list) and all(_is_num(h) and h > 0 for h in hw)),
           "activity.half_widths", "must be null or a list of positive numbers")
    cfg["completeness_grid"] = [float(c) for c in grid]
    for name, size in cfg["model"].items():
        _check(size is None or (isinstance(size, list) and len(size) == 2 and all(_is_int(s) and s >= 1 for s in size)),
               f"model.{name}", "must be null or [in, out] positive integers")
    run = RunConfig(**cfg)
    try:
        run.model_spec()
    except SpecError as exc:
        raise ConfigError("model" if run.variant == "CUSTOM" else "variant", str(exc)) from None
    return run


def _check_holistic(spec: ModelSpec, K: int | None, field: str) -> None:
    if spec.y_dim > 0 and K != spec.y_dim:
        raise ConfigError(field, f"holistic width {K} does not match {spec.variant} input {spec.y_dim}")


# ----------------------------------------------------------------- commands --

def _config_from_args(args, require_root=True, **extra) -> RunConfig:
    overrides = {"dataset_root": getattr(args, "data", None), "master_seed": getattr(args, "seed", None),
                 "output_dir": getattr(args, "out", None), "variant": getattr(args, "variant", None),
                 "workers": getattr(args, "workers", None), "tau": getattr(args, "tau", None),
                 "train": {"max_epochs": getattr(args, "epochs", None)}}
    overrides.update(extra)
    return validate_config(getattr(args, "config", None), overrides, require_root)


def cmd_synth(args) -> int:
    cfg = SynthConfig(num_videos=args.videos, duration=args.duration, fps=args.fps, dims=args.dims,
                      highlight_density=args.density, noise_e=args.noise, noise_ne=args.noise)
    videos = synth_generate(cfg, args.seed)
    manifest = write_corpus(videos, args.out)
    meta = {"seed": args.seed, "synth": asdict(cfg)}
    (Path(args.out) / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(videos)} videos to {manifest.parent}")
    return 0


def cmd_codebook(args) -> int:
    cfg = _config_from_args(args, output_dir=None)
    videos = load_raw_corpus(cfg.dataset_root)
    k = args.k or cfg.codebook_k
    cb = corpus_codebook(videos, k, derive_seed(cfg.master_seed, "codebook"))
    cb.save(args.out)
    print(f"codebook K={cb.K} dim={cb.centroids.shape[1]} iterations={cb.iterations} -> {args.out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _config_from_args(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    videos = load_raw_corpus(cfg.dataset_root)
    cb = Codebook.load(args.codebook) if args.codebook else None
    net = HighlightNet.load(args.model) if args.model else build_network(cfg.model_spec(derive_seed(cfg.master_seed, "init")))
    _check_holistic(net.spec, cb.K if cb else None, "codebook")
    for v in videos:
        inputs, labels = prepare_video(v, cb, cfg.tau, cfg.activity_config(), cfg.vote_threshold, cfg.groups)
        d = out / inputs.video_id
        d.mkdir(exist_ok=True)
        inputs.save(d / "inputs.npz")
        for g, lab in labels.items():
            save_runs(extract_highlight_runs(lab), d / f"labels_{g}.csv")
        x = net.joint_features(inputs)
        y = inputs.holistic if net.spec.y_dim > 0 else np.zeros((inputs.T, 0))
        save_feature_cache(d / "features.csv", np.concatenate([x, y], axis=1), x.shape[1], y.shape[1],
                           inputs.feature_kind)
    print(f"featurized {len(videos)} videos into {out}")
    return 0


def _load_manifest(path) -> dict:
    try:
        m = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("<manifest>", str(exc)) from None
    for i, v in enumerate(m.get("videos", [])):
        for key in ("id", "inputs", "labels"):
            if key not in v:
                raise ConfigError(f"videos[{i}].{key}", "required")
    if not m.get("videos"):
        raise ConfigError("videos", "required and non-empty")
    return m


def cmd_train(args) -> int:
    m = _load_manifest(args.manifest)
    base = Path(args.manifest).parent
    cfg = validate_config({"variant": m.get("variant", DEFAULTS["variant"]), "train": m.get("train", {}),
                           "master_seed": m.get("seed", 0), "model": m.get("model", {})},
                          {"master_seed": args.seed, "train": {"max_epochs": args.epochs}}, require_root=False)
    data = []
    for v in m["videos"]:
        inputs = VideoInputs.load(base / v["inputs"])
        labels = load_labels(base / v["labels"], inputs.T, v["id"]).labels
        data.append((inputs, labels))
    net = build_network(cfg.model_spec(derive_seed(cfg.master_seed, "init", args.fold)))
    tc = TrainConfig(**{**cfg.train, "shuffle_seed": derive_seed(cfg.master_seed, "shuffle", args.fold)})
    res = train(net, data, tc)
    out = Path(args.out) / args.fold
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    net.save(out / "model.ckpt")
    with open(out / "loss.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for e, loss in res.history:
            fh.write(f"{e},{loss:.17g}\n")
    print(f"{res.message}; final loss {res.history[-1][1]:.6f}; checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_predict(args) -> int:
    net = HighlightNet.load(args.model)
    inputs = VideoInputs.load(args.inputs)
    curve = predict_curve(net, inputs)
    curve.save(args.out)
    print(f"wrote {len(curve)} probabilities to {args.out}")
    return 0


def cmd_summarize(args) -> int:
    curve = ProbabilityCurve.load(args.curve)
    if (args.length is None) == (args.theta is None):
        raise UsageError("give exactly one of --length or --theta")
    edl = skim_select(curve, args.length) if args.length is not None else threshold_select(curve, args.theta)
    edl.save(args.out)
    print(f"{len(edl.intervals)} intervals, {edl.duration} s, theta={edl.selected_theta:.6g} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    curve = ProbabilityCurve.load(args.curve) if args.curve else None
    gt_runs = load_runs(args.labels)
    T = args.duration or (len(curve) if curve is not None else None)
    if T is None:
        raise UsageError("--duration is required without --curve")
    labels = load_labels(args.labels, T).labels
    grid = args.completeness or list(COMPLETENESS_GRID)
    report = {"duration": T}
    if args.summary:
        edl = SummaryEDL.load(args.summary)
        counts, f = segment_fscore(edl, labels)
        assoc = associate_highlights(edl.intervals, gt_runs)
        report["f"] = f
        report["counts"] = asdict(counts)
        report["completeness"] = [{"extracted": list(r), "ground_truth": list(g) if g else None, "c": c}
                                  for r, g, c in assoc.pairs()]
        report["highlight_pr"] = {str(C): {"precision": rep.precision, "recall": rep.recall, "TP": rep.TP,
                                           "FP": rep.FP, "FN": rep.FN}
                                  for C, rep in ((C, completeness_pr(assoc, C)) for C in grid)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if curve is not None:
        for C in grid:
            with open(out / f"pr_C{int(round(C * 100))}.csv", "w") as fh:
                fh.write("theta,recall,precision\n")
                for theta, rec, prec in pr_curve(curve, labels, C, args.steps):
                    fh.write(f"{theta:.4f},{rec:.10g},{prec:.10g}\n")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if "f" in report:
        print(f"f-score {report['f']:.4f}")
    return 0


def cmd_loo(args) -> int:
    cfg = _config_from_args(args)
    out = Path(cfg.output_dir)
    cfg.echo(out)
    videos = load_raw_corpus(cfg.dataset_root)
    spec = cfg.model_spec()
    cb = None
    if spec.y_dim > 0:
        _check_holistic(spec, cfg.codebook_k, "codebook_k")
        if not all(v.descriptors is not None for v in videos):
            raise ConfigError("dataset_root", f"{spec.variant} needs descriptors for every video")
        cb = corpus_codebook(videos, cfg.codebook_k, derive_seed(cfg.master_seed, "codebook"))
    corpus = [prepare_video(v, cb, cfg.tau, cfg.activity_config(), cfg.vote_threshold, cfg.groups) for v in videos]
    res = loo_harness(corpus, spec, cfg.train_config(), cfg.master_seed, cfg.groups,
                      cfg.completeness_grid, cfg.pr_steps, cfg.workers, cfg.kmeans_baseline,
                      progress=lambda r: log.info("fold %s/%s f=%.3f", r.group, r.video_id, r.f))
    agg = write_loo_reports(res, out, cfg.completeness_grid, cfg.pr_steps)
    for g, row in agg["groups"].items():
        print(f"group {g}: mean f {row['mean_f']:.4f} (std {row['std_f']:.4f}), k-means {row['mean_kmeans_f']:.4f}, "
              f"train {row['mean_train_f']:.4f}, folds {row['folds']}")
        if row["failed"]:
            print(f"group {g}: failed folds {row['failed']}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    report = toy_gradient_check(seed=args.seed, tolerance=args.tolerance, max_coords=args.max_coords)
    print(report.summary())
    return 0 if report.passed else 1


# --------------------------------------------------------------------- main --

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ugsv", description="Sports-video highlight summarisation from action features.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int, help="master seed")
        if data:
            sp.add_argument("--data", help=f"dataset root (default ${ENV_DATA_ROOT})")
        if out:
            sp.add_argument("--out", help="output path")

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--videos", type=int, default=6)
    sp.add_argument("--duration", type=int, default=60)
    sp.add_argument("--fps", type=float, default=20.0)
    sp.add_argument("--dims", type=int, choices=(2, 3), default=3)
    sp.add_argument("--density", type=float, default=0.2)
    sp.add_argument("--noise", type=float, default=0.05)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("codebook", help="k-means codebook over raw descriptors")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int)
    sp.set_defaults(func=cmd_codebook)

    sp = sub.add_parser("featurize", help="per-video classifier inputs, labels and feature caches")
    common(sp)
    sp.add_argument("--codebook")
    sp.add_argument("--model", help="checkpoint whose joint LSTM encodes the feature cache")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--tau", type=int)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="train on a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--fold", default="full")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="probability curve for one video")
    sp.add_argument("--model", required=True)
    sp.add_argument("--inputs", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("summarize", help="EDL from a probability curve")
    sp.add_argument("--curve", required=True)
    sp.add_argument("--length", type=int)
    sp.add_argument("--theta", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("evaluate", help="f-score, completeness and PR curves")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--summary")
    sp.add_argument("--curve")
    sp.add_argument("--duration", type=int)
    sp.add_argument("--completeness", type=float, nargs="+")
    sp.add_argument("--steps", type=int, default=101)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("loo", help="leave-one-out experiment")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--tau", type=int)
    sp.set_defaults(func=cmd_loo)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full network")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--max-coords", type=int, default=None)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ugsv: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"ugsv: config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, ArithmeticError, KeyError) as exc:
        print(f"ugsv: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
