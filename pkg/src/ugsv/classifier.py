"""Highlight classification network and its training loop.

Topology, for one video of ``T`` segments::

    frames --lstm_J (reset per segment)--> h_t ; x_t = (h_t a_t) ; z_t = (x_t y_t)
    z_t --fc1+sigmoid--> lstm_H (state carried across the video) --fc2+sigmoid--> fc3 --> softmax

Softmax unit 0 is "interesting"; ``p_t`` is its probability.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import VideoInputs
from .nncore import (NONE, SIGMOID, AdamState, DenseLayer, LstmCell, NumericalError, ShapeError, Tape,
                     adam_update, clip_by_global_norm, fc_apply, fc_backward, load_checkpoint, lstm_run,
                     lstm_run_backward, save_checkpoint, softmax_ce, softmax_ce_grad)

log = logging.getLogger(__name__)

INTERESTING = 0
NUM_PLAYERS = 2

# input x output sizes per layer; lstm rows give (input, hidden)
LAYER_SIZES = {
    "JOINTS3D": {"lstm_J": (90, 90), "fc1": (92, 50), "lstm_H": (50, 50), "fc2": (50, 20), "fc3": (20, 2)},
    "JOINTS2D": {"lstm_J": (52, 52), "fc1": (54, 50), "lstm_H": (50, 50), "fc2": (50, 20), "fc3": (20, 2)},
    "ACTIONREC": {"lstm_J": None, "fc1": (402, 400), "lstm_H": (400, 400), "fc2": (400, 100), "fc3": (100, 2)},
    "CNNISA": {"lstm_J": None, "fc1": (400, 400), "lstm_H": (400, 400), "fc2": (400, 100), "fc3": (100, 2)},
    "C3D": {"lstm_J": None, "fc1": (4096, 400), "lstm_H": (400, 400), "fc2": (400, 100), "fc3": (100, 2)},
    "JOINTS3D+CNNISA": {"lstm_J": (90, 90), "fc1": (492, 400), "lstm_H": (400, 400), "fc2": (400, 100),
                        "fc3": (100, 2)},
    "JOINTS2D+CNNISA": {"lstm_J": (52, 52), "fc1": (454, 400), "lstm_H": (400, 400), "fc2": (400, 100),
                        "fc3": (100, 2)},
}
VARIANTS = tuple(LAYER_SIZES) + ("CUSTOM",)
LAYERS = ("lstm_J", "fc1", "lstm_H", "fc2", "fc3")


class SpecError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class ModelSpec:
    variant: str = "JOINTS3D+CNNISA"
    lstm_J: tuple | None = None
    fc1: tuple | None = None
    lstm_H: tuple | None = None
    fc2: tuple | None = None
    fc3: tuple | None = None
    num_players: int = NUM_PLAYERS
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant != "CUSTOM":
            for name, size in LAYER_SIZES[self.variant].items():
                given = getattr(self, name)
                if given is not None and tuple(given) != size:
                    raise SpecError(f"{self.variant}: {name} must be {size}, got {tuple(given)}")
                setattr(self, name, size)
        for name in LAYERS:
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, tuple(int(v) for v in val))
        self.validate()

    @property
    def x_dim(self) -> int:
        return self.lstm_J[1] + self.num_players if self.lstm_J else 0

    @property
    def y_dim(self) -> int:
        return self.fc1[0] - self.x_dim

    def validate(self) -> None:
        for name in LAYERS[1:]:
            if getattr(self, name) is None:
                raise SpecError(f"{name} size missing")
        if self.fc3[1] != 2:
            raise SpecError("fc3 must have 2 outputs")
        chain = [("fc1", "lstm_H"), ("lstm_H", "fc2"), ("fc2", "fc3")]
        for a, b in chain:
            if getattr(self, a)[1] != getattr(self, b)[0]:
                raise SpecError(f"{a} output {getattr(self, a)[1]} != {b} input {getattr(self, b)[0]}")
        if self.lstm_H[0] != self.lstm_H[1] and self.variant != "CUSTOM":
            raise SpecError("lstm_H must be square")
        if self.y_dim < 0:
            raise SpecError(f"fc1 input {self.fc1[0]} smaller than joint feature size {self.x_dim}")

    def sizes(self) -> dict:
        return {name: getattr(self, name) for name in LAYERS}


def dense_param_count(in_dim: int, out_dim: int) -> int:
    return in_dim * out_dim + out_dim


def lstm_param_count(in_dim: int, hidden: int) -> int:
    """Four gate blocks, each ``(in + hidden) x hidden`` weights plus ``hidden`` biases."""
    return 4 * ((in_dim + hidden) * hidden + hidden)


def param_count(spec: ModelSpec) -> dict:
    out = {}
    for name, size in spec.sizes().items():
        if size is None:
            continue
        out[name] = lstm_param_count(*size) if name.startswith("lstm") else dense_param_count(*size)
    return out


@dataclass
class HighlightNet:
    spec: ModelSpec
    lstm_J: LstmCell | None
    fc1: DenseLayer
    lstm_H: LstmCell
    fc2: DenseLayer
    fc3: DenseLayer

    def params(self) -> dict:
        out = {}
        if self.lstm_J is not None:
            out["lstm_J.W"] = self.lstm_J.W
            out["lstm_J.b"] = self.lstm_J.b
        for name in ("fc1", "lstm_H", "fc2", "fc3"):
            layer = getattr(self, name)
            out[f"{name}.W"] = layer.W
            out[f"{name}.b"] = layer.b
        return out

    def layer_sizes(self) -> dict:
        out = {}
        if self.lstm_J is not None:
            out["lstm_J"] = (self.lstm_J.input_dim, self.lstm_J.hidden_dim)
        out["fc1"] = (self.fc1.in_dim, self.fc1.out_dim)
        out["lstm_H"] = (self.lstm_H.input_dim, self.lstm_H.hidden_dim)
        out["fc2"] = (self.fc2.in_dim, self.fc2.out_dim)
        out["fc3"] = (self.fc3.in_dim, self.fc3.out_dim)
        return out

    def copy(self) -> "HighlightNet":
        net = build_network(self.spec)
        for k, v in self.params().items():
            net.params()[k][...] = v
        return net

    # -- forward / backward ------------------------------------------------

    def joint_features(self, inputs: VideoInputs, tape: Tape | None = None) -> np.ndarray:
        """``(T, x_dim)`` matrix of ``x_t = (h_t a_t)``; empty columns without a joint stream."""
        T = inputs.T
        if self.lstm_J is None:
            return np.zeros((T, 0))
        if inputs.joint_dim != self.lstm_J.input_dim:
            raise ShapeError(f"joint vectors have {inputs.joint_dim} values, lstm_J expects {self.lstm_J.input_dim}")
        if inputs.frames.shape[0] == 0:
            h = np.zeros((T, self.lstm_J.hidden_dim))
        else:
            h = lstm_run(self.lstm_J, inputs.frames, inputs.mask, tape, "lstm_J")[-1]
        return np.concatenate([h, inputs.activity], axis=1)

    def fused(self, inputs: VideoInputs, tape: Tape | None = None) -> np.ndarray:
        x = self.joint_features(inputs, tape)
        y = inputs.holistic if self.spec.y_dim > 0 else np.zeros((inputs.T, 0))
        z = np.concatenate([x, y], axis=1)
        if z.shape[1] != self.fc1.in_dim:
            raise ShapeError(f"fused feature has {z.shape[1]} values, fc1 expects {self.fc1.in_dim}")
        return z

    def logits(self, inputs: VideoInputs, tape: Tape | None = None) -> np.ndarray:
        z = self.fused(inputs, tape)
        z1 = fc_apply(self.fc1, z, tape, "fc1")
        hh = lstm_run(self.lstm_H, z1[:, None, :], None, tape, "lstm_H")[:, 0, :]
        z2 = fc_apply(self.fc2, hh, tape, "fc2")
        return fc_apply(self.fc3, z2, tape, "fc3")

    def loss(self, inputs: VideoInputs, labels) -> float:
        """Summed cross-entropy over the video's seconds."""
        loss, _ = softmax_ce(self.logits(inputs), targets_from_labels(labels))
        return loss

    def loss_and_grads(self, inputs: VideoInputs, labels) -> tuple[float, dict, np.ndarray]:
        labels = np.asarray(labels)
        if len(labels) != inputs.T:
            raise AlignmentError(f"{inputs.video_id}: {inputs.T} segments but {len(labels)} labels")
        tape = Tape()
        logits = self.logits(inputs, tape)
        targets = targets_from_labels(labels)
        loss, probs = softmax_ce(logits, targets)
        grads = {}
        d = softmax_ce_grad(probs, targets)
        d, grads["fc3.W"], grads["fc3.b"] = fc_backward(self.fc3, d, tape["fc3"])
        d, grads["fc2.W"], grads["fc2.b"] = fc_backward(self.fc2, d, tape["fc2"])
        dX, grads["lstm_H.W"], grads["lstm_H.b"] = lstm_run_backward(self.lstm_H, d[:, None, :], tape["lstm_H"])
        dz, grads["fc1.W"], grads["fc1.b"] = fc_backward(self.fc1, dX[:, 0, :], tape["fc1"])
        if self.lstm_J is not None:
            HJ = self.lstm_J.hidden_dim
            if "lstm_J" in tape:
                dHs = np.zeros((inputs.frames.shape[0], inputs.T, HJ))
                dHs[-1] = dz[:, :HJ]
                _, grads["lstm_J.W"], grads["lstm_J.b"] = lstm_run_backward(self.lstm_J, dHs, tape["lstm_J"])
            else:
                grads["lstm_J.W"] = np.zeros_like(self.lstm_J.W)
                grads["lstm_J.b"] = np.zeros_like(self.lstm_J.b)
        ordered = {k: grads[k] for k in self.params()}
        return loss, ordered, probs[:, INTERESTING]

    def predict(self, inputs: VideoInputs) -> np.ndarray:
        _, probs = softmax_ce(self.logits(inputs), np.zeros(inputs.T, dtype=np.int64))
        return probs[:, INTERESTING]

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.params(), topology=self.spec.variant, seed=self.spec.seed,
                        extra={"spec": _spec_dict(self.spec)})

    @classmethod
    def load(cls, path) -> "HighlightNet":
        params, meta = load_checkpoint(path)
        net = build_network(ModelSpec(**meta["spec"]))
        own = net.params()
        if set(own) != set(params):
            raise SpecError(f"checkpoint parameters {sorted(params)} do not match topology {sorted(own)}")
        for k, v in params.items():
            if own[k].shape != v.shape:
                raise SpecError(f"{k}: checkpoint shape {v.shape} != {own[k].shape}")
            own[k][...] = v
        return net


def _spec_dict(spec: ModelSpec) -> dict:
    d = asdict(spec)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def targets_from_labels(labels) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64)
    return np.where(lab == 1, INTERESTING, 1 - INTERESTING)


def build_network(spec: ModelSpec) -> HighlightNet:
    """Instantiate a network with seeded Glorot-uniform weights and forget bias 1."""
    rng = np.random.default_rng(spec.seed)
    lstm_J = LstmCell.init(*spec.lstm_J, rng) if spec.lstm_J else None
    fc1 = DenseLayer.init(*spec.fc1, SIGMOID, rng)
    lstm_H = LstmCell.init(*spec.lstm_H, rng)
    fc2 = DenseLayer.init(*spec.fc2, SIGMOID, rng)
    fc3 = DenseLayer.init(*spec.fc3, NONE, rng)
    return HighlightNet(spec, lstm_J, fc1, lstm_H, fc2, fc3)


# ----------------------------------------------------------------- training --

@dataclass
class TrainConfig:
    alpha: float = 0.001
    max_epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-5
    clip_norm: float = 5.0
    shuffle_seed: int = 0
    target_loss: float = 0.0

    def validate(self) -> "TrainConfig":
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        return self


@dataclass
class TrainResult:
    model: HighlightNet
    history: list = field(default_factory=list)  # (epoch, mean per-second loss)
    stopped_early: bool = False
    converged: bool = True
    message: str = ""


def train(model: HighlightNet, dataset: Sequence[tuple[VideoInputs, np.ndarray]], cfg: TrainConfig | None = None,
          callback=None) -> TrainResult:
    """Adam on the summed cross-entropy, one video per update with full BPTT.

    The reported loss per epoch is the mean per-second cross-entropy over
    the epoch's updates. Training stops after ``max_epochs``, when the loss
    fails to improve by ``min_delta`` for ``patience`` epochs, or when it drops
    below ``target_loss``.
    """
    cfg = (cfg or TrainConfig()).validate()
    for inputs, labels in dataset:
        if len(labels) != inputs.T:
            raise AlignmentError(f"{inputs.video_id}: {inputs.T} segments but {len(labels)} labels")
    rng = np.random.default_rng(cfg.shuffle_seed)
    state = AdamState(alpha=cfg.alpha)
    params = model.params()
    total_seconds = sum(inputs.T for inputs, _ in dataset)
    result = TrainResult(model)
    best = math.inf
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        running = 0.0
        for i in rng.permutation(len(dataset)):
            inputs, labels = dataset[i]
            loss, grads, _ = model.loss_and_grads(inputs, labels)
            if not math.isfinite(loss):
                result.converged = False
                result.message = f"non-finite loss at epoch {epoch} on {inputs.video_id}"
                raise NumericalError(result.message)
            clip_by_global_norm(grads, cfg.clip_norm)
            adam_update(state, params, grads)
            running += loss
        epoch_loss = running / max(total_seconds, 1)
        result.history.append((epoch, epoch_loss))
        if callback is not None:
            callback(epoch, epoch_loss)
        if epoch_loss < best - cfg.min_delta:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
        if epoch_loss < cfg.target_loss:
            result.message = f"reached target loss at epoch {epoch}"
            break
        if stale >= cfg.patience:
            result.stopped_early = True
            result.message = f"no improvement for {cfg.patience} epochs"
            break
    else:
        result.message = f"stopped after max_epochs={cfg.max_epochs}"
    first = result.history[0][1]
    last = result.history[-1][1]
    result.converged = last <= first
    log.debug("train: %s, loss %.4f -> %.4f", result.message, first, last)
    return result


# --------------------------------------------------------------- prediction --

@dataclass
class ProbabilityCurve:
    video_id: str
    p: np.ndarray

    def __len__(self) -> int:
        return len(self.p)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,p_t\n")
            for t, v in enumerate(self.p):
                fh.write(f"{t},{v:.17g}\n")

    @classmethod
    def load(cls, path, video_id: str | None = None) -> "ProbabilityCurve":
        vals = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("t,"):
                    continue
                t, p = line.split(",")
                vals[int(t)] = float(p)
        if sorted(vals) != list(range(len(vals))):
            raise ValueError(f"{path}: curve seconds must be 0..T-1")
        p = np.array([vals[t] for t in range(len(vals))])
        if np.any((p < 0) | (p > 1)):
            raise ValueError(f"{path}: probabilities outside [0, 1]")
        return cls(video_id or Path(path).stem, p)


def predict_curve(model: HighlightNet, inputs: VideoInputs) -> ProbabilityCurve:
    """Per-second probability of "interesting"; lstm_H starts from zero for every video."""
    return ProbabilityCurve(inputs.video_id, model.predict(inputs))
