"""Small dense network core with exact gradients.

Layers are plain dataclasses holding float64 arrays. Forward functions can
record what the backward pass needs into a :class:`Tape`; backward functions
take the recorded entry and return input and parameter gradients.
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels

SIGMOID = "SIGMOID"
NONE = "NONE"


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class Tape(dict):
    """Forward activations keyed by layer name."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ------------------------------------------------------------------ dense --

@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = NONE

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        return cls(glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)), np.zeros(out_dim), activation)


def fc_apply(layer: DenseLayer, x, tape: Tape | None = None, name: str = "fc") -> np.ndarray:
    """``activation(x @ W + b)`` for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"{name}: input has {x.shape[-1]} features, layer expects {layer.in_dim}")
    out = x @ layer.W + layer.b
    if layer.activation == SIGMOID:
        out = sigmoid(out)
    if tape is not None:
        tape[name] = (x, out)
    return out


def fc_backward(layer: DenseLayer, dout: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, out = cache
    if layer.activation == SIGMOID:
        dout = dout * out * (1.0 - out)
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    dW = x2.T @ d2
    db = d2.sum(axis=0)
    dx = dout @ layer.W.T
    return dx, dW, db


# ------------------------------------------------------------------- LSTM --

@dataclass
class LstmCell:
    """Forget-gate LSTM without peepholes.

    ``W`` stacks the input and recurrent weights, ``(input_dim + hidden_dim, 4 * hidden_dim)``,
    with gate blocks ordered input, forget, output, candidate.
    """

    W: np.ndarray
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[1] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[0] - self.hidden_dim

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, forget_bias: float = 1.0) -> "LstmCell":
        blocks = [glorot_uniform(rng, input_dim + hidden_dim, hidden_dim, (input_dim + hidden_dim, hidden_dim))
                  for _ in range(4)]
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = forget_bias
        return cls(np.concatenate(blocks, axis=1), b)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmCell":
        return cls(np.zeros((input_dim + hidden_dim, 4 * hidden_dim)), np.zeros(4 * hidden_dim))

    def zero_state(self, batch: int | None = None):
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return np.zeros(shape), np.zeros(shape)


def lstm_step(cell: LstmCell, x, state):
    """One LSTM update. ``x`` may be a vector or a ``(batch, input_dim)`` array."""
    x = np.asarray(x, dtype=np.float64)
    h, c = state
    if x.shape[-1] != cell.input_dim:
        raise ShapeError(f"lstm: input has {x.shape[-1]} features, cell expects {cell.input_dim}")
    if np.shape(h)[-1] != cell.hidden_dim or np.shape(c)[-1] != cell.hidden_dim:
        raise ShapeError(f"lstm: state must have {cell.hidden_dim} units")
    H = cell.hidden_dim
    a = np.concatenate([x, h], axis=-1) @ cell.W + cell.b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    o = sigmoid(a[..., 2 * H:3 * H])
    g = np.tanh(a[..., 3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def lstm_run(cell: LstmCell, X, mask=None, tape: Tape | None = None, name: str = "lstm"):
    """Feed ``(steps, batch, input_dim)`` through ``cell`` from a zero state.

    Returns the carried hidden states ``(steps, batch, hidden_dim)``. With a
    mask, padded steps leave the state untouched so ``Hs[-1]`` is each
    sequence's state after its own last real step.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != cell.input_dim:
        raise ShapeError(f"{name}: expected (steps, batch, {cell.input_dim}) input, got {X.shape}")
    S, B, _ = X.shape
    if mask is None:
        mask = np.ones((S, B))
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    h0, c0 = cell.zero_state(B)
    Hs, Cs, G, TC = kernels.lstm_forward(cell.W, cell.b, X, mask, h0, c0)
    if tape is not None:
        tape[name] = (X, Hs, h0, G, TC, Cs, c0, mask)
    return Hs


def lstm_run_backward(cell: LstmCell, dHs, cache):
    """Returns ``(dX, dW, db)`` for a :func:`lstm_run` call."""
    X, Hs, h0, G, TC, Cs, c0, mask = cache
    zero = np.zeros_like(c0)
    dW, db, dX, _, _ = kernels.lstm_backward(cell.W, X, Hs, h0, G, TC, Cs, c0, mask,
                                             np.ascontiguousarray(dHs, dtype=np.float64), zero, zero)
    return dX, dW, db


# ----------------------------------------------------------------- losses --

def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits, target):
    """Cross-entropy of a softmax over the last axis.

    ``target`` holds class indices. Returns ``(loss, probs)``; for a batch the
    loss is the sum over rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - np.max(logits, axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    target = np.asarray(target)
    if logits.ndim == 1:
        return float(-logp[int(target)]), probs
    picked = logp[np.arange(logits.shape[0]), target.astype(np.int64)]
    return float(-picked.sum()), probs


def softmax_ce_grad(probs, target):
    g = np.array(probs, dtype=np.float64, copy=True)
    if g.ndim == 1:
        g[int(target)] -= 1.0
    else:
        g[np.arange(g.shape[0]), np.asarray(target, dtype=np.int64)] -= 1.0
    return g


# ------------------------------------------------------------------- Adam --

@dataclass
class AdamState:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: dict, grads: dict) -> dict:
    """Bias-corrected Adam step, applied to ``params`` in place."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"adam: gradient for {name} has shape {grads[name].shape}, parameter {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``. Returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --------------------------------------------------------- gradient check --

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get) if self.per_param else ""

    @property
    def failing(self) -> list[str]:
        return [k for k, v in self.per_param.items() if not v < self.tolerance]

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} max_rel_error={self.max_rel_error:.3e} "
                 f"tolerance={self.tolerance:.1e} coords={self.checked}"]
        for k, v in self.per_param.items():
            lines.append(f"  {k:<12s} {v:.3e}{'' if v < self.tolerance else '  <-- FAIL'}")
        return "\n".join(lines)


def grad_check(loss_fn: Callable[[], float], params: dict, grads: dict, epsilon: float = 1e-5,
               tolerance: float = 1e-4, max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` must read the arrays in ``params``; each coordinate is nudged in
    place and restored. ``max_coords`` caps the coordinates checked per block
    (sampled without replacement from a seeded generator).
    Relative error is ``|a - n| / max(1, |a|, |n|)``.
    """
    rng = np.random.default_rng(seed)
    per_param = {}
    checked = 0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = loss_fn()
            flat[i] = orig - epsilon
            lm = loss_fn()
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{i}]")
            num = (lp - lm) / (2.0 * epsilon)
            a = float(g[i])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
        per_param[name] = worst
        checked += len(idx)
    return GradCheckReport(max(per_param.values(), default=0.0), per_param, tolerance, checked)


# ------------------------------------------------------------- checkpoint --

def save_checkpoint(path, params: dict, topology: str, seed: int, extra: dict | None = None) -> None:
    """Write parameters plus a JSON header into one ``.npz`` file."""
    meta = {"topology": topology, "seed": int(seed), "params": [[k, list(v.shape)] for k, v in params.items()]}
    if extra:
        meta.update(extra)
    arrays = {f"p::{k}": np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    save_npz_stable(path, arrays)


def save_npz_stable(path, arrays: dict) -> None:
    """Like ``np.savez`` but byte-identical for identical arrays (fixed zip timestamps, sorted keys)."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            payload = io.BytesIO()
            np.lib.format.write_array(payload, np.asanyarray(arrays[key]), allow_pickle=False)
            zf.writestr(info, payload.getvalue())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k[3:]: data[k].copy() for k in data.files if k.startswith("p::")}
    ordered = {k: params[k] for k, _ in meta["params"]}
    return ordered, meta
