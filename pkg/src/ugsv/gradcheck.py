"""Finite-difference check of the whole network on a tiny synthetic corpus."""
from __future__ import annotations

import numpy as np

from .classifier import HighlightNet, ModelSpec, build_network
from .dataset import SynthConfig, synth_generate
from .evaluation import derive_seed
from .nncore import GradCheckReport, grad_check
from .pipeline import prepare_corpus

TOY_K = 5


def toy_corpus(seed: int = 0, videos: int = 2, duration: int = 6, dims: int = 3, fps: float = 5.0):
    """Two short videos with a small codebook; returns ``[(VideoInputs, labels)]``."""
    cfg = SynthConfig(num_videos=videos, duration=duration, fps=fps, dims=dims, highlight_density=0.4,
                      descriptors_per_segment=6, descriptor_dim=4, background_modes=3, action_modes=2)
    raw = synth_generate(cfg, derive_seed(seed, "toy"))
    corpus, _ = prepare_corpus(raw, K=TOY_K, codebook_seed=derive_seed(seed, "toy-codebook"))
    return [(inputs, labels["NE"]) for inputs, labels in corpus]


def toy_spec(dims: int = 3, seed: int = 0) -> ModelSpec:
    du = 2 * (15 if dims == 3 else 13) * dims
    return ModelSpec("CUSTOM", lstm_J=(du, 6), fc1=(6 + 2 + TOY_K, 8), lstm_H=(8, 5), fc2=(5, 4), fc3=(4, 2),
                     seed=seed)


def corpus_loss_and_grads(net: HighlightNet, data) -> tuple[float, dict]:
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in net.params().items()}
    for inputs, labels in data:
        loss, g, _ = net.loss_and_grads(inputs, labels)
        total += loss
        for k in grads:
            grads[k] += g[k]
    return total, grads


def toy_gradient_check(seed: int = 0, tolerance: float = 1e-4, epsilon: float = 1e-5,
                       max_coords: int | None = None) -> GradCheckReport:
    data = toy_corpus(seed)
    net = build_network(toy_spec(seed=derive_seed(seed, "toy-init")))
    _, grads = corpus_loss_and_grads(net, data)
    params = net.params()

    def loss_fn():
        return sum(net.loss(inputs, labels) for inputs, labels in data)

    return grad_check(loss_fn, params, grads, epsilon, tolerance, max_coords, seed)
