"""Randomized finite-difference sweep over every model kind and training loss."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .models import ModelConfig, ModelKind, build_model, logits_graph

# Stacked attention layers accumulate enough round-off in the loss that a
# step of 1e-5 leaves central differences noisier than their truncation error.
SWEEP_EPS = 1e-4


@dataclass(frozen=True)
class GradCheckCase:
    kind: ModelKind
    seed: int
    config: ModelConfig
    batch: int
    with_distillation: bool
    max_rel_error: float
    n_params: int


def random_config(kind: ModelKind, rng: np.random.Generator) -> ModelConfig:
    """Small random architecture (every width well under 64) so the sweep stays fast."""
    input_dim = int(rng.integers(2, 9))
    heads = int(rng.choice([1, 2, 4]))
    return ModelConfig(
        input_dim=input_dim,
        hidden_dim=heads * int(rng.integers(1, 5)),
        num_layers=int(rng.integers(1, 3)),
        num_heads=heads,
        dropout_rate=float(rng.choice([0.0, 0.2])),
        mlp_hidden=int(rng.integers(2, 9)),
        deep_hiddens=tuple(int(w) for w in rng.integers(2, 9, size=3)),
        rnn_hidden=int(rng.integers(2, 7)),
    )


def check_case(kind: ModelKind, seed: int, eps: float = SWEEP_EPS) -> GradCheckCase:
    rng = np.random.default_rng(seed)
    config = random_config(kind, rng)
    model = build_model(kind, config, seed)
    batch = int(rng.integers(1, 5))
    x = rng.normal(size=(batch, config.input_dim))
    y = rng.integers(0, 2, size=batch)
    with_distillation = bool(seed % 2)
    old = rng.normal(size=(batch, 2)) * 2.0
    lam, temperature = float(rng.uniform(0.5, 2.0)), float(rng.uniform(1.0, 3.0))
    dropout_seed = int(rng.integers(1 << 31))

    def loss_fn(p, inputs):
        xb, yb = inputs
        # identical dropout mask on every call keeps the loss a smooth function of p
        out = logits_graph(kind, config, p, xb, True, np.random.default_rng(dropout_seed))
        loss = nn.cross_entropy(out, yb)
        if with_distillation:
            loss = nn.add(loss, nn.mul(nn.distillation(old, out, temperature), lam))
        return loss

    err = nn.finite_diff_check(loss_fn, model.params, (x, y), eps)
    return GradCheckCase(kind, seed, config, batch, with_distillation, err, model.params.size)


def gradient_suite(seeds: int = 20, kinds=tuple(ModelKind), eps: float = SWEEP_EPS):
    """Run :func:`check_case` for ``seeds`` seeds of every kind; returns (cases, seconds)."""
    start = time.perf_counter()
    cases = [check_case(kind, seed, eps) for kind in kinds for seed in range(seeds)]
    return cases, time.perf_counter() - start
