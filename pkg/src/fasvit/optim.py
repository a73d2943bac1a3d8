"""Adam / AdamW updates and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 2e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = False  # True -> AdamW


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, hyper: AdamHyper):
    """One Adam(W) update in place on ``params``; returns ``(params, state)``.

    Plain Adam folds weight decay into the gradient (L2); AdamW applies
    ``p <- p - lr * wd * p`` separately from the moment update.
    """
    state.step += 1
    t = state.step
    lr = hyper.lr
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if hyper.weight_decay and not hyper.decoupled:
            g = g + hyper.weight_decay * p
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        state.m[name], state.v[name] = m, v
        if hyper.weight_decay and hyper.decoupled:
            p -= lr * hyper.weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return params, state


def adamw_step(params, grads, state, hyper: AdamHyper):
    return adam_step(params, grads, state, AdamHyper(**{**hyper.__dict__, "decoupled": True}))


def lr_schedule(step: int, total: int, warmup: int, base_lr: float) -> float:
    """Linear warmup 0 -> base over ``warmup`` steps, then cosine decay to 0 at ``total``."""
    if warmup > total:
        raise ValueError(f"warmup ({warmup}) exceeds total steps ({total})")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < warmup:
        return base_lr * step / warmup
    if total == warmup:
        return base_lr
    progress = (step - warmup) / (total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Optimizer over named Tensors; only touches the names it was given."""

    def __init__(self, named_params: dict[str, Tensor], hyper: AdamHyper, clip_norm: float | None = None):
        self.params = dict(named_params)
        self.hyper = hyper
        self.state = AdamState()
        self.clip_norm = clip_norm

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        if self.clip_norm is not None and grads:
            total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                grads = {n: g * scale for n, g in grads.items()}
        hyper = self.hyper if lr is None else AdamHyper(**{**self.hyper.__dict__, "lr": lr})
        arrays = {n: self.params[n].data for n in grads}
        adam_step(arrays, grads, self.state, hyper)
