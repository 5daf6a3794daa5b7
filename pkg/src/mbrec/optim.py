"""Gradients, clipping, Adam, and a finite-difference gradient audit.

Gradients come from reverse-mode autodiff over the forward graph; the
optimizer itself is written out explicitly so its update rule and state
layout stay pinned down for checkpointing.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass, field

import torch

from .model import ParameterSet


class GradientError(RuntimeError):
    """Raised when a gradient turns non-finite; names the offending tensor."""


def compute_gradients(loss: torch.Tensor, params: ParameterSet) -> dict:
    named = params.trainable()
    grads = torch.autograd.grad(
        loss, [t for _, t in named], allow_unused=True
    )
    out = {}
    for (name, tensor), grad in zip(named, grads):
        if grad is None:
            grad = torch.zeros_like(tensor)
        if not torch.isfinite(grad).all():
            raise GradientError(f"non-finite gradient in tensor {name!r}")
        out[name] = grad
    return out


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients jointly so their global L2 norm is <= max_norm.

    Returns the pre-clip norm. max_norm <= 0 disables clipping.
    """
    total = torch.sqrt(
        sum((g.to(torch.float64) ** 2).sum() for g in grads.values())
    )
    norm = float(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g.mul_(scale)
    return norm


class Adam:
    """Bias-corrected Adam; epsilon sits outside the square root."""

    def __init__(self, params: ParameterSet, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: torch.zeros_like(t) for name, t in params.trainable()}
        self.v = {name: torch.zeros_like(t) for name, t in params.trainable()}

    def step(self, params: ParameterSet, grads: dict) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        with torch.no_grad():
            for name, tensor in params.trainable():
                g = grads[name]
                m = self.m[name]
                v = self.v[name]
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                update = (m / bc1) / ((v / bc2).sqrt() + self.eps)
                tensor.add_(update, alpha=-self.lr)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": {k: t.clone() for k, t in self.m.items()},
            "v": {k: t.clone() for k, t in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.step_count = int(state["step_count"])
        self.m = {k: t.clone() for k, t in state["m"].items()}
        self.v = {k: t.clone() for k, t in state["v"].items()}


@dataclass
class FDRecord:
    tensor: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class FDReport:
    max_rel_error: float
    worst: FDRecord
    jitter_rounds: int
    records: list = field(default_factory=list)


def finite_difference_check(
    loss_fn,
    params: ParameterSet,
    num_coords: int = 200,
    epsilon: float = 1e-4,
    seed: int = 0,
    gap_fn=None,
    gap_threshold: float = 1e-3,
    jitter: float = 0.2,
    max_jitter_rounds: int = 50,
) -> FDReport:
    """Compare autodiff gradients against central differences.

    loss_fn maps a ParameterSet to a scalar tensor and must be pure in the
    parameters (anything epoch-constant, like negative-weight tables, has to
    be fixed by the caller beforehand). When gap_fn is given, parameters are
    re-jittered until every nonlinearity input clears gap_threshold, keeping
    central differences on one linear piece. Relative error is
    |analytic - numeric| / (1 + |analytic|).
    """
    rng = random.Random(seed)
    gen = torch.Generator().manual_seed(seed)
    rounds = 0
    if gap_fn is not None:
        while gap_fn(params) < gap_threshold:
            rounds += 1
            if rounds > max_jitter_rounds:
                warnings.warn(
                    "could not move all nonlinearity inputs away from zero; "
                    "finite differences may straddle a kink",
                    stacklevel=2,
                )
                break
            jittered = params.clone()
            with torch.no_grad():
                for _, t in jittered.trainable():
                    noise = torch.empty_like(t).uniform_(
                        -jitter, jitter, generator=gen
                    )
                    t.add_(noise)
            params = jittered

    loss = loss_fn(params)
    grads = compute_gradients(loss, params)
    named = params.trainable()
    sizes = [t.numel() for _, t in named]
    total = sum(sizes)

    records = []
    with torch.no_grad():
        for _ in range(num_coords):
            flat = rng.randrange(total)
            for (name, tensor), size in zip(named, sizes):
                if flat < size:
                    break
                flat -= size
            view = tensor.view(-1)
            original = float(view[flat])
            view[flat] = original + epsilon
            plus = float(loss_fn(params))
            view[flat] = original - epsilon
            minus = float(loss_fn(params))
            view[flat] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            analytic = float(grads[name].view(-1)[flat])
            rel = abs(analytic - numeric) / (1.0 + abs(analytic))
            records.append(FDRecord(name, flat, analytic, numeric, rel))

    worst = max(records, key=lambda r: r.rel_error)
    return FDReport(
        max_rel_error=worst.rel_error,
        worst=worst,
        jitter_rounds=rounds,
        records=records,
    )
