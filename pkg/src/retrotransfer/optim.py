"""Adam and the two learning-rate schedules used by the training regimes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .model import ParameterSet


class OptimError(Exception):
    pass


class ShapeMismatch(OptimError):
    pass


class NonFiniteGradient(OptimError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 1e-3
    t: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def moments(self) -> dict[str, torch.Tensor]:
        out = {f"m.{k}": t for k, t in self.m.items()}
        out.update({f"v.{k}": t for k, t in self.v.items()})
        return out


def adam_step(
    params: ParameterSet,
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lr: float | None = None,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns new parameter and state objects."""
    lr = state.base_lr if lr is None else lr
    if set(grads) != set(params.tensors):
        raise ShapeMismatch("gradient names differ from parameter names")
    names = list(params.tensors)
    thetas = [params.tensors[k] for k in names]
    gs = [grads[k] for k in names]
    for k, theta, g in zip(names, thetas, gs):
        if g.shape != theta.shape:
            raise ShapeMismatch(f"{k}: gradient shape {tuple(g.shape)} vs {tuple(theta.shape)}")
    finite = torch.isfinite(torch.stack(torch._foreach_norm(gs)))
    if not bool(finite.all()):
        bad = names[int((~finite).nonzero()[0])]
        raise NonFiniteGradient(f"non-finite gradient in {bad}")
    t = state.t + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    # one fused pass per moment instead of a loop over tensors
    with torch.no_grad():
        m = [state.m[k] if k in state.m else torch.zeros_like(p) for k, p in zip(names, thetas)]
        v = [state.v[k] if k in state.v else torch.zeros_like(p) for k, p in zip(names, thetas)]
        m = torch._foreach_mul(m, state.beta1)
        torch._foreach_add_(m, gs, alpha=1 - state.beta1)
        v = torch._foreach_mul(v, state.beta2)
        torch._foreach_addcmul_(v, gs, gs, value=1 - state.beta2)
        denom = torch._foreach_div(v, c2)
        torch._foreach_sqrt_(denom)
        torch._foreach_add_(denom, state.eps)
        step = torch._foreach_div(m, denom)
        new_p = torch._foreach_add(thetas, step, alpha=-lr / c1)
    new_state = AdamState(state.beta1, state.beta2, state.eps, state.base_lr, t, dict(zip(names, m)), dict(zip(names, v)))
    return ParameterSet(dict(zip(names, new_p)), params.step + 1), new_state


def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float | None) -> float:
    """Scale ``grads`` in place to a global L2 norm of at most ``max_norm``; returns the pre-clip norm."""
    if not grads:
        return 0.0
    norm = math.sqrt(float(torch.stack(torch._foreach_norm(list(grads.values()))).double().square().sum()))
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        torch._foreach_mul_(list(grads.values()), scale)
    return norm


@dataclass(frozen=True)
class ScheduleState:
    kind: str = "cyclic"  # "cyclic" or "inverse_sqrt"
    warmup_steps: int = 100
    peak_lr: float = 1e-3
    min_lr: float = 1e-5
    cycle_period: int = 500

    def validate(self) -> None:
        if self.kind not in ("cyclic", "inverse_sqrt"):
            raise OptimError(f"unknown schedule kind {self.kind!r}")
        if self.warmup_steps < 1:
            raise OptimError("warmup_steps must be >= 1")
        if not self.peak_lr > self.min_lr >= 0:
            raise OptimError("need peak_lr > min_lr >= 0")
        if self.cycle_period < 2:
            raise OptimError("cycle_period must be >= 2")

    def lr(self, step: int) -> float:
        return cyclic_lr(self, step) if self.kind == "cyclic" else inverse_sqrt_lr(self, step)

    @classmethod
    def for_budget(cls, kind: str, iterations: int, peak_lr: float = 1e-3, min_lr: float = 1e-5) -> ScheduleState:
        """Default schedule for a run of ``iterations`` steps: 2% warm-up, 10% cycle period."""
        return cls(kind, max(1, round(0.02 * iterations)), peak_lr, min_lr, max(2, round(0.10 * iterations)))


def cyclic_lr(state: ScheduleState, step: int) -> float:
    """Linear warm-up to ``peak_lr`` then a triangular wave down to ``min_lr`` and back."""
    w = state.warmup_steps
    if step < w:
        return state.peak_lr * (step + 1) / w
    phase = ((step - w) % state.cycle_period) / state.cycle_period
    tri = 2 * phase if phase <= 0.5 else 2 * (1 - phase)
    return state.peak_lr - (state.peak_lr - state.min_lr) * tri


def inverse_sqrt_lr(state: ScheduleState, step: int) -> float:
    w = state.warmup_steps
    s = step + 1
    return state.peak_lr * min(s**-0.5 * w**0.5, s / w)
