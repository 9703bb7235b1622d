"""Adam with a linear warmup / linear decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .entity_graph import round_half_up
from .neural import ModelState, RowGrad

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class LinearSchedule:
    """``peak*t/w`` up to ``w`` warmup steps, then linear decay to 0 at ``T``."""
    peak: float
    total_steps: int
    warmup_steps: int

    @classmethod
    def from_ratio(cls, peak: float, total_steps: int, warmup_ratio: float) -> "LinearSchedule":
        if not 0.0 <= warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        return cls(peak, total_steps, round_half_up(warmup_ratio * total_steps))

    def __call__(self, t: int) -> float:
        T, w = self.total_steps, self.warmup_steps
        if t <= w:
            return self.peak * t / w
        if T <= w:
            return 0.0
        return max(0.0, self.peak * (T - t) / (T - w))


def check_finite(grads: dict) -> None:
    for name, g in grads.items():
        values = g.values if isinstance(g, RowGrad) else g
        if not np.all(np.isfinite(values)):
            bad = int(np.size(values) - np.isfinite(values).sum())
            raise FloatingPointError(f"non-finite gradient in {name} ({bad} entries)")


def adam_step(state: ModelState, grads: dict, schedule: LinearSchedule,
              names: Optional[Iterable[str]] = None,
              lr_scale: Optional[dict[str, float]] = None) -> float:
    """Apply one Adam update in place; returns the scheduled learning rate.

    Only parameters in ``names`` (default: those present in ``grads``) move.
    ``lr_scale`` multiplies the scheduled rate for individual parameters.
    """
    check_finite(grads)
    state.step += 1
    t = state.step
    lr = schedule(t)
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name in (grads if names is None else names):
        g = grads[name]
        step_lr = lr * lr_scale.get(name, 1.0) if lr_scale else lr
        p, m, v = state.params[name], state.m[name], state.v[name]
        if isinstance(g, RowGrad):
            state.touched[g.rows] = True
            rows = np.flatnonzero(state.touched)
            dense = np.zeros((len(rows), p.shape[1]))
            dense[np.searchsorted(rows, g.rows)] = g.values
            m_r = BETA1 * m[rows] + (1.0 - BETA1) * dense
            v_r = BETA2 * v[rows] + (1.0 - BETA2) * dense * dense
            m[rows] = m_r
            v[rows] = v_r
            p[rows] -= step_lr * (m_r / c1) / (np.sqrt(v_r / c2) + EPS)
        else:
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            p -= step_lr * (m / c1) / (np.sqrt(v / c2) + EPS)
    return lr
