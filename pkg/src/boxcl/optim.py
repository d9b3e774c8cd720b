"""Adam optimizer and the inverse-square-root learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


def inverse_sqrt_lr(step: int, warmup: int, base_lr: float) -> float:
    """Linear warmup to base_lr at `warmup`, then base_lr * sqrt(warmup/step)."""
    if warmup <= 0:
        raise ValueError(f"warmup must be positive, got {warmup}")
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if step <= warmup:
        return base_lr * step / warmup
    return base_lr * (warmup / step) ** 0.5


class Adam:
    """Standard Adam over a ParamStore, with optional per-parameter freezing.

    `frozen` names are skipped entirely; `update_masks` allows row-level
    freezing (elements where the mask is False never move). State arrays
    mirror parameter shapes; the timestep increments once per `step` call.
    """

    def __init__(
        self,
        params: ParamStore,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-8,
        frozen: set[str] | None = None,
        update_masks: dict[str, np.ndarray] | None = None,
    ):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.frozen = set(frozen or ())
        self.update_masks = dict(update_masks or {})
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if name in self.frozen:
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            mask = self.update_masks.get(name)
            if mask is not None:
                g = g * mask
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if mask is not None:
                update = update * mask
            p.data = p.data - update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=np.float64)
            self.v[k] = np.array(state["v"][k], dtype=np.float64)
