"""Adam optimizer with global-norm gradient clipping and LR schedules."""

from __future__ import annotations

import numpy as np

from ._kernels import adam_update, sumsq


def global_grad_norm(params):
    total = 0.0
    for t in params.tensors.values():
        if t.grad is not None:
            total += sumsq(t.grad)
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm):
    """Scale all gradients so the global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for t in params.tensors.values():
            if t.grad is not None:
                t.grad *= np.asarray(scale, t.grad.dtype)
    return norm


class Adam:
    """Standard Adam (b1=0.9, b2=0.999, eps=1e-8), decoupled weight decay."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}

    def step(self, params, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for k, t in params.tensors.items():
            g = t.grad
            if g is None:
                continue
            adam_update(t.data, g, self.m[k], self.v[k], lr, self.beta1,
                        self.beta2, self.eps, bias1, bias2, self.weight_decay)

    def state_tensors(self):
        """Flat view of optimizer state for checkpointing."""
        out = {}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, state):
        for k in list(self.m.keys()):
            self.m[k] = state[f"m.{k}"].copy()
            self.v[k] = state[f"v.{k}"].copy()


def lr_at(step, total_steps, lr0, schedule="constant", floor=1e-5):
    """Learning rate at a step: constant, or linear decay from lr0 to floor."""
    if schedule == "constant":
        return lr0
    if schedule == "linear":
        if total_steps <= 1:
            return floor
        frac = min(max(step / (total_steps - 1), 0.0), 1.0)
        return lr0 + (floor - lr0) * frac
    raise ValueError(f"unknown lr schedule '{schedule}'")
