"""Parameter updates: SGD with momentum and Adam, with epoch-level schedules.

One optimizer owns both the dense parameters and the scalar exponent biases;
the biases are updated with the same rule and learning rate as the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..quantizer import QuantizerState


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine annealing from base_lr to 0 over total_epochs."""

    base_lr: float
    total_epochs: int

    def lr_at(self, epoch: int) -> float:
        if self.total_epochs <= 0:
            return self.base_lr
        frac = min(max(epoch, 0), self.total_epochs) / self.total_epochs
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class MultiStepSchedule:
    """Multiply the rate by gamma every ``interval`` epochs."""

    base_lr: float
    interval: int
    gamma: float = 0.5

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.gamma ** (max(epoch, 0) // self.interval)


class Optimizer:
    """SGD-momentum / Adam over parameters plus scalar exponent biases.

    ``quant_states`` is a list of (key, QuantizerState); a bias is updated
    only while its state is learnable and set, but slots exist from the start
    so late-joining biases need no re-allocation.
    """

    def __init__(
        self,
        params,
        quant_states=(),
        algorithm: str = "sgd",
        lr: float = 0.01,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        schedule=None,
    ):
        if algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer algorithm {algorithm!r}")
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.quant_states: list[tuple[str, QuantizerState]] = list(quant_states)
        self.algorithm = algorithm
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.betas = betas
        self.eps = float(eps)
        self.schedule = schedule
        self.t = 0
        if algorithm == "sgd":
            self._vel = [np.zeros_like(p.data) for p in self.params]
            self._vel_s = [0.0 for _ in self.quant_states]
        else:
            self._m = [np.zeros_like(p.data) for p in self.params]
            self._v = [np.zeros_like(p.data) for p in self.params]
            self._m_s = [0.0 for _ in self.quant_states]
            self._v_s = [0.0 for _ in self.quant_states]

    def set_epoch(self, epoch: int) -> None:
        if self.schedule is not None:
            self.lr = self.schedule.lr_at(epoch)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
        for _, s in self.quant_states:
            s.grad_e0 = 0.0

    def step(self) -> None:
        lr = self.lr
        if self.algorithm == "sgd":
            mu, wd = self.momentum, self.weight_decay
            for p, v in zip(self.params, self._vel):
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                if wd:
                    g = g + wd * p.data
                v *= mu
                v += g
                p.data -= lr * v
            for (_, s), i in zip(self.quant_states, range(len(self._vel_s))):
                if not (s.learnable and s.is_set):
                    continue
                g = s.grad_e0
                self._vel_s[i] = mu * self._vel_s[i] + g
                s.e0 = s.e0 - lr * self._vel_s[i]
        else:
            self.t += 1
            b1, b2 = self.betas
            bc1 = 1.0 - b1 ** self.t
            bc2 = 1.0 - b2 ** self.t
            wd = self.weight_decay
            for p, m, v in zip(self.params, self._m, self._v):
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                if wd:
                    g = g + wd * p.data
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            for i, (_, s) in enumerate(self.quant_states):
                if not (s.learnable and s.is_set):
                    continue
                g = s.grad_e0
                self._m_s[i] = b1 * self._m_s[i] + (1.0 - b1) * g
                self._v_s[i] = b2 * self._v_s[i] + (1.0 - b2) * g * g
                s.e0 = s.e0 - lr * (self._m_s[i] / bc1) / (
                    math.sqrt(self._v_s[i] / bc2) + self.eps
                )

    # -- checkpoint support -------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.algorithm == "sgd":
            for p, v in zip(self.params, self._vel):
                out[f"{p.name}#vel"] = v
        else:
            for p, m, v in zip(self.params, self._m, self._v):
                out[f"{p.name}#m"] = m
                out[f"{p.name}#v"] = v
        return out

    def state_scalars(self) -> dict[str, float]:
        out: dict[str, float] = {"#t": float(self.t)}
        if self.algorithm == "sgd":
            for (key, _), v in zip(self.quant_states, self._vel_s):
                out[f"{key}#vel"] = v
        else:
            for i, (key, _) in enumerate(self.quant_states):
                out[f"{key}#m"] = self._m_s[i]
                out[f"{key}#v"] = self._v_s[i]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], scalars: dict[str, float]) -> None:
        self.t = int(scalars.get("#t", 0.0))
        if self.algorithm == "sgd":
            for p, v in zip(self.params, self._vel):
                v[...] = tensors[f"{p.name}#vel"]
            for i, (key, _) in enumerate(self.quant_states):
                self._vel_s[i] = float(scalars.get(f"{key}#vel", 0.0))
        else:
            for p, m, v in zip(self.params, self._m, self._v):
                m[...] = tensors[f"{p.name}#m"]
                v[...] = tensors[f"{p.name}#v"]
            for i, (key, _) in enumerate(self.quant_states):
                self._m_s[i] = float(scalars.get(f"{key}#m", 0.0))
                self._v_s[i] = float(scalars.get(f"{key}#v", 0.0))
