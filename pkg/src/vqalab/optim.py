"""SGD and Adam with piecewise learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, Node


@dataclass
class Schedule:
    """Per-epoch learning rate: linear warmup then multiplicative decay steps.

    warmup ramps linearly from `warmup_start` to `base_lr` over `warmup_epochs`
    epochs; afterwards the rate is `base_lr` multiplied by `decay_factor` once
    per decay epoch passed.
    """

    base_lr: float
    warmup_start: float = 0.0
    warmup_epochs: int = 0
    decay_epochs: tuple = ()
    decay_factor: float = 1.0

    def lr_at(self, epoch: int) -> float:
        if self.warmup_epochs > 0 and epoch < self.warmup_epochs:
            frac = (epoch + 1) / self.warmup_epochs
            return self.warmup_start + (self.base_lr - self.warmup_start) * frac
        lr = self.base_lr
        for e in self.decay_epochs:
            if epoch >= e:
                lr *= self.decay_factor
        return lr


class Optimizer:
    """Holds per-parameter state and applies in-place updates."""

    def __init__(self, params: list[Node], schedule: Schedule):
        self.params = params
        self.schedule = schedule
        self.step_count = 0
        self.epoch = 0

    @property
    def lr(self) -> float:
        return self.schedule.lr_at(self.epoch)

    def step(self):
        raise NotImplementedError

    def _check(self):
        for p in self.params:
            if p.grad is None:
                raise DimensionError("parameter has no gradient; run backward first")
            if p.grad.shape != p.value.shape:
                raise DimensionError(f"grad shape {p.grad.shape} vs param {p.value.shape}")


class SGD(Optimizer):
    def step(self):
        self._check()
        lr = self.lr
        for p in self.params:
            p.value -= lr * p.grad
        self.step_count += 1


class Adam(Optimizer):
    def __init__(self, params, schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, schedule)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self._check()
        self.step_count += 1
        t = self.step_count
        lr = self.lr
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p.value -= lr * mhat / (np.sqrt(vhat) + self.eps)
