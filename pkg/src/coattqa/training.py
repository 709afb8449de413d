"""Span loss, Adam, and the gradient-accumulating training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import QAExample, collate
from .model import QAModel
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def span_loss(start: Tensor, end: Tensor, gold_start, gold_end, pad_mask=None) -> Tensor:
    """Mean over the batch of ``(CE(start, gold_start) + CE(end, gold_end)) / 2``.

    No-answer examples use the null position (0) for both targets.  Targets on
    padded positions are rejected.
    """
    ce = T.cross_entropy(start, gold_start, pad_mask) + T.cross_entropy(end, gold_end, pad_mask)
    return T.mean(ce) * 0.5


class Adam:
    def __init__(self, params: list[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, scale: float = 1.0) -> None:
        """Apply one update using ``scale * p.grad`` as the gradient."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)  # one entry per optimizer update

    @property
    def steps(self) -> int:
        return len(self.losses)


def micro_batches(n: int, config: TrainConfig, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([config.seed, epoch]).permutation(n)
    return [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]


def train(model: QAModel, examples: list[QAExample], config: TrainConfig | None = None,
          callback=None) -> TrainResult:
    """Fit ``model`` in place.

    Each update averages gradients over ``grad_accum_steps`` consecutive
    micro-batches (in order), so the effective batch is
    ``batch_size * grad_accum_steps``.  Training stops after ``epochs`` or
    ``max_steps`` updates, whichever comes first.
    """
    config = config or model.config.train
    if not examples:
        raise ValueError("training set is empty")
    params = model.parameters()
    opt = Adam(params, config.learning_rate)
    result = TrainResult()
    pending = 0
    running = 0.0
    model.zero_grad()
    for epoch in range(config.epochs):
        for idx in micro_batches(len(examples), config, epoch):
            batch = collate([examples[i] for i in idx])
            out = model.forward(batch)
            loss = span_loss(out.start, out.end, batch.gold_start, batch.gold_end, batch.pad_mask)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at update {result.steps + 1}, epoch {epoch}")
            loss.backward()
            running += value
            pending += 1
            if pending == config.grad_accum_steps:
                opt.step(1.0 / pending)
                model.zero_grad()
                result.losses.append(running / pending)
                log.debug("update %d loss %.6f", result.steps, result.losses[-1])
                if callback is not None:
                    callback(result.steps, result.losses[-1])
                pending, running = 0, 0.0
                if config.max_steps is not None and result.steps >= config.max_steps:
                    return result
    if pending:
        opt.step(1.0 / pending)
        model.zero_grad()
        result.losses.append(running / pending)
    return result
