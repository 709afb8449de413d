"""Separate start/end logit prediction and span decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import HeadConfig
from .encoder import SelfAttentionBlock
from .modules import LSTM, Linear, Module
from .tensor import Tensor

NULL_INDEX = 0  # the [CLS] slot encodes "no answer"


@dataclass
class SpanLogits:
    start: np.ndarray
    end: np.ndarray
    mask: np.ndarray  # real (non-padded) positions

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.start.shape == self.end.shape == self.mask.shape) or self.start.ndim != 1:
            raise T.ShapeError("start, end and mask must be equal-length vectors")


@dataclass
class SpanPrediction:
    start_idx: int
    end_idx: int
    score: float
    is_no_answer: bool
    answer_text: str = ""


class OutputHead(Module):
    """Self-attention pre-processing, linear start logits, LSTM end logits."""

    def __init__(self, config: HeadConfig, rng: np.random.Generator, n_heads: int, d_ff: int):
        d = config.d_model
        self.config = config
        self.pre_start = SelfAttentionBlock(rng, d, n_heads, d_ff)
        self.pre_end = SelfAttentionBlock(rng, d, n_heads, d_ff)
        self.start = Linear(rng, d, 1)
        if config.no_lstm:
            self.end = Linear(rng, 2 * d, 1)
        else:
            self.end_lstm = LSTM(rng, 2 * d, config.lstm_hidden)
            self.end = Linear(rng, config.lstm_hidden, 1)

    def preprocess(self, S: Tensor, pad_mask) -> tuple[Tensor, Tensor]:
        return self.pre_start(S, pad_mask), self.pre_end(S, pad_mask)

    def start_logits(self, S_start: Tensor, pad_mask) -> Tensor:
        logits = self.start(S_start)
        return T.masked_fill(T.reshape(logits, logits.shape[:-1]), pad_mask)

    def end_logits(self, S_start: Tensor, S_end: Tensor, pad_mask) -> Tensor:
        x = T.concat([S_start, S_end], axis=-1)
        if not self.config.no_lstm:
            x = self.end_lstm(x)
        logits = self.end(x)
        return T.masked_fill(T.reshape(logits, logits.shape[:-1]), pad_mask)

    def __call__(self, S: Tensor, pad_mask) -> tuple[Tensor, Tensor]:
        pad_mask = np.asarray(pad_mask, dtype=bool)
        S_start, S_end = self.preprocess(S, pad_mask)
        return self.start_logits(S_start, pad_mask), self.end_logits(S_start, S_end, pad_mask)


def decode_span(logits: SpanLogits, context_positions, max_answer_len: int = 30,
                threshold: float = 0.0, null_index: int = NULL_INDEX) -> SpanPrediction:
    """Pick the best ``(i, j)`` context span by ``start[i] + end[j]``.

    Spans need ``i <= j`` and ``j - i < max_answer_len``.  The null pair wins
    when its score is at least the best span score plus ``threshold``.
    """
    ctx = np.asarray(context_positions, dtype=np.int64)
    if ctx.size == 0:
        raise ValueError("decode_span: empty context")
    scores = logits.start[ctx][:, None] + logits.end[ctx][None, :]
    gap = ctx[None, :] - ctx[:, None]
    allowed = (gap >= 0) & (gap < max_answer_len)
    scores = np.where(allowed, scores, -np.inf)
    flat = int(np.argmax(scores))
    a, b = divmod(flat, ctx.size)
    best = float(scores[a, b])
    null_score = float(logits.start[null_index] + logits.end[null_index])
    if null_score >= best + threshold:
        return SpanPrediction(null_index, null_index, null_score, True)
    return SpanPrediction(int(ctx[a]), int(ctx[b]), best, False)


def _log_softmax(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, x, -np.inf)
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def answer_probability(logits: SpanLogits, pred: SpanPrediction) -> float:
    """``softmax(start)[i] * softmax(end)[j]`` for the chosen pair, over real positions."""
    log_p = _log_softmax(logits.start, logits.mask)[pred.start_idx] + _log_softmax(logits.end, logits.mask)[pred.end_idx]
    return float(np.exp(log_p))

