"""The full question-answering network: encoder -> coattention stack -> output head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coattention import CoattentionStack, QCMasks
from .config import RunConfig
from .data import Batch, QAExample, collate
from .encoder import Encoder, Tokenizer
from .head import OutputHead, SpanLogits, SpanPrediction, answer_probability, decode_span
from .modules import Module
from .tensor import Tensor


@dataclass
class ForwardOutput:
    embeddings: Tensor
    merged: Tensor
    start: Tensor
    end: Tensor
    attention: list[tuple[Tensor, Tensor]]  # per block (c2q, q2c)


class QAModel(Module):
    def __init__(self, config: RunConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        enc = config.encoder
        self.encoder = Encoder(enc, rng)
        self.coattention = CoattentionStack(config.coattention, rng, n_heads=enc.n_heads)
        self.head = OutputHead(config.head, rng, enc.n_heads, enc.d_ff)
        for name, p in self.named_parameters():
            p.name = name

    @property
    def tokenizer(self) -> Tokenizer:
        return Tokenizer(self.config.vocab_size)

    def forward(self, batch: Batch) -> ForwardOutput:
        masks = QCMasks(batch.m_q, batch.m_c)
        pad = masks.pad_mask
        E = self.encoder.encode(batch.token_ids, pad)
        stack = self.coattention.run(E, masks)
        start, end = self.head(stack.merged, pad)
        return ForwardOutput(E, stack.merged, start, end, stack.per_block_attention)

    __call__ = forward

    def predict(self, examples: list[QAExample], batch_size: int = 32, threshold: float | None = None,
                max_answer_len: int | None = None) -> dict[str, tuple[SpanPrediction, float]]:
        """Decode every example; returns ``qid -> (prediction, answer probability)``."""
        threshold = self.config.threshold if threshold is None else threshold
        max_answer_len = self.config.max_answer_len if max_answer_len is None else max_answer_len
        out: dict[str, tuple[SpanPrediction, float]] = {}
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo:lo + batch_size]
            result = self.forward(collate(chunk))
            for b, ex in enumerate(chunk):
                n = ex.length
                logits = SpanLogits(result.start.data[b, :n], result.end.data[b, :n], np.ones(n, dtype=bool))
                pred = decode_span(logits, ex.context_positions, max_answer_len, threshold)
                if not pred.is_no_answer:
                    pred.answer_text = ex.span_text(pred.start_idx, pred.end_idx)
                out[ex.qid] = (pred, answer_probability(logits, pred))
        return out
