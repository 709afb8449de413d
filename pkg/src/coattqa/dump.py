"""Attention-matrix dumps for external visualisation."""

from __future__ import annotations

from pathlib import Path

from .data import QAExample, collate, write_json_atomic
from .model import QAModel


def sequence_tokens(example: QAExample, question_tokens: list[str]) -> list[str]:
    return ["[CLS]", *question_tokens, "[SEP]", *(t.text for t in example.context_tokens), "[SEP]"]


def attention_dump(model: QAModel, example: QAExample) -> dict:
    if example.length > model.config.max_seq_len:
        raise ValueError(f"example {example.qid} has {example.length} tokens, "
                         f"over max_seq_len={model.config.max_seq_len}")
    out = model.forward(collate([example]))
    tokenizer = model.tokenizer
    q_tokens = [t.text for t in tokenizer.tokenize(example.question)]
    blocks = [{"c2q": c2q.data[0].tolist(), "q2c": q2c.data[0].tolist()} for c2q, q2c in out.attention]
    return {
        "id": example.qid,
        "tokens": sequence_tokens(example, q_tokens),
        "question_mask": example.m_q.astype(int).tolist(),
        "context_mask": example.m_c.astype(int).tolist(),
        "blocks": blocks,
        "start_logits": out.start.data[0].tolist(),
        "end_logits": out.end.data[0].tolist(),
    }


def dump_attention(model: QAModel, example: QAExample, out_path: str | Path) -> dict:
    dump = attention_dump(model, example)
    write_json_atomic(dump, out_path)
    return dump
