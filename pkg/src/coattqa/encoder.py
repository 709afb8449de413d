"""Toy contextual encoder standing in for pretrained BERT.

Token and learned position embeddings are summed and passed through a stack
of standard post-norm transformer encoder blocks that attend globally over the
concatenated ``[CLS] question [SEP] context [SEP]`` sequence.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import EncoderConfig
from .modules import Embedding, FeedForward, LayerNorm, Linear, Module
from .tensor import Tensor

PAD_ID, CLS_ID, SEP_ID, UNK_ID = 0, 1, 2, 3
N_RESERVED = 4

_TOKEN_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int  # exclusive character offset


class Tokenizer:
    """Whitespace tokenizer that hashes lowercased tokens into vocab buckets.

    Ids 0-3 are reserved for PAD, CLS, SEP and UNK; crc32 keeps bucket
    assignment stable across processes.
    """

    def __init__(self, vocab_size: int):
        if vocab_size <= N_RESERVED:
            raise ValueError("vocab_size must exceed the reserved ids")
        self.vocab_size = vocab_size

    def tokenize(self, text: str) -> list[Token]:
        return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]

    def token_id(self, token: str) -> int:
        if not token:
            return UNK_ID
        bucket = zlib.crc32(token.lower().encode("utf-8")) % (self.vocab_size - N_RESERVED)
        return N_RESERVED + bucket

    def ids(self, tokens: list[Token]) -> list[int]:
        return [self.token_id(t.text) for t in tokens]


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, L, d = x.shape
    x = T.reshape(x, (*lead, L, n_heads, d // n_heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = T.transpose(x, axes)
    *lead, L, h, dh = x.shape
    return T.reshape(x, (*lead, L, h * dh))


def _check_pad_mask(pad_mask: np.ndarray) -> np.ndarray:
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if not pad_mask.any(axis=-1).all():
        raise ValueError("sequence consists only of padding")
    return pad_mask


class SelfAttentionBlock(Module):
    """Multi-head self-attention + residual + LN, then FF + residual + LN."""

    def __init__(self, rng: np.random.Generator, d_model: int, n_heads: int, d_ff: int):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.query = Linear(rng, d_model, d_model)
        self.key = Linear(rng, d_model, d_model)
        self.value = Linear(rng, d_model, d_model)
        self.out = Linear(rng, d_model, d_model)
        self.norm1 = LayerNorm(d_model)
        self.ff = FeedForward(rng, d_model, d_ff)
        self.norm2 = LayerNorm(d_model)

    def attend(self, x: Tensor, pad_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        pad_mask = _check_pad_mask(pad_mask)
        q = split_heads(self.query(x), self.n_heads)
        k = split_heads(self.key(x), self.n_heads)
        v = split_heads(self.value(x), self.n_heads)
        d_head = q.shape[-1]
        scores = T.matmul(q, T.swap_last(k))
        key_mask = pad_mask[..., None, None, :]
        probs = T.masked_softmax(scores, key_mask, math.sqrt(d_head))
        return self.out(merge_heads(T.matmul(probs, v))), probs

    def __call__(self, x: Tensor, pad_mask: np.ndarray) -> Tensor:
        return self.forward(x, pad_mask)[0]

    def forward(self, x: Tensor, pad_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Return the block output and the ``[..., heads, L, L]`` attention probabilities."""
        attended, probs = self.attend(x, pad_mask)
        h = self.norm1(x + attended)
        return self.norm2(h + self.ff(h)), probs


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.token_embedding = Embedding(rng, config.vocab_size, config.d_model)
        self.position_embedding = (Embedding(rng, config.max_len, config.d_model)
                                   if config.position_embeddings else None)
        self.blocks = [SelfAttentionBlock(rng, config.d_model, config.n_heads, config.d_ff)
                       for _ in range(config.n_layers)]

    def embed(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        L = ids.shape[-1]
        if L > self.config.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len={self.config.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")
        out = self.token_embedding(ids)
        if self.position_embedding is not None:
            out = out + self.position_embedding(np.arange(L))
        return out

    def __call__(self, token_ids, pad_mask) -> Tensor:
        return self.encode(token_ids, pad_mask)

    def encode(self, token_ids, pad_mask) -> Tensor:
        x = self.embed(token_ids)
        pad_mask = _check_pad_mask(pad_mask)
        for block in self.blocks:
            x = block(x, pad_mask)
        return x
