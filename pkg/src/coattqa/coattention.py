"""Directed C2Q / Q2C coattention stack.

The encoder output ``E`` is split by the question and context masks into two
full-length streams (zeros outside their own positions).  Each coattention
block lets every position of one stream attend to the real positions of the
other stream, adds the attended values back through a residual, and finishes
with a feed-forward sublayer.  After ``n_blocks`` blocks the two streams are
concatenated feature-wise, reduced to ``d_model`` by two convolutions, and
combined with ``E`` through a configurable skip connection.

Naming note: attention whose *queries* come from the context stream and whose
keys/values come from the question stream is called C2Q, and its output is
added to the *question* stream (and symmetrically for Q2C).  The pairing looks
crossed but is deliberate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import CoattentionConfig, validate_local_conv_spec
from .encoder import SelfAttentionBlock
from .modules import Conv1d, FeedForward, LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass
class QCMasks:
    """Question and context position masks over a ``[..., L]`` sequence."""

    m_q: np.ndarray
    m_c: np.ndarray

    def __post_init__(self):
        self.m_q = np.asarray(self.m_q, dtype=bool)
        self.m_c = np.asarray(self.m_c, dtype=bool)
        if self.m_q.shape != self.m_c.shape:
            raise T.ShapeError(f"mask shapes differ: {self.m_q.shape} vs {self.m_c.shape}")
        if (self.m_q & self.m_c).any():
            raise ValueError("question and context masks overlap")
        if not self.m_q.any(axis=-1).all():
            raise ValueError("question mask is empty")
        if not self.m_c.any(axis=-1).all():
            raise ValueError("context mask is empty")

    @property
    def pad_mask(self) -> np.ndarray:
        return self.m_q | self.m_c


@dataclass
class CoattentionOutput:
    merged: Tensor
    per_block_attention: list[tuple[Tensor, Tensor]] = field(default_factory=list)  # (c2q, q2c)


def split_masked(E: Tensor, masks: QCMasks) -> tuple[Tensor, Tensor]:
    if E.shape[:-1] != masks.m_q.shape:
        raise T.ShapeError(f"embedding {E.shape} does not match mask {masks.m_q.shape}")
    return E * masks.m_q[..., None].astype(float), E * masks.m_c[..., None].astype(float)


def directed_coattention(Q_y: Tensor, K_z: Tensor, V_z: Tensor, key_mask_z, d_k: int) -> tuple[Tensor, Tensor]:
    """``softmax(Q_y K_z^T / sqrt(d_k)) V_z`` with keys limited to ``key_mask_z``.

    Returns the ``[..., L, L]`` attention probabilities and the attended values.
    """
    key_mask_z = np.asarray(key_mask_z, dtype=bool)
    if not key_mask_z.any(axis=-1).all():
        raise ValueError("directed_coattention: key mask selects no position")
    scores = T.matmul(Q_y, T.swap_last(K_z))
    A = T.masked_softmax(scores, key_mask_z[..., None, :], math.sqrt(d_k))
    return A, T.matmul(A, V_z)


class QKVProjection(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, d_k: int):
        self.query = Linear(rng, d_model, d_k)
        self.key = Linear(rng, d_model, d_k)
        self.value = Linear(rng, d_model, d_k)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        return self.query(x), self.key(x), self.value(x)


def project_qkv(E_x: Tensor, params: QKVProjection) -> tuple[Tensor, Tensor, Tensor]:
    return params(E_x)


class LocalFeatureBranch(Module):
    """Four same-length convolutions with ReLU between them."""

    def __init__(self, rng: np.random.Generator, spec, d_model: int):
        validate_local_conv_spec(spec, d_model)
        self.convs = [Conv1d(rng, c_in, c_out, k) for c_in, c_out, k in spec]

    def __call__(self, E: Tensor, pad_mask=None) -> Tensor:
        keep = None if pad_mask is None else np.asarray(pad_mask, dtype=float)[..., None]
        x = E
        for i, conv in enumerate(self.convs):
            if i:
                x = T.relu(x)
            # re-zero padding before every conv so no kernel window reads it
            if keep is not None:
                x = x * keep
            x = conv(x)
        return x


class CoattentionBlock(Module):
    def __init__(self, rng: np.random.Generator, config: CoattentionConfig):
        d, d_k = config.d_model, config.d_k
        self.d_k = d_k
        self.proj_q = QKVProjection(rng, d, d_k)
        self.proj_c = QKVProjection(rng, d, d_k)
        self.out_c2q = Linear(rng, d_k, d)
        self.out_q2c = Linear(rng, d_k, d)
        self.norm_q1 = LayerNorm(d)
        self.norm_c1 = LayerNorm(d)
        self.ff_q = FeedForward(rng, d, config.ff_dim)
        self.ff_c = FeedForward(rng, d, config.ff_dim)
        self.norm_q2 = LayerNorm(d)
        self.norm_c2 = LayerNorm(d)
        self.local = LocalFeatureBranch(rng, config.local_conv_spec, d) if config.inside_conv else None

    def __call__(self, X_q: Tensor, X_c: Tensor, masks: QCMasks, E: Tensor | None = None):
        """Return ``(O_q, O_c, (A_c2q, A_q2c))``.

        ``E`` feeds the local-feature branch and is required when the block was
        built with ``inside_conv``.
        """
        Q_q, K_q, V_q = self.proj_q(X_q)
        Q_c, K_c, V_c = self.proj_c(X_c)
        A_c2q, att_c2q = directed_coattention(Q_c, K_q, V_q, masks.m_q, self.d_k)
        A_q2c, att_q2c = directed_coattention(Q_q, K_c, V_c, masks.m_c, self.d_k)
        add_q = self.out_c2q(att_c2q)
        add_c = self.out_q2c(att_q2c)
        if self.local is not None:
            if E is None:
                raise ValueError("inside_conv block needs the encoder embeddings")
            local = self.local(E, masks.pad_mask)
            add_q = add_q + local
            add_c = add_c + local
        H_q = self.norm_q1(X_q + add_q)
        H_c = self.norm_c1(X_c + add_c)
        O_q = self.norm_q2(H_q + self.ff_q(H_q))
        O_c = self.norm_c2(H_c + self.ff_c(H_c))
        return O_q, O_c, (A_c2q, A_q2c)


class Merge(Module):
    """Concatenate both streams and reduce ``2*d_model -> c_mid -> d_model`` by convolution."""

    def __init__(self, rng: np.random.Generator, d_model: int, c_mid: int, kernel: int = 3):
        if not d_model < c_mid < 2 * d_model:
            raise ValueError(f"c_mid={c_mid} must lie strictly between {d_model} and {2 * d_model}")
        self.reduce = Conv1d(rng, 2 * d_model, c_mid, kernel)
        self.project = Conv1d(rng, c_mid, d_model, kernel)

    def __call__(self, O_q: Tensor, O_c: Tensor, pad_mask=None) -> Tensor:
        x = T.concat([O_q, O_c], axis=-1)
        if pad_mask is None:
            return self.project(T.gelu(self.reduce(x)))
        keep = np.asarray(pad_mask, dtype=float)[..., None]
        return self.project(T.gelu(self.reduce(x * keep)) * keep)


class SkipCombine(Module):
    """Re-inject the encoder output ``E`` into the merged coattention output."""

    def __init__(self, rng: np.random.Generator, mode: str, d_model: int, n_heads: int = 1, d_ff: int | None = None):
        self.mode = mode
        if mode == "simple":
            self.norm = LayerNorm(d_model)
        elif mode == "transformer":
            self.block = SelfAttentionBlock(rng, d_model, n_heads, d_ff or 4 * d_model)
            self.norm = LayerNorm(d_model)
        elif mode == "highway":
            self.gate = Linear(rng, d_model, d_model)
            self.transform = Linear(rng, d_model, d_model)
        elif mode != "none":
            raise ValueError(f"unknown skip mode {mode!r}")

    def __call__(self, merged: Tensor, E: Tensor, pad_mask=None) -> Tensor:
        if self.mode == "none":
            return merged
        if self.mode == "simple":
            return self.norm(merged + E)
        if self.mode == "transformer":
            if pad_mask is None:
                pad_mask = np.ones(E.shape[:-1], dtype=bool)
            return self.norm(merged + self.block(E, pad_mask))
        g = T.sigmoid(self.gate(E))
        carried = T.gelu(self.transform(E))
        return g * carried + (1.0 - g) * merged


class CoattentionStack(Module):
    def __init__(self, config: CoattentionConfig, rng: np.random.Generator, n_heads: int = 1):
        self.config = config
        if config.share_block_weights:
            block = CoattentionBlock(rng, config)
            self.blocks = [block] * config.n_blocks
        else:
            self.blocks = [CoattentionBlock(rng, config) for _ in range(config.n_blocks)]
        c_mid, _ = config.merge_conv_channels
        self.merge = Merge(rng, config.d_model, c_mid, config.merge_kernel)
        self.skip = SkipCombine(rng, config.skip_mode, config.d_model, n_heads, config.ff_dim)

    def __call__(self, E: Tensor, masks: QCMasks) -> CoattentionOutput:
        return self.run(E, masks)

    def run(self, E: Tensor, masks: QCMasks) -> CoattentionOutput:
        X_q, X_c = split_masked(E, masks)
        attention = []
        for block in self.blocks:
            X_q, X_c, pair = block(X_q, X_c, masks, E)
            attention.append(pair)
        merged = self.merge(X_q, X_c, masks.pad_mask)
        return CoattentionOutput(self.skip(merged, E, masks.pad_mask), attention)


def run_stack(E: Tensor, masks: QCMasks, config: CoattentionConfig, params: CoattentionStack) -> CoattentionOutput:
    if params.config != config:
        raise ValueError("parameters were built for a different coattention config")
    return params.run(E, masks)
