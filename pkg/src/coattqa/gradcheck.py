"""Finite-difference verification of every primitive and of the composed network."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Batch
from .encoder import CLS_ID, PAD_ID, SEP_ID
from .model import QAModel
from .tensor import Tensor, grad_check
from .training import span_loss

TOLERANCE = 1e-4
EPSILON = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    t = lambda *shape: Tensor(rng.standard_normal(shape))  # noqa: E731
    cases = {}

    a, b = t(2, 3, 4), t(4, 5)
    cases["matmul"] = (lambda: T.matmul(a, b), [a, b])
    x, y = t(3, 4), t(4)
    cases["add"] = (lambda: T.add(x, y), [x, y])
    u, v = t(3, 4), t(3, 1)
    cases["mul"] = (lambda: T.mul(u, v), [u, v])
    r = Tensor(_away_from_zero(rng, (4, 5)))
    cases["relu"] = (lambda: T.relu(r), [r])
    g = Tensor(np.array([-2.0, 0.0, 1.0, 0.3, -0.7]))
    cases["gelu"] = (lambda: T.gelu(g), [g])
    s = t(3, 4)
    cases["sigmoid"] = (lambda: T.sigmoid(s), [s])
    h = t(3, 4)
    cases["tanh"] = (lambda: T.tanh(h), [h])
    sm = t(2, 3, 5)
    sm_mask = rng.random((2, 3, 5)) < 0.6
    sm_mask[..., 0] = True
    cases["masked_softmax"] = (lambda: T.masked_softmax(sm, sm_mask, 1.7), [sm])
    ln_x, gamma, beta = t(3, 6), t(6), t(6)
    cases["layer_norm"] = (lambda: T.layer_norm(ln_x, gamma, beta), [ln_x, gamma, beta])
    cx, ck, cb = t(2, 5, 2), t(3, 2, 3), t(3)
    cases["conv1d"] = (lambda: T.conv1d(cx, ck, cb), [cx, ck, cb])
    lx = t(2, 3, 4)
    w_ih, w_hh, lb = Tensor(0.5 * rng.standard_normal((12, 4))), Tensor(0.5 * rng.standard_normal((12, 3))), t(12)
    h0, c0 = t(3), t(3)
    cases["lstm_sequence"] = (lambda: T.lstm_sequence(lx, w_ih, w_hh, lb, h0, c0), [lx, w_ih, w_hh, lb, h0, c0])
    li, lw, lbias = t(4, 3), t(2, 3), t(2)
    cases["linear"] = (lambda: T.linear(li, lw, lbias), [li, lw, lbias])
    k1, k2 = t(3, 2), t(3, 4)
    cases["concat"] = (lambda: T.concat([k1, k2], axis=-1), [k1, k2])
    ce = t(4, 6)
    ce_mask = np.ones((4, 6), dtype=bool)
    ce_mask[:, 4:] = False
    target = np.array([0, 3, 1, 2])
    cases["cross_entropy"] = (lambda: T.cross_entropy(ce, target, ce_mask), [ce])
    table = t(7, 3)
    ids = np.array([[1, 4, 4], [6, 0, 1]])
    cases["embedding"] = (lambda: T.embedding(ids, table), [table])
    rs = t(2, 3, 4)
    cases["reshape_transpose"] = (lambda: T.transpose(T.reshape(rs, (6, 2, 2)), (2, 0, 1)), [rs])
    mf = t(3, 4)
    mf_mask = rng.random((3, 4)) < 0.5
    cases["masked_fill"] = (lambda: T.masked_fill(mf, mf_mask, -3.0), [mf])
    sx = t(3, 4)
    cases["sum_mean"] = (lambda: T.mean(T.sum(sx, axis=0)), [sx])
    return cases


def toy_batch(vocab_size: int) -> Batch:
    """Two sequences of length 6 and 5 (the second padded to 6)."""
    rng = np.random.default_rng(7)
    w = lambda: int(rng.integers(4, vocab_size))  # noqa: E731
    ids = np.array([[CLS_ID, w(), SEP_ID, w(), w(), SEP_ID],
                    [CLS_ID, w(), SEP_ID, w(), SEP_ID, PAD_ID]])
    m_q = np.array([[1, 1, 1, 0, 0, 0], [1, 1, 1, 0, 0, 0]], dtype=bool)
    m_c = np.array([[0, 0, 0, 1, 1, 1], [0, 0, 0, 1, 1, 0]], dtype=bool)
    return Batch(ids, m_q, m_c, np.array([3, 0]), np.array([4, 0]))


COMPOSED_CONFIG = dict(vocab_size=12, d_model=8, n_heads=2, n_layers=1, d_ff=16, max_len=8, max_seq_len=8,
                       n_blocks=2, d_k=4, ff_dim=16, lstm_hidden=4)


def composed_case(seed: int = 0, **overrides) -> tuple[Callable[[], Tensor], list[Tensor]]:
    config = RunConfig.from_dict({**COMPOSED_CONFIG, "seed": seed, **overrides})
    model = QAModel(config)
    # move off the zero-initialised biases, which sit exactly on ReLU kinks at padded positions
    jitter = np.random.default_rng(seed + 1)
    for p in model.parameters():
        p.data = p.data + 0.1 * jitter.standard_normal(p.shape)
    batch = toy_batch(config.vocab_size)

    def fn():
        out = model.forward(batch)
        return span_loss(out.start, out.end, batch.gold_start, batch.gold_end, batch.pad_mask)

    return fn, model.parameters()


COMPOSED_VARIANTS = {
    "composed[simple skip]": {},
    "composed[inside_conv, highway]": {"inside_conv": True, "skip_mode": "highway",
                                       "local_conv_spec": [[8, 6, 3], [6, 6, 1], [6, 6, 3], [6, 8, 1]]},
    "composed[transformer skip, no_lstm]": {"skip_mode": "transformer", "no_lstm": True},
}


def run_suite(seed: int = 0, variants=("composed[simple skip]",), epsilon: float = EPSILON) -> list[CheckResult]:
    """Check every primitive plus the named composed variants (all of them with ``variants=None``)."""
    rng = np.random.default_rng(seed)
    cases = primitive_cases(rng)
    for name in COMPOSED_VARIANTS if variants is None else variants:
        cases[name] = composed_case(seed, **COMPOSED_VARIANTS[name])
    results = []
    for name, (fn, inputs) in cases.items():
        t0 = time.perf_counter()
        err = grad_check(fn, inputs, epsilon, seed=seed)
        results.append(CheckResult(name, err, time.perf_counter() - t0))
    return results
