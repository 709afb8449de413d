"""Configuration dataclasses and the flat JSON run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SKIP_MODES = ("simple", "transformer", "highway", "none")


class ConfigError(ValueError):
    """A configuration value violates its invariant.  ``field`` names the key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _positive(name: str, value, kind=int) -> None:
    if isinstance(value, bool) or not isinstance(value, kind) or value <= 0:
        raise ConfigError(name, f"must be a positive {kind.__name__}, got {value!r}")


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 512
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_len: int = 128
    position_embeddings: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "d_ff", "max_len"):
            _positive(name, getattr(self, name))
        if isinstance(self.n_layers, bool) or not isinstance(self.n_layers, int) or self.n_layers < 0:
            raise ConfigError("n_layers", f"must be a non-negative int, got {self.n_layers!r}")
        if self.d_model % self.n_heads:
            raise ConfigError("n_heads", f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.vocab_size <= 4:
            raise ConfigError("vocab_size", "must exceed the 4 reserved ids")


@dataclass(frozen=True)
class CoattentionConfig:
    d_model: int = 32
    n_blocks: int = 2
    d_k: int = 32
    skip_mode: str = "simple"
    inside_conv: bool = False
    merge_conv_channels: tuple[int, int] = (48, 32)
    merge_kernel: int = 3
    local_conv_spec: tuple[tuple[int, int, int], ...] = ((32, 32, 3),) * 4
    share_block_weights: bool = False
    ff_dim: int = 128

    def __post_init__(self):
        for name in ("d_model", "n_blocks", "d_k", "ff_dim", "merge_kernel"):
            _positive(name, getattr(self, name))
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError("skip_mode", f"unknown mode {self.skip_mode!r}; expected one of {SKIP_MODES}")
        c_mid, c_out = self.merge_conv_channels
        if c_out != self.d_model:
            raise ConfigError("merge_conv_channels", f"output channels {c_out} must equal d_model={self.d_model}")
        if not self.d_model < c_mid < 2 * self.d_model:
            raise ConfigError("merge_conv_channels",
                              f"middle channels {c_mid} must lie strictly between {self.d_model} and {2 * self.d_model}")
        if self.merge_kernel % 2 == 0:
            raise ConfigError("merge_kernel", f"kernel size must be odd, got {self.merge_kernel}")
        validate_local_conv_spec(self.local_conv_spec, self.d_model)


def validate_local_conv_spec(spec, d_model: int) -> None:
    if len(spec) != 4:
        raise ConfigError("local_conv_spec", f"expected exactly 4 conv layers, got {len(spec)}")
    expected_in = d_model
    for i, layer in enumerate(spec):
        if len(layer) != 3:
            raise ConfigError("local_conv_spec", f"layer {i} must be (c_in, c_out, kernel), got {layer!r}")
        c_in, c_out, k = layer
        if c_in != expected_in:
            raise ConfigError("local_conv_spec", f"layer {i} expects {c_in} input channels but receives {expected_in}")
        if c_out <= 0 or k <= 0 or k % 2 == 0:
            raise ConfigError("local_conv_spec", f"layer {i}: channels must be positive and kernel odd, got {layer!r}")
        expected_in = c_out
    if expected_in != d_model:
        raise ConfigError("local_conv_spec", f"last layer emits {expected_in} channels, need d_model={d_model}")


@dataclass(frozen=True)
class HeadConfig:
    d_model: int = 32
    lstm_hidden: int = 32
    no_lstm: bool = False
    threshold: float = 0.0
    max_answer_len: int = 30

    def __post_init__(self):
        _positive("lstm_hidden", self.lstm_hidden)
        _positive("max_answer_len", self.max_answer_len)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    grad_accum_steps: int = 1
    learning_rate: float = 1e-3
    epochs: int = 40
    max_seq_len: int = 64
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        for name in ("batch_size", "grad_accum_steps", "epochs", "max_seq_len"):
            _positive(name, getattr(self, name))
        if isinstance(self.learning_rate, bool) or not isinstance(self.learning_rate, (int, float)) \
                or self.learning_rate < 0:
            raise ConfigError("learning_rate", f"must be a non-negative real, got {self.learning_rate!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative int, got {self.seed!r}")
        if self.max_steps is not None:
            _positive("max_steps", self.max_steps)

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accum_steps


# Values used for the full-scale BERT-base runs; the toy defaults above are
# scaled down so that everything trains on a CPU in seconds.
FULL_SCALE_TRAIN_DEFAULTS = TrainConfig(batch_size=6, grad_accum_steps=3, learning_rate=3e-5, epochs=2,
                                        max_seq_len=512)
FULL_SCALE_N_BLOCKS = 7


@dataclass(frozen=True)
class RunConfig:
    """Every switch of a run, as one flat JSON-serialisable record.

    Derived defaults (``d_k``, ``ff_dim``, ``merge_mid_channels``,
    ``lstm_hidden``, ``local_conv_spec``) are filled from ``d_model`` when left
    as ``None``.
    """

    # encoder
    vocab_size: int = 512
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_len: int = 128
    position_embeddings: bool = True
    # coattention stack
    n_blocks: int = 2
    d_k: int | None = None
    skip_mode: str = "simple"
    inside_conv: bool = False
    merge_mid_channels: int | None = None
    merge_kernel: int = 3
    local_conv_spec: list | None = None
    share_block_weights: bool = False
    ff_dim: int | None = None
    # output head
    no_lstm: bool = False
    lstm_hidden: int | None = None
    threshold: float = 0.0
    max_answer_len: int = 30
    # training
    batch_size: int = 8
    grad_accum_steps: int = 1
    learning_rate: float = 1e-3
    epochs: int = 40
    max_steps: int | None = None
    max_seq_len: int = 64
    seed: int = 0

    encoder: EncoderConfig = field(init=False, repr=False, compare=False)
    coattention: CoattentionConfig = field(init=False, repr=False, compare=False)
    head: HeadConfig = field(init=False, repr=False, compare=False)
    train: TrainConfig = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.d_model
        set_ = object.__setattr__
        set_(self, "encoder", EncoderConfig(
            vocab_size=self.vocab_size, d_model=d, n_heads=self.n_heads, n_layers=self.n_layers,
            d_ff=self.d_ff, max_len=self.max_len, position_embeddings=self.position_embeddings))
        spec = self.local_conv_spec
        if spec is None:
            spec = [(d, d, 3)] * 4
        set_(self, "coattention", CoattentionConfig(
            d_model=d, n_blocks=self.n_blocks, d_k=d if self.d_k is None else self.d_k, skip_mode=self.skip_mode,
            inside_conv=self.inside_conv,
            merge_conv_channels=((3 * d) // 2 if self.merge_mid_channels is None else self.merge_mid_channels, d),
            merge_kernel=self.merge_kernel,
            local_conv_spec=tuple(tuple(layer) for layer in spec),
            share_block_weights=self.share_block_weights, ff_dim=4 * d if self.ff_dim is None else self.ff_dim))
        set_(self, "head", HeadConfig(
            d_model=d, lstm_hidden=d if self.lstm_hidden is None else self.lstm_hidden, no_lstm=self.no_lstm,
            threshold=float(self.threshold), max_answer_len=self.max_answer_len))
        set_(self, "train", TrainConfig(
            batch_size=self.batch_size, grad_accum_steps=self.grad_accum_steps,
            learning_rate=self.learning_rate, epochs=self.epochs, max_seq_len=self.max_seq_len,
            seed=self.seed, max_steps=self.max_steps))
        if self.max_seq_len > self.max_len:
            raise ConfigError("max_seq_len", f"{self.max_seq_len} exceeds encoder max_len={self.max_len}")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: _plain(getattr(self, f.name)) for f in dataclasses.fields(self) if f.init}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls) if f.init}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<root>", f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value
