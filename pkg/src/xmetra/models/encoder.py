"""Small trainable token encoder standing in for a pretrained transformer.

Each layer mixes a token's state with the masked mean of its sentence::

    h' = tanh([h ; mean(h)] W + b)

so the first ([CLS]) position carries sentence-level information after
one layer.  Any object with the same ``encode_batch`` contract can be
swapped in by the task models.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from xmetra.autodiff import Tensor, concat, embedding, matmul, mul, reshape, slice_axis, tanh
from xmetra.exceptions import ContractError, InputError

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
UNK_ID = 3


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 32
    num_layers: int = 2
    pooling: str = "first"
    dropout_rate: float = 0.3
    max_seq_len: int = 64
    cls_id: int = CLS_ID
    pad_id: int = PAD_ID

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.pooling not in ("first", "mean"):
            raise ContractError(f"pooling must be 'first' or 'mean', got {self.pooling!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


class Encoded(NamedTuple):
    hidden: Tensor        # [B, L, H]
    pooled: Tensor        # [B, H]
    lengths: np.ndarray   # [B] true (possibly truncated) lengths
    truncated: np.ndarray  # [B] bool


def pad_batch(sequences, pad_id=PAD_ID):
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    ids = np.full((len(sequences), int(lengths.max())), pad_id, dtype=np.int64)
    for i, s in enumerate(sequences):
        ids[i, :len(s)] = s
    return ids, lengths


def dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class TokenEncoder:
    """Embedding plus ``num_layers`` context-mixing feed-forward blocks.

    Block 0 is the embedding table, block ``i`` (1-based) the i-th layer;
    :meth:`block_params` maps a block id to its parameter names, which is
    what layer freezing keys on.
    """

    prefix = "encoder"

    def __init__(self, config):
        self.config = config

    @property
    def block_ids(self):
        return tuple(range(self.config.num_layers + 1))

    def block_params(self, block_id):
        if block_id not in self.block_ids:
            raise ContractError(f"unknown encoder block {block_id}; valid ids are {self.block_ids}")
        if block_id == 0:
            return (f"{self.prefix}.embed",)
        return (f"{self.prefix}.layer{block_id}.weight", f"{self.prefix}.layer{block_id}.bias")

    @property
    def param_names(self):
        return tuple(n for b in self.block_ids for n in self.block_params(b))

    def init_params(self, rng):
        c = self.config
        params = {f"{self.prefix}.embed": rng.normal(0.0, 0.5, size=(c.vocab_size, c.embed_dim))}
        fan_in = c.embed_dim
        for i in range(1, c.num_layers + 1):
            limit = np.sqrt(6.0 / (2 * fan_in + c.hidden_dim))
            params[f"{self.prefix}.layer{i}.weight"] = rng.uniform(-limit, limit, size=(2 * fan_in, c.hidden_dim))
            params[f"{self.prefix}.layer{i}.bias"] = np.zeros(c.hidden_dim)
            fan_in = c.hidden_dim
        return params

    def validate(self, sequences):
        """Check ids and truncate overlong sequences; returns (sequences, truncated flags)."""
        c = self.config
        if len(sequences) == 0:
            raise InputError("empty batch")
        out, flags = [], []
        for seq in sequences:
            seq = np.asarray(seq, dtype=np.int64)
            if seq.ndim != 1 or seq.size == 0:
                raise InputError("token sequence must be a non-empty 1-D id sequence")
            if seq.min() < 0 or seq.max() >= c.vocab_size:
                raise InputError(f"token id outside vocabulary [0, {c.vocab_size})")
            if c.pooling == "first" and seq[0] != c.cls_id:
                raise InputError("first-token pooling needs every sequence to start with the CLS id")
            flags.append(seq.size > c.max_seq_len)
            out.append(seq[:c.max_seq_len])
        return out, np.array(flags, dtype=bool)

    def encode_batch(self, params, sequences, train=False, rng=None):
        c = self.config
        sequences, truncated = self.validate(sequences)
        ids, lengths = pad_batch(sequences, c.pad_id)
        B, L = ids.shape
        mask = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)
        # row-stochastic averaging over the real tokens of each sentence
        avg = np.broadcast_to((mask / lengths[:, None])[:, None, :], (B, L, L))
        if train and c.dropout_rate > 0 and rng is None:
            raise ContractError("training-mode encode needs an rng for dropout")
        drop = train and c.dropout_rate > 0

        h = embedding(params[f"{self.prefix}.embed"], ids)
        if drop:
            h = mul(h, dropout_mask(rng, h.shape, c.dropout_rate))
        for i in range(1, c.num_layers + 1):
            ctx = matmul(avg, h)
            h = tanh(matmul(concat([h, ctx]), params[f"{self.prefix}.layer{i}.weight"])
                     + params[f"{self.prefix}.layer{i}.bias"])
            if drop:
                h = mul(h, dropout_mask(rng, h.shape, c.dropout_rate))
        if c.pooling == "first":
            pooled = reshape(slice_axis(h, 0, 1, axis=1), (B, c.hidden_dim))
        else:
            pooled = reshape(matmul(avg[:, :1, :].copy(), h), (B, c.hidden_dim))
        return Encoded(h, pooled, lengths, truncated)

    def encode(self, params, token_ids, train=False, rng=None):
        """Single-sequence convenience: returns ``(hidden[L, H], pooled[H], truncated)``."""
        enc = self.encode_batch(params, [token_ids], train=train, rng=rng)
        L = int(enc.lengths[0])
        hidden = enc.hidden.values[0, :L]
        return hidden, enc.pooled.values[0], bool(enc.truncated[0])
