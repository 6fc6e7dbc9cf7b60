"""Extractive span QA over a packed ``[CLS] question [SEP] context`` sequence."""

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from xmetra.autodiff import Tensor, add, log_softmax, matmul, mean, nll_pick, reshape, slice_axis
from xmetra.exceptions import InputError
from xmetra.models.encoder import CLS_ID, SEP_ID, TokenEncoder

MAX_SEQ_LEN = 384
MAX_QUESTION_LEN = 30


@dataclass(frozen=True)
class EncodedQA:
    """Token-level QA example; ``answer_start``/``answer_end`` index ``context_ids`` (inclusive)."""

    question_ids: np.ndarray
    context_ids: np.ndarray
    answer_start: int
    answer_end: int
    source: object = field(default=None, compare=False, repr=False)


class Packed(NamedTuple):
    ids: np.ndarray
    context_offset: int
    context_len: int       # context tokens surviving truncation
    truncated: bool


def pack(question_ids, context_ids, max_seq_len=MAX_SEQ_LEN, max_question_len=MAX_QUESTION_LEN,
         cls_id=CLS_ID, sep_id=SEP_ID):
    """Build ``[CLS] q[:max_question_len] [SEP] context`` truncated to ``max_seq_len``."""
    if len(context_ids) == 0:
        raise InputError("empty context")
    q = list(question_ids)[:max_question_len]
    offset = len(q) + 2
    room = max_seq_len - offset
    if room < 1:
        raise InputError(f"max_seq_len={max_seq_len} leaves no room for context")
    ctx = list(context_ids)[:room]
    ids = np.array([cls_id] + q + [sep_id] + ctx, dtype=np.int64)
    return Packed(ids, offset, len(ctx), len(context_ids) > room)


class QALoss(NamedTuple):
    loss: Tensor
    used: int
    excluded: int


class QASpanModel:
    family = "qa"

    def __init__(self, encoder_config, max_question_len=MAX_QUESTION_LEN, max_answer_len=30, encoder=None):
        self.encoder = encoder if encoder is not None else TokenEncoder(encoder_config)
        self.config = encoder_config
        self.max_seq_len = encoder_config.max_seq_len
        self.max_question_len = max_question_len
        self.max_answer_len = max_answer_len

    @property
    def head_names(self):
        return ("span.weight", "span.bias")

    def init_params(self, rng):
        H = self.config.hidden_dim
        params = self.encoder.init_params(rng)
        params["span.weight"] = rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, 2))
        params["span.bias"] = np.zeros(2)
        return params

    def _pack_all(self, pairs):
        return [pack(q, c, self.max_seq_len, self.max_question_len, self.config.cls_id) for q, c in pairs]

    def forward(self, params, pairs, train=False, rng=None):
        """Return ``(start_logits[B, L], end_logits[B, L], packed)``.

        Logits are over packed positions; positions outside each context
        are set to ``-inf`` so they can never be predicted or receive mass.
        """
        packed = self._pack_all(pairs)
        enc = self.encoder.encode_batch(params, [p.ids for p in packed], train=train, rng=rng)
        B, L = len(packed), enc.hidden.shape[1]
        logits = add(matmul(enc.hidden, params["span.weight"]), params["span.bias"])
        mask = np.full((B, L), -np.inf)
        for i, p in enumerate(packed):
            mask[i, p.context_offset:p.context_offset + p.context_len] = 0.0
        start = add(reshape(slice_axis(logits, 0, 1, axis=-1), (B, L)), mask)
        end = add(reshape(slice_axis(logits, 1, 2, axis=-1), (B, L)), mask)
        return start, end, packed

    def qa_loss(self, params, batch, train=False, rng=None):
        """Mean of CE(start) + CE(end) over examples whose gold span survives truncation."""
        keep, starts, ends = [], [], []
        for ex in batch:
            q_len = min(len(ex.question_ids), self.max_question_len)
            room = self.max_seq_len - q_len - 2
            if ex.answer_end < room:
                keep.append(ex)
                starts.append(ex.answer_start + q_len + 2)
                ends.append(ex.answer_end + q_len + 2)
        excluded = len(batch) - len(keep)
        if not keep:
            warnings.warn("every gold span in the batch was truncated away; loss contributes nothing",
                          RuntimeWarning, stacklevel=2)
            return QALoss(Tensor(0.0), 0, excluded)
        start, end, _ = self.forward(params, [(ex.question_ids, ex.context_ids) for ex in keep], train, rng)
        per_example = add(nll_pick(log_softmax(start), np.array(starts)), nll_pick(log_softmax(end), np.array(ends)))
        return QALoss(mean(per_example), len(keep), excluded)

    def loss(self, params, batch, train=False, rng=None):
        return self.qa_loss(params, batch, train, rng).loss

    def best_span(self, start_logits, end_logits, packed):
        """Highest ``start + end`` span inside the context; returns context token indices."""
        lo, n = packed.context_offset, packed.context_len
        s = start_logits[lo:lo + n]
        e = end_logits[lo:lo + n]
        scores = s[:, None] + e[None, :]
        i, j = np.indices(scores.shape)
        scores = np.where((j >= i) & (j - i < self.max_answer_len), scores, -np.inf)
        flat = int(np.argmax(scores))
        return divmod(flat, n)

    def predict(self, params, pairs):
        """Eval-mode span prediction per ``(question_ids, context_ids)`` pair."""
        start, end, packed = self.forward(params, list(pairs))
        return [self.best_span(start.values[i], end.values[i], p) for i, p in enumerate(packed)]
