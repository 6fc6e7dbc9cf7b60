"""Intent accuracy, BIO span F1, SQuAD-style QA F1/EM and seed aggregation."""

import re
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from xmetra.exceptions import ContractError, ValidationError

_TAG = re.compile(r"^(O|([BI])-(\S+))$")
_PUNCT = re.compile("[%s]" % re.escape(string.punctuation))


def intent_accuracy(preds, golds):
    if len(preds) != len(golds):
        raise ContractError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if len(golds) == 0:
        raise ContractError("intent_accuracy needs at least one example")
    return float(np.mean([p == g for p, g in zip(preds, golds)]))


def bio_spans(tags):
    """``{(start, end, type)}`` (inclusive) from one BIO sequence.

    An ``I-X`` that does not continue an ``X`` span opens a new one, as if
    it were ``B-X``.
    """
    spans = set()
    start = kind = None
    for i, tag in enumerate(tags):
        m = _TAG.match(tag)
        if m is None:
            raise ValidationError(f"malformed BIO tag {tag!r} at position {i}")
        prefix, typ = m.group(2), m.group(3)
        continues = prefix == "I" and kind == typ
        if kind is not None and not continues:
            spans.add((start, i - 1, kind))
            start = kind = None
        if prefix is not None and not continues:
            start, kind = i, typ
    if kind is not None:
        spans.add((start, len(tags) - 1, kind))
    return spans


def _prf(tp, n_pred, n_gold):
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def slot_f1(pred_tags, gold_tags):
    """Micro-averaged exact span-and-type precision, recall and F1."""
    if len(pred_tags) != len(gold_tags):
        raise ContractError(f"{len(pred_tags)} predicted sequences for {len(gold_tags)} gold")
    tp = n_pred = n_gold = 0
    for pred, gold in zip(pred_tags, gold_tags):
        if len(pred) != len(gold):
            raise ContractError("predicted and gold tag sequences differ in length")
        ps, gs = bio_spans(pred), bio_spans(gold)
        tp += len(ps & gs)
        n_pred += len(ps)
        n_gold += len(gs)
    return _prf(tp, n_pred, n_gold)


def normalize_answer(text):
    """Lowercase, drop ASCII punctuation, collapse whitespace."""
    return " ".join(_PUNCT.sub("", text.lower()).split())


def qa_f1_em(pred_answer, gold_answer):
    """Token-overlap F1 and exact match after normalisation; returns ``(f1, em)``."""
    pred = normalize_answer(pred_answer).split()
    gold = normalize_answer(gold_answer).split()
    em = int(pred == gold)
    if not pred or not gold:
        return float(pred == gold), em
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0, em
    p, r = common / len(pred), common / len(gold)
    return 2 * p * r / (p + r), em


@dataclass(frozen=True)
class EvalResult:
    metric: str
    values: tuple
    mean: float
    std: float
    support: int = 0

    @property
    def value(self):
        return self.mean

    def as_percent(self):
        return 100.0 * self.mean, 100.0 * self.std


def aggregate_seeds(values, metric="metric", support=0):
    """Mean and sample standard deviation (0 for a single seed)."""
    values = tuple(float(v) for v in values)
    if not values:
        raise ContractError("aggregate_seeds needs at least one value")
    arr = np.asarray(values)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return EvalResult(metric, values, float(arr.mean()), std, support)
