"""Input checks for the estimator front end."""

import numpy as np
from sklearn.utils import check_consistent_length

from xmetra.exceptions import InputError


def check_tokens(X, name="X"):
    """List of token tuples from token lists or whitespace-separated strings."""
    if isinstance(X, (str, bytes)):
        raise InputError(f"{name} must be a sequence of utterances, not a single string")
    out = []
    for i, item in enumerate(X):
        toks = tuple(item.split()) if isinstance(item, str) else tuple(str(t) for t in item)
        if not toks:
            raise InputError(f"{name}[{i}] has no tokens")
        out.append(toks)
    if not out:
        raise InputError(f"{name} is empty")
    return out


def check_labels(y, n, name="y"):
    y = np.asarray(y, dtype=object)
    if y.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {y.shape}")
    check_consistent_length(y, np.empty(n))
    return [str(v) for v in y]


def check_slot_tags(slots, tokens, name="slots"):
    """Per-utterance BIO tags aligned with ``tokens``; ``None`` means all ``O``."""
    if slots is None:
        return [("O",) * len(t) for t in tokens]
    slots = [tuple(s.split()) if isinstance(s, str) else tuple(s) for s in slots]
    check_consistent_length(slots, tokens)
    for i, (s, t) in enumerate(zip(slots, tokens)):
        if len(s) != len(t):
            raise InputError(f"{name}[{i}] has {len(s)} tags for {len(t)} tokens")
    return slots


def check_qa_pairs(X, name="X"):
    """List of ``(question, context)`` string pairs."""
    out = []
    for i, item in enumerate(X):
        try:
            q, c = item
        except (TypeError, ValueError):
            raise InputError(f"{name}[{i}] must be a (question, context) pair") from None
        if not str(c).strip():
            raise InputError(f"{name}[{i}] has an empty context")
        out.append((str(q), str(c)))
    if not out:
        raise InputError(f"{name} is empty")
    return out


def check_answers(y, n, name="y"):
    """``(answer_text, char_offset)`` pairs, one per example."""
    out = []
    for i, item in enumerate(y):
        try:
            text, start = item
        except (TypeError, ValueError):
            raise InputError(f"{name}[{i}] must be an (answer_text, char_offset) pair") from None
        out.append((str(text), int(start)))
    check_consistent_length(out, np.empty(n))
    return out
