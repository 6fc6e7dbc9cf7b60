"""Linear-chain CRF: forward algorithm, gold-path score and Viterbi.

Emissions are ``[L, K]`` for one sequence or ``[B, L, K]`` for a padded
batch with explicit ``lengths``.  A path ``y`` scores

    start[y_0] + sum_t emissions[t, y_t] + sum_t transitions[y_{t-1}, y_t] + end[y_last]

The log-partition and path score are tape primitives with analytic
gradients (marginals from forward-backward), so the CRF costs O(L K^2)
numpy work per batch regardless of how many labels are in play.
"""

import numpy as np

from xmetra.autodiff import as_tensor, record, sub
from xmetra.exceptions import InputError


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def _batchify(emissions, lengths):
    em = np.asarray(emissions, dtype=np.float64)
    single = em.ndim == 2
    if single:
        em = em[None]
    if em.ndim != 3:
        raise InputError(f"emissions must be [L, K] or [B, L, K], got shape {em.shape}")
    b, L, _ = em.shape
    if L == 0:
        raise InputError("CRF needs sequences of length >= 1")
    if lengths is None:
        lengths = np.full(b, L, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.shape != (b,) or lengths.min() < 1 or lengths.max() > L:
        raise InputError(f"lengths {lengths.tolist()} invalid for emissions of shape {em.shape}")
    return em, lengths, single


def _forward(em, trans, start, end, lengths):
    b, L, K = em.shape
    alphas = np.empty((b, L, K))
    alpha = start[None, :] + em[:, 0]
    alphas[:, 0] = alpha
    for t in range(1, L):
        nxt = _lse(alpha[:, :, None] + trans[None], axis=1) + em[:, t]
        alpha = np.where((t < lengths)[:, None], nxt, alpha)
        alphas[:, t] = alpha
    log_z = _lse(alpha + end[None, :], axis=1)
    return alphas, log_z


def _backward(em, trans, end, lengths):
    b, L, K = em.shape
    betas = np.empty((b, L, K))
    beta = np.broadcast_to(end, (b, K)).copy()
    betas[:, L - 1] = beta
    for t in range(L - 2, -1, -1):
        nxt = _lse(trans[None] + (em[:, t + 1] + beta)[:, None, :], axis=2)
        beta = np.where((t + 1 < lengths)[:, None], nxt, end[None, :])
        betas[:, t] = beta
    return betas


def log_partition_values(emissions, transitions, start, end, lengths=None):
    """Numpy-only forward algorithm; returns log Z per sequence."""
    em, lengths, single = _batchify(emissions, lengths)
    _, log_z = _forward(em, np.asarray(transitions, float), np.asarray(start, float), np.asarray(end, float), lengths)
    return log_z[0] if single else log_z


def crf_log_partition(emissions, transitions, start, end, lengths=None):
    """Log-partition as a tape primitive; scalar for ``[L, K]`` input, ``[B]`` otherwise."""
    emissions, transitions, start, end = (as_tensor(x) for x in (emissions, transitions, start, end))
    em, lengths, single = _batchify(emissions.values, lengths)
    trans, st, en = transitions.values, start.values, end.values
    K = em.shape[2]
    if trans.shape != (K, K) or st.shape != (K,) or en.shape != (K,):
        raise InputError(f"CRF parameters do not match {K} labels")
    alphas, log_z = _forward(em, trans, st, en, lengths)
    b, L, _ = em.shape
    valid = np.arange(L)[None, :] < lengths[:, None]

    def rule(g):
        g = np.asarray(g, dtype=np.float64).reshape(b)
        betas = _backward(em, trans, en, lengths)
        unary = np.exp(alphas + betas - log_z[:, None, None]) * valid[:, :, None]
        # pairwise marginals for t >= 1
        pair = np.exp(alphas[:, :-1, :, None] + trans[None, None] + (em[:, 1:] + betas[:, 1:])[:, :, None, :]
                      - log_z[:, None, None, None])
        pair = pair * valid[:, 1:, None, None]
        last = unary[np.arange(b), lengths - 1]
        g_em = unary * g[:, None, None]
        g_tr = np.einsum("b,btij->ij", g, pair)
        g_st = (unary[:, 0] * g[:, None]).sum(axis=0)
        g_en = (last * g[:, None]).sum(axis=0)
        return (g_em[0] if single else g_em), g_tr, g_st, g_en

    out = log_z[0] if single else log_z
    return record("crf_log_partition", (emissions, transitions, start, end), np.asarray(out), rule)


def _check_tags(tags, lengths, L, K, single):
    tags = np.asarray(tags, dtype=np.int64)
    if single:
        tags = tags[None]
    if tags.ndim != 2 or tags.shape[0] != lengths.shape[0] or tags.shape[1] < lengths.max():
        raise InputError(f"gold labels of shape {tags.shape} do not align with emissions")
    tags = tags[:, :L]
    if tags.shape[1] < L:
        tags = np.pad(tags, ((0, 0), (0, L - tags.shape[1])))
    valid = np.arange(L)[None, :] < lengths[:, None]
    if np.any(((tags < 0) | (tags >= K)) & valid):
        raise InputError(f"label id outside [0, {K})")
    return np.where(valid, tags, 0), valid


def crf_path_score(emissions, transitions, start, end, tags, lengths=None):
    """Score of the gold label path(s) as a tape primitive."""
    emissions, transitions, start, end = (as_tensor(x) for x in (emissions, transitions, start, end))
    em, lengths, single = _batchify(emissions.values, lengths)
    b, L, K = em.shape
    if single and np.asarray(tags).shape[0] != L:
        raise InputError(f"gold labels length {np.asarray(tags).shape[0]} != emissions length {L}")
    tags, valid = _check_tags(tags, lengths, L, K, single)
    trans, st, en = transitions.values, start.values, end.values
    rows = np.arange(b)
    last = tags[rows, lengths - 1]
    score = st[tags[:, 0]] + en[last]
    score = score + (np.take_along_axis(em, tags[:, :, None], axis=2)[:, :, 0] * valid).sum(axis=1)
    score = score + (trans[tags[:, :-1], tags[:, 1:]] * valid[:, 1:]).sum(axis=1)

    def rule(g):
        g = np.asarray(g, dtype=np.float64).reshape(b)
        onehot = np.zeros_like(em)
        np.put_along_axis(onehot, tags[:, :, None], 1.0, axis=2)
        g_em = onehot * (valid * g[:, None])[:, :, None]
        g_tr = np.zeros((K, K))
        w = valid[:, 1:] * g[:, None]
        np.add.at(g_tr, (tags[:, :-1].reshape(-1), tags[:, 1:].reshape(-1)), w.reshape(-1))
        g_st = np.bincount(tags[:, 0], weights=g, minlength=K).astype(float)
        g_en = np.bincount(last, weights=g, minlength=K).astype(float)
        return (g_em[0] if single else g_em), g_tr, g_st, g_en

    out = score[0] if single else score
    return record("crf_path_score", (emissions, transitions, start, end), np.asarray(out), rule)


def crf_nll(emissions, transitions, start, end, tags, lengths=None):
    """Negative log-likelihood ``log Z - score(gold)``; non-negative up to round-off."""
    return sub(crf_log_partition(emissions, transitions, start, end, lengths),
               crf_path_score(emissions, transitions, start, end, tags, lengths))


def viterbi_decode(emissions, transitions, start, end, length=None):
    """Highest-scoring label path for one ``[L, K]`` emission matrix.

    Ties go to the lowest label index, both at backpointers and at the
    final step.  Returns ``(labels, best_score)``.
    """
    em = np.asarray(getattr(emissions, "values", emissions), dtype=np.float64)
    trans = np.asarray(getattr(transitions, "values", transitions), dtype=np.float64)
    st = np.asarray(getattr(start, "values", start), dtype=np.float64)
    en = np.asarray(getattr(end, "values", end), dtype=np.float64)
    if em.ndim != 2 or em.shape[0] == 0:
        raise InputError(f"viterbi needs a non-empty [L, K] emission matrix, got {em.shape}")
    if length is not None:
        em = em[:length]
    L, K = em.shape
    score = st + em[0]
    back = np.zeros((L, K), dtype=np.int64)
    for t in range(1, L):
        cand = score[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(K)] + em[t]
    score = score + en
    best = int(np.argmax(score))
    path = [best]
    for t in range(L - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    path.reverse()
    return path, float(np.max(score))


class CrfLayer:
    """Parameter names and initialisation for a ``num_labels``-state CRF."""

    def __init__(self, num_labels, prefix="crf"):
        if num_labels < 1:
            raise InputError("CRF needs at least one label")
        self.num_labels = num_labels
        self.prefix = prefix

    @property
    def names(self):
        p = self.prefix
        return f"{p}.transitions", f"{p}.start", f"{p}.end"

    def init_params(self, rng, scale=0.01):
        K = self.num_labels
        tr, st, en = self.names
        return {
            tr: rng.normal(0.0, scale, size=(K, K)),
            st: np.zeros(K),
            en: np.zeros(K),
        }

    def tensors(self, params):
        return tuple(params[n] for n in self.names)

    def nll(self, params, emissions, tags, lengths=None):
        return crf_nll(emissions, *self.tensors(params), tags, lengths)

    def decode(self, params, emissions, length=None):
        tr, st, en = (params[n] for n in self.names)
        return viterbi_decode(emissions, tr, st, en, length)[0]


__all__ = [
    "CrfLayer",
    "crf_log_partition",
    "crf_nll",
    "crf_path_score",
    "log_partition_values",
    "viterbi_decode",
]
