"""Deterministic lexical encoder: TF-IDF over whitespace tokens.

Weights are ``tf * log((N + 1) / (df + 1))`` with raw term counts ``tf``,
``N`` documents in the fitted pool and ``df`` the number of pool documents
containing the term.  Terms unseen at fit time contribute nothing.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted


def _terms(text):
    return text.split()


class TfidfIndex(TransformerMixin, BaseEstimator):
    """Fit on a pool of texts, then map any text to a dense weight vector."""

    def __init__(self, lowercase=False):
        self.lowercase = lowercase

    def _prep(self, text):
        return text.lower() if self.lowercase else text

    def fit(self, X, y=None):
        docs = [_terms(self._prep(t)) for t in X]
        vocab = sorted({w for d in docs for w in d})
        self.vocabulary_ = {w: i for i, w in enumerate(vocab)}
        df = np.zeros(len(vocab))
        for d in docs:
            for w in set(d):
                df[self.vocabulary_[w]] += 1
        self.n_documents_ = len(docs)
        self.document_frequency_ = df
        self.idf_ = np.log((self.n_documents_ + 1.0) / (df + 1.0))
        return self

    def transform(self, X):
        check_is_fitted(self, "idf_")
        out = np.zeros((len(X), len(self.vocabulary_)))
        for row, text in enumerate(X):
            for w in _terms(self._prep(text)):
                j = self.vocabulary_.get(w)
                if j is not None:
                    out[row, j] += 1.0
        return out * self.idf_

    def encode(self, text):
        if not text.strip():
            warnings.warn("empty text encodes to the zero vector", RuntimeWarning, stacklevel=2)
        return self.transform([text])[0]


def tfidf_encode(text, index):
    return index.encode(text)


def cosine(u, v):
    """Cosine similarity; 0.0 (with a warning) when either vector is zero."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine of a zero vector is taken as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_matrix(A, B):
    """Pairwise cosines between rows of ``A`` and ``B``; zero rows give 0."""
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    An = np.divide(A, na, out=np.zeros_like(A), where=na > 0)
    Bn = np.divide(B, nb, out=np.zeros_like(B), where=nb > 0)
    return np.clip(An @ Bn.T, -1.0, 1.0)
