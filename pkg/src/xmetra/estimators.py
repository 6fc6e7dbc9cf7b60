"""scikit-learn style front end.

``IntentSlotTagger`` trains any baseline kind on raw token sequences and
predicts intents (``predict``) and BIO tags (``predict_slots``).
``QASpanExtractor`` does the same for ``(question, context)`` pairs.
Passing target-language data to ``fit`` selects the transfer setting.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from xmetra.data import (Corpus, LabelSpace, QATriplet, Schema, Split, Utterance, Vocab, featurize_mtod,
                         featurize_qa, tokenize_with_offsets)
from xmetra.exceptions import ConfigError
from xmetra.meta import BaselineConfig, BaselineKind, Convergence, Corpora, MetaConfig, TrainConfig, run_baseline
from xmetra.metrics import qa_f1_em
from xmetra.models import EncoderConfig, IntentSlotModel, QASpanModel
from xmetra.models.encoder import CLS_ID
from xmetra.models.qa import MAX_SEQ_LEN
from xmetra.validation import check_answers, check_labels, check_qa_pairs, check_slot_tags, check_tokens

_NEEDS_TARGET = (BaselineKind.MONO, BaselineKind.FT, BaselineKind.FT_WITH_EN, BaselineKind.X_METRA,
                 BaselineKind.X_METRA_ADA)


class _Base(BaseEstimator):
    family = "mtod"

    def _baseline_config(self):
        conv = Convergence(enabled=self.early_stopping)
        train = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, max_steps=self.max_steps,
                            weight_decay=self.weight_decay, convergence=conv)
        ft = TrainConfig(learning_rate=self.ft_learning_rate, batch_size=self.batch_size, max_steps=self.max_steps,
                         weight_decay=self.weight_decay, convergence=conv)
        factory = MetaConfig.for_qa if self.family == "qa" else MetaConfig.for_mtod
        meta = factory(n=self.n_inner, total_tasks=self.total_tasks, k=self.k, q=self.q, convergence=conv,
                       shortfall="replace", **({"alpha": self.alpha} if self.alpha else {}),
                       **({"beta": self.beta} if self.beta else {}))
        return BaselineConfig(pre=train, mono=train, ft=ft, meta=meta, family=self.family)

    def _kind(self, has_target):
        kind = BaselineKind(self.kind)
        if kind in _NEEDS_TARGET and not has_target:
            raise ConfigError(f"kind {kind.value} needs target-language data (X_target/y_target)")
        return kind

    def _train(self, model, source, target):
        kind = self._kind(bool(target))
        corpora = Corpora(source, target or None)
        cfg = self._baseline_config()
        pre = None
        if kind not in (BaselineKind.PRE, BaselineKind.MONO):
            pre = run_baseline(BaselineKind.PRE, corpora, model, cfg, self.random_state).params
        result = run_baseline(kind, corpora, model, cfg, self.random_state, pre_params=pre)
        self.params_ = result.params
        self.reports_ = result.reports
        self.model_ = model
        return self


class IntentSlotTagger(ClassifierMixin, _Base):
    """Joint intent classifier and CRF slot tagger.

    ``X``: utterances (token lists or whitespace strings); ``y``: intents;
    ``slots``: BIO tags aligned with tokens (all ``O`` when omitted).
    """

    family = "mtod"

    def __init__(self, kind="PRE", embed_dim=32, hidden_dim=32, num_layers=2, dropout_rate=0.3,
                 learning_rate=1e-2, ft_learning_rate=1e-3, batch_size=32, max_steps=2000, weight_decay=1e-3,
                 early_stopping=True, n_inner=5, alpha=None, beta=None, total_tasks=2500, k=6, q=6,
                 random_state=0):
        self.kind = kind
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.ft_learning_rate = ft_learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.weight_decay = weight_decay
        self.early_stopping = early_stopping
        self.n_inner = n_inner
        self.alpha = alpha
        self.beta = beta
        self.total_tasks = total_tasks
        self.k = k
        self.q = q
        self.random_state = random_state

    @staticmethod
    def _corpus(X, y, slots, language):
        toks = check_tokens(X)
        labels = check_labels(y, len(toks))
        tags = check_slot_tags(slots, toks)
        return Corpus([Utterance(t, i, s, language) for t, i, s in zip(toks, labels, tags)], Split.TRAIN, language)

    def fit(self, X, y, slots=None, X_target=None, y_target=None, slots_target=None):
        source = self._corpus(X, y, slots, "source")
        corpora = [source]
        if X_target is not None:
            corpora.append(self._corpus(X_target, y_target, slots_target, "target"))
        self.vocab_ = Vocab.build(corpora)
        self.labels_ = LabelSpace.from_corpora(corpora)
        self.classes_ = np.array(self.labels_.intents, dtype=object)
        enc = EncoderConfig(len(self.vocab_), self.embed_dim, self.hidden_dim, self.num_layers,
                            dropout_rate=self.dropout_rate)
        model = IntentSlotModel(enc, len(self.labels_.intents), len(self.labels_.slots))
        feats = [featurize_mtod(c.examples, self.vocab_, self.labels_) for c in corpora]
        return self._train(model, feats[0], feats[1] if len(feats) > 1 else None)

    def _ids(self, X):
        return [np.concatenate([[CLS_ID], self.vocab_.encode(t)]) for t in check_tokens(X)]

    def predict(self, X):
        check_is_fitted(self, "params_")
        intents, _ = self.model_.predict(self.params_, self._ids(X))
        return self.classes_[intents]

    def predict_slots(self, X):
        check_is_fitted(self, "params_")
        _, paths = self.model_.predict(self.params_, self._ids(X))
        return [[self.labels_.slots[i] for i in path] for path in paths]


class QASpanExtractor(_Base):
    """Extractive span QA; ``X`` is ``(question, context)`` pairs, ``y`` is ``(answer_text, char_offset)``."""

    family = "qa"

    def __init__(self, kind="PRE", embed_dim=32, hidden_dim=32, num_layers=2, dropout_rate=0.3,
                 learning_rate=1e-2, ft_learning_rate=1e-3, batch_size=4, max_steps=2000, weight_decay=1e-3,
                 early_stopping=True, n_inner=5, alpha=None, beta=None, total_tasks=2500, k=6, q=6,
                 max_seq_len=MAX_SEQ_LEN, random_state=0):
        self.kind = kind
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.ft_learning_rate = ft_learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.weight_decay = weight_decay
        self.early_stopping = early_stopping
        self.n_inner = n_inner
        self.alpha = alpha
        self.beta = beta
        self.total_tasks = total_tasks
        self.k = k
        self.q = q
        self.max_seq_len = max_seq_len
        self.random_state = random_state

    @staticmethod
    def _corpus(X, y, language):
        pairs = check_qa_pairs(X)
        answers = check_answers(y, len(pairs))
        exs = [QATriplet(q, c, a, s, language) for (q, c), (a, s) in zip(pairs, answers)]
        return Corpus(exs, Split.TRAIN, language, Schema.QA)

    def fit(self, X, y, X_target=None, y_target=None):
        corpora = [self._corpus(X, y, "source")]
        if X_target is not None:
            corpora.append(self._corpus(X_target, y_target, "target"))
        self.vocab_ = Vocab.build(corpora)
        enc = EncoderConfig(len(self.vocab_), self.embed_dim, self.hidden_dim, self.num_layers,
                            dropout_rate=self.dropout_rate, max_seq_len=self.max_seq_len)
        feats = [featurize_qa(c.examples, self.vocab_) for c in corpora]
        return self._train(QASpanModel(enc), feats[0], feats[1] if len(feats) > 1 else None)

    def predict(self, X):
        """Predicted answer strings (context words joined by single spaces)."""
        check_is_fitted(self, "params_")
        pairs = check_qa_pairs(X)
        words = [[t for t, _, _ in tokenize_with_offsets(c)] for _, c in pairs]
        ids = [(self.vocab_.encode(q.split()), self.vocab_.encode(w)) for (q, _), w in zip(pairs, words)]
        spans = self.model_.predict(self.params_, ids)
        return [" ".join(w[s:e + 1]) for w, (s, e) in zip(words, spans)]

    def score(self, X, y):
        """Mean token-overlap F1 against ``y``'s answer texts."""
        answers = check_answers(y, len(check_qa_pairs(X)))
        return float(np.mean([qa_f1_em(p, a)[0] for p, (a, _) in zip(self.predict(X), answers)]))
