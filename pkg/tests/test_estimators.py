import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from xmetra.data import Split, SyntheticLanguageSpec, generate_synthetic_pair, generate_synthetic_qa
from xmetra.estimators import IntentSlotTagger, QASpanExtractor
from xmetra.exceptions import ConfigError, InputError
from xmetra.validation import check_answers, check_labels, check_qa_pairs, check_slot_tags, check_tokens

SMALL = dict(embed_dim=8, hidden_dim=8, num_layers=1, max_steps=30, early_stopping=False, total_tasks=8, k=2, q=2)


@pytest.fixture(scope="module")
def mtod():
    kw = dict(vocab_size=60, num_intents=4, num_slot_types=2, num_domains=2)
    s, t = generate_synthetic_pair(SyntheticLanguageSpec(train_size=80, dev_size=0, test_size=0, **kw),
                                   SyntheticLanguageSpec(language="tgt", lexical_overlap=0.5, train_size=0,
                                                         dev_size=32, test_size=20, **kw))

    def unpack(c):
        return [list(e.tokens) for e in c], [e.intent for e in c], [list(e.slots) for e in c]

    return unpack(s[Split.TRAIN]), unpack(t[Split.DEV]), unpack(t[Split.TEST])


def test_validation_helpers():
    assert check_tokens(["a b", ["c"]]) == [("a", "b"), ("c",)]
    with pytest.raises(InputError):
        check_tokens("a b")
    with pytest.raises(InputError):
        check_tokens([""])
    with pytest.raises(ValueError):
        check_labels(["x"], 2)
    assert check_slot_tags(None, [("a", "b")]) == [("O", "O")]
    with pytest.raises(InputError):
        check_slot_tags([["O"]], [("a", "b")])
    with pytest.raises(InputError):
        check_qa_pairs([("q", " ")])
    with pytest.raises(InputError):
        check_answers([("x",)], 1)


def test_tagger_params_and_clone():
    est = IntentSlotTagger(kind="FT", k=3)
    params = est.get_params()
    assert params["kind"] == "FT" and params["k"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    with pytest.raises(NotFittedError):
        est.predict([["a"]])


def test_tagger_fit_predict(mtod):
    (X, y, slots), _, (Xt, yt, st) = mtod
    est = IntentSlotTagger(**SMALL, learning_rate=0.05).fit(X, y, slots)
    pred = est.predict(Xt)
    assert pred.shape == (len(Xt),) and set(pred) <= set(est.classes_)
    tags = est.predict_slots(Xt)
    assert [len(t) for t in tags] == [len(x) for x in Xt]
    assert 0.0 <= est.score(Xt, yt) <= 1.0
    # training accuracy beats chance on four classes
    assert est.score(X, y) > 0.25
    again = IntentSlotTagger(**SMALL, learning_rate=0.05).fit(X, y, slots)
    np.testing.assert_array_equal(again.predict(Xt), pred)


@pytest.mark.parametrize("kind", ["FT", "X_METRA_ADA"])
def test_tagger_transfer_kinds(mtod, kind):
    (X, y, slots), (Xd, yd, sd), (Xt, yt, _) = mtod
    est = IntentSlotTagger(kind=kind, **SMALL).fit(X, y, slots, X_target=Xd, y_target=yd, slots_target=sd)
    assert len(est.predict(Xt)) == len(Xt)
    assert est.reports_


def test_tagger_needs_target_for_transfer(mtod):
    (X, y, slots), _, _ = mtod
    with pytest.raises(ConfigError, match="target"):
        IntentSlotTagger(kind="X_METRA", **SMALL).fit(X, y, slots)


def test_qa_extractor():
    spec = SyntheticLanguageSpec(vocab_size=40)
    train = generate_synthetic_qa(spec, 24)
    X = [(t.question, t.context) for t in train]
    y = [(t.answer_text, t.answer_start) for t in train]
    est = QASpanExtractor(embed_dim=6, hidden_dim=6, num_layers=1, max_steps=10, early_stopping=False,
                          max_seq_len=64).fit(X, y)
    answers = est.predict(X[:5])
    assert len(answers) == 5
    for (q, c), a in zip(X[:5], answers):
        assert a and a in c
    assert 0.0 <= est.score(X, y) <= 1.0
