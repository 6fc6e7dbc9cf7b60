"""Evaluate a parameter state on featurized examples."""

import numpy as np

from xmetra.data.corpus import tokenize_with_offsets
from xmetra.metrics import intent_accuracy, qa_f1_em, slot_f1


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def evaluate_mtod(model, params, examples, slot_labels, batch_size=256):
    """``{"intent_acc", "slot_f1"}`` in [0, 1] over featurized utterances."""
    pred_int, gold_int, pred_tags, gold_tags = [], [], [], []
    for batch in _chunks(list(examples), batch_size):
        intents, slots = model.predict(params, [ex.ids for ex in batch])
        pred_int += intents.tolist()
        gold_int += [ex.intent for ex in batch]
        for ex, path in zip(batch, slots):
            gold = [slot_labels[i] for i in ex.slots[:len(path)]]
            pred_tags.append([slot_labels[i] for i in path])
            gold_tags.append(gold)
    return {"intent_acc": intent_accuracy(pred_int, gold_int), "slot_f1": slot_f1(pred_tags, gold_tags)[2]}


def evaluate_qa(model, params, examples, batch_size=64):
    """Mean SQuAD-style ``{"qa_f1", "qa_em"}`` over featurized QA examples."""
    f1s, ems = [], []
    for batch in _chunks(list(examples), batch_size):
        spans = model.predict(params, [(ex.question_ids, ex.context_ids) for ex in batch])
        for ex, (s, e) in zip(batch, spans):
            words = [t for t, _, _ in tokenize_with_offsets(ex.source.context)]
            f1, em = qa_f1_em(" ".join(words[s:e + 1]), ex.source.answer_text)
            f1s.append(f1)
            ems.append(em)
    return {"qa_f1": float(np.mean(f1s)), "qa_em": float(np.mean(ems))}
