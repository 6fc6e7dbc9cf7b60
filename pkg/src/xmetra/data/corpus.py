"""Corpus records, JSONL persistence, vocabularies and featurization."""

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from xmetra.exceptions import ParseError, ValidationError
from xmetra.models.encoder import CLS_ID, PAD_ID, SEP_ID, UNK_ID
from xmetra.models.nlu import EncodedUtterance
from xmetra.models.qa import EncodedQA

_TAG = re.compile(r"^(O|[BI]-\S+)$")


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


class Schema(str, Enum):
    MTOD = "mtod"
    QA = "qa"


# Records compare by identity: two identical sentences in a pool are still
# two distinct examples as far as support/query disjointness is concerned.
@dataclass(frozen=True, eq=False)
class Utterance:
    tokens: tuple
    intent: str
    slots: tuple
    language: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "slots", tuple(self.slots))
        if len(self.tokens) == 0:
            raise ValidationError("utterance has no tokens")
        if len(self.slots) != len(self.tokens):
            raise ValidationError(f"{len(self.slots)} slot tags for {len(self.tokens)} tokens")
        for tag in self.slots:
            if not _TAG.match(tag):
                raise ValidationError(f"malformed BIO tag {tag!r}")

    def to_record(self):
        return {"tokens": list(self.tokens), "intent": self.intent, "slots": list(self.slots), "lang": self.language}


@dataclass(frozen=True, eq=False)
class QATriplet:
    question: str
    context: str
    answer_text: str
    answer_start: int
    language: str

    def __post_init__(self):
        end = self.answer_start + len(self.answer_text)
        if self.answer_start < 0 or self.context[self.answer_start:end] != self.answer_text:
            raise ValidationError(f"answer {self.answer_text!r} not found at offset {self.answer_start}")
        if not self.context.strip():
            raise ValidationError("empty context")

    @property
    def text(self):
        """Space-delimited concatenation used for similarity."""
        return f"{self.question} {self.context} {self.answer_text}"

    def to_record(self):
        return {"question": self.question, "context": self.context, "answer_text": self.answer_text,
                "answer_start": self.answer_start, "lang": self.language}


@dataclass
class Corpus:
    examples: list
    split: Split
    language: str
    schema: Schema = Schema.MTOD
    intent_labels: tuple = ()
    slot_labels: tuple = ()

    def __post_init__(self):
        self.split = Split(self.split)
        self.schema = Schema(self.schema)
        kind = Utterance if self.schema is Schema.MTOD else QATriplet
        for ex in self.examples:
            if not isinstance(ex, kind):
                raise ValidationError(f"{self.schema.value} corpus holds a {type(ex).__name__}")
        if self.schema is Schema.MTOD:
            used_intents = {ex.intent for ex in self.examples}
            used_slots = {t for ex in self.examples for t in ex.slots}
            if not self.intent_labels:
                self.intent_labels = tuple(sorted(used_intents))
            if not self.slot_labels:
                self.slot_labels = bio_labels(slot_types(used_slots))
            missing = (used_intents - set(self.intent_labels)) | (used_slots - set(self.slot_labels))
            if missing:
                raise ValidationError(f"label inventory misses {sorted(missing)}")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def subset(self, indices, split=None):
        return Corpus([self.examples[i] for i in indices], split or self.split, self.language,
                      self.schema, self.intent_labels, self.slot_labels)


def slot_types(tags):
    return sorted({t[2:] for t in tags if t != "O"})


def bio_labels(types):
    """``("O", "B-x", "I-x", ...)`` for the given slot types."""
    out = ["O"]
    for t in sorted(types):
        out += [f"B-{t}", f"I-{t}"]
    return tuple(out)


def _require(record, name, kind, line):
    if name not in record:
        raise ParseError("missing field", line=line, field=name)
    value = record[name]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ParseError(f"expected {getattr(kind, '__name__', kind)}", line=line, field=name)
    return value


def _parse_record(record, schema, line):
    if not isinstance(record, dict):
        raise ParseError("record is not a JSON object", line=line)
    lang = _require(record, "lang", str, line)
    try:
        if schema is Schema.MTOD:
            tokens = _require(record, "tokens", list, line)
            slots = _require(record, "slots", list, line)
            if not all(isinstance(t, str) for t in tokens + slots):
                raise ParseError("tokens and slots must be strings", line=line, field="tokens")
            return Utterance(tokens, _require(record, "intent", str, line), slots, lang)
        return QATriplet(_require(record, "question", str, line), _require(record, "context", str, line),
                         _require(record, "answer_text", str, line), _require(record, "answer_start", int, line),
                         lang)
    except ValidationError as exc:
        raise ValidationError(f"line {line}: {exc}") from None


def load_corpus(path, schema, split=Split.TRAIN, language=None):
    """Read a JSONL corpus; errors name the offending line (1-based) and field."""
    schema = Schema(schema)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            examples.append(_parse_record(record, schema, lineno))
    langs = {ex.language for ex in examples}
    if language is None:
        if len(langs) > 1:
            raise ValidationError(f"{path}: mixed languages {sorted(langs)}")
        language = langs.pop() if langs else "und"
    return Corpus(examples, split, language, schema)


def save_corpus(corpus, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in corpus.examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")


def tokenize_with_offsets(text):
    """Whitespace tokens with ``(token, char_start, char_end)``."""
    return [(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text)]


def answer_token_span(triplet):
    """Inclusive context-token span covering the answer characters."""
    toks = tokenize_with_offsets(triplet.context)
    lo, hi = triplet.answer_start, triplet.answer_start + len(triplet.answer_text)
    covered = [i for i, (_, s, e) in enumerate(toks) if s < hi and e > lo]
    if not covered:
        raise ValidationError(f"answer {triplet.answer_text!r} covers no context token")
    return covered[0], covered[-1]


@dataclass
class Vocab:
    """Token-to-id map with reserved PAD/CLS/SEP/UNK ids."""

    tokens: list = field(default_factory=lambda: ["[PAD]", "[CLS]", "[SEP]", "[UNK]"])

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        assert self.index["[PAD]"] == PAD_ID and self.index["[CLS]"] == CLS_ID
        assert self.index["[SEP]"] == SEP_ID and self.index["[UNK]"] == UNK_ID

    @classmethod
    def build(cls, corpora):
        vocab = cls()
        seen = set(vocab.tokens)
        for corpus in corpora:
            for ex in corpus:
                words = ex.tokens if isinstance(ex, Utterance) else ex.text.split()
                for w in words:
                    if w not in seen:
                        seen.add(w)
                        vocab.tokens.append(w)
        vocab.__post_init__()
        return vocab

    def __len__(self):
        return len(self.tokens)

    def encode(self, words):
        return np.array([self.index.get(w, UNK_ID) for w in words], dtype=np.int64)


@dataclass(frozen=True)
class LabelSpace:
    intents: tuple
    slots: tuple

    @classmethod
    def from_corpora(cls, corpora):
        intents, types = set(), set()
        for c in corpora:
            intents.update(c.intent_labels)
            types.update(slot_types(c.slot_labels))
        return cls(tuple(sorted(intents)), bio_labels(types))

    def slot_ids(self, tags):
        index = {t: i for i, t in enumerate(self.slots)}
        return np.array([index[t] for t in tags], dtype=np.int64)


def featurize_mtod(examples, vocab, labels):
    intent_index = {t: i for i, t in enumerate(labels.intents)}
    out = []
    for ex in examples:
        ids = np.concatenate([[CLS_ID], vocab.encode(ex.tokens)])
        out.append(EncodedUtterance(ids, intent_index[ex.intent], labels.slot_ids(ex.slots), ex))
    return out


def featurize_qa(examples, vocab):
    out = []
    for ex in examples:
        start, end = answer_token_span(ex)
        ctx = [t for t, _, _ in tokenize_with_offsets(ex.context)]
        out.append(EncodedQA(vocab.encode(ex.question.split()), vocab.encode(ctx), start, end, ex))
    return out
