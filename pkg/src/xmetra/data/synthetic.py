"""Seeded synthetic "languages" for desk-scale cross-lingual experiments.

The source language is sampled from a template grammar: every intent is a
(domain, action) pair, so recognising it needs both a domain keyword and
an action keyword; slots are typed filler spans drawn from per-type
lexicons; the remaining positions are function words.  A target language
shares the grammar but renames a ``1 - lexical_overlap`` fraction of the
vocabulary and can corrupt tokens with label-preserving noise.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from xmetra.data.corpus import Corpus, Schema, Split, Utterance, QATriplet, bio_labels
from xmetra.exceptions import ConfigError

KEYWORDS_PER_DOMAIN = 4
KEYWORDS_PER_ACTION = 4
FILLERS_PER_SLOT = 6
MIN_FUNCTION_WORDS = 12


@dataclass(frozen=True)
class SyntheticLanguageSpec:
    language: str = "src"
    base_seed: int = 0
    vocab_size: int = 300
    num_intents: int = 12
    num_slot_types: int = 4
    num_domains: int = 3
    lexical_overlap: float = 1.0
    permutation_seed: int = 0
    label_noise: float = 0.0
    min_len: int = 4
    max_len: int = 10
    train_size: int = 1200
    dev_size: int = 120
    test_size: int = 400

    def __post_init__(self):
        if not 0.0 <= self.lexical_overlap <= 1.0:
            raise ConfigError("lexical_overlap must lie in [0, 1]")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError("label_noise must lie in [0, 1)")
        if self.num_intents < 1 or self.num_slot_types < 1 or self.num_domains < 1:
            raise ConfigError("num_intents, num_slot_types and num_domains must be positive")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if min(self.train_size, self.dev_size, self.test_size) < 0:
            raise ConfigError("split sizes must be non-negative")

    @classmethod
    def from_mapping(cls, mapping):
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in mapping.items():
            if key not in kinds:
                raise ConfigError(f"unknown synthetic key {key!r}")
            default = getattr(cls, key)
            out[key] = type(default)(value)
        return cls(**out)


@dataclass(frozen=True)
class Grammar:
    intents: tuple          # intent label per intent id
    domain_of: tuple        # intent id -> domain id
    action_of: tuple        # intent id -> action id
    domain_words: tuple     # domain id -> tuple of word ids
    action_words: tuple
    slot_names: tuple
    slot_words: tuple       # slot type id -> tuple of word ids
    intent_slots: tuple     # intent id -> allowed slot type ids
    function_words: tuple


def build_grammar(spec):
    n_actions = math.ceil(spec.num_intents / spec.num_domains)
    needed = (spec.num_domains * KEYWORDS_PER_DOMAIN + n_actions * KEYWORDS_PER_ACTION
              + spec.num_slot_types * FILLERS_PER_SLOT + MIN_FUNCTION_WORDS)
    if spec.vocab_size < needed:
        raise ConfigError(f"vocab_size={spec.vocab_size} too small for {spec.num_intents} intents "
                          f"and {spec.num_slot_types} slot types (need >= {needed})")
    rng = np.random.default_rng([spec.base_seed, 0x6172])
    words = rng.permutation(spec.vocab_size)
    pos = 0

    def take(n):
        nonlocal pos
        out = tuple(int(w) for w in words[pos:pos + n])
        pos += n
        return out

    domain_words = tuple(take(KEYWORDS_PER_DOMAIN) for _ in range(spec.num_domains))
    action_words = tuple(take(KEYWORDS_PER_ACTION) for _ in range(n_actions))
    slot_words = tuple(take(FILLERS_PER_SLOT) for _ in range(spec.num_slot_types))
    function_words = tuple(int(w) for w in words[pos:])
    domain_of = tuple(i % spec.num_domains for i in range(spec.num_intents))
    action_of = tuple(i // spec.num_domains for i in range(spec.num_intents))
    intents = tuple(f"d{domain_of[i]}/a{action_of[i]}" for i in range(spec.num_intents))
    n_allowed = min(2, spec.num_slot_types)
    intent_slots = tuple(tuple(sorted(int(s) for s in rng.choice(spec.num_slot_types, n_allowed, replace=False)))
                         for _ in range(spec.num_intents))
    slot_names = tuple(f"slot{j}" for j in range(spec.num_slot_types))
    return Grammar(intents, domain_of, action_of, domain_words, action_words, slot_names,
                   slot_words, intent_slots, function_words)


def _sample_sentence(grammar, spec, rng):
    """One (word ids, intent id, slot tags) triple in source word ids."""
    intent = int(rng.integers(len(grammar.intents)))
    chunks = [
        ([int(rng.choice(grammar.domain_words[grammar.domain_of[intent]]))], None),
        ([int(rng.choice(grammar.action_words[grammar.action_of[intent]]))], None),
    ]
    for s in grammar.intent_slots[intent]:
        if rng.random() < 0.7:
            n = int(rng.integers(1, 3))
            chunks.append(([int(w) for w in rng.choice(grammar.slot_words[s], n)], s))
    used = sum(len(c[0]) for c in chunks)
    length = max(int(rng.integers(spec.min_len, spec.max_len + 1)), used)
    for _ in range(length - used):
        chunks.append(([int(rng.choice(grammar.function_words))], None))
    order = rng.permutation(len(chunks))
    words, tags = [], []
    for i in order:
        ws, s = chunks[i]
        words += ws
        if s is None:
            tags += ["O"] * len(ws)
        else:
            name = grammar.slot_names[s]
            tags += [f"B-{name}"] + [f"I-{name}"] * (len(ws) - 1)
    return words, intent, tags


def vocabulary_map(source_spec, target_spec):
    """Word id -> surface string in the target language.

    ``round(lexical_overlap * vocab_size)`` ids keep their source surface
    form; the rest get language-specific strings assigned by a seeded
    permutation, so no renamed id collides with a source string.
    """
    V = source_spec.vocab_size
    rng = np.random.default_rng([target_spec.permutation_seed, 0x7065])
    shared = set(int(i) for i in rng.permutation(V)[:round(target_spec.lexical_overlap * V)])
    renamed = [i for i in range(V) if i not in shared]
    perm = rng.permutation(len(renamed))
    out = {i: f"w{i}" for i in shared}
    for j, i in enumerate(renamed):
        out[i] = f"{target_spec.language}{int(perm[j])}"
    return out


def _sample_corpus(grammar, spec, surface, n, split, rng, labels):
    examples = []
    for _ in range(n):
        words, intent, tags = _sample_sentence(grammar, spec, rng)
        if spec.label_noise > 0:
            noisy = rng.random(len(words)) < spec.label_noise
            repl = rng.choice(grammar.function_words, len(words))
            words = [int(r) if z else w for w, z, r in zip(words, noisy, repl)]
        examples.append(Utterance([surface[w] for w in words], grammar.intents[intent], tags, spec.language))
    return Corpus(examples, split, spec.language, Schema.MTOD, grammar.intents, labels)


def generate_synthetic_pair(source_spec, target_spec):
    """Return ``(source_splits, target_splits)``, each ``{Split: Corpus}``."""
    for name in ("vocab_size", "num_intents", "num_slot_types", "num_domains"):
        if getattr(source_spec, name) != getattr(target_spec, name):
            raise ConfigError(f"source and target disagree on {name}")
    grammar = build_grammar(source_spec)
    labels = bio_labels(grammar.slot_names)
    src_surface = {i: f"w{i}" for i in range(source_spec.vocab_size)}
    tgt_surface = vocabulary_map(source_spec, target_spec)
    out = []
    for spec, surface in ((source_spec, src_surface), (target_spec, tgt_surface)):
        rng = np.random.default_rng([spec.base_seed, 0x6C61, hash_language(spec.language)])
        out.append({
            split: _sample_corpus(grammar, spec, surface, n, split, rng, labels)
            for split, n in ((Split.TRAIN, spec.train_size), (Split.DEV, spec.dev_size), (Split.TEST, spec.test_size))
        })
    return out[0], out[1]


def hash_language(code):
    """Stable small integer for a language code (``hash()`` is salted per process)."""
    return int.from_bytes(code.encode("utf-8")[:8].ljust(8, b"\0"), "little") % (2 ** 31)


def generate_synthetic_qa(spec, num_examples, split=Split.TRAIN, answer_len=(1, 3), context_len=(12, 30)):
    """Synthetic QA triplets: the question names a key word; the answer follows it in the context."""
    rng = np.random.default_rng([spec.base_seed, 0x7161, hash_language(spec.language), list(Split).index(Split(split))])
    V = spec.vocab_size
    if V < 20:
        raise ConfigError("vocab_size too small for QA generation")
    keys = [f"{spec.language}k{i}" for i in range(V // 4)]
    fillers = [f"{spec.language}f{i}" for i in range(V - V // 4)]
    examples = []
    for _ in range(num_examples):
        key = keys[int(rng.integers(len(keys)))]
        n_ctx = int(rng.integers(context_len[0], context_len[1] + 1))
        n_ans = int(rng.integers(answer_len[0], answer_len[1] + 1))
        answer = [fillers[int(i)] for i in rng.integers(len(fillers), size=n_ans)]
        ctx = [fillers[int(i)] for i in rng.integers(len(fillers), size=n_ctx)]
        at = int(rng.integers(0, n_ctx))
        ctx = ctx[:at] + [key] + answer + ctx[at:]
        question = " ".join(["what", "follows", key])
        context = " ".join(ctx)
        answer_text = " ".join(answer)
        start = len(" ".join(ctx[:at + 1])) + 1
        examples.append(QATriplet(question, context, answer_text, start, spec.language))
    return Corpus(examples, split, spec.language, Schema.QA)
