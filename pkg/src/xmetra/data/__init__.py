from xmetra.data.corpus import (
    Corpus,
    LabelSpace,
    QATriplet,
    Schema,
    Split,
    Utterance,
    Vocab,
    answer_token_span,
    bio_labels,
    featurize_mtod,
    featurize_qa,
    load_corpus,
    save_corpus,
    slot_types,
    tokenize_with_offsets,
)
from xmetra.data.synthetic import (
    SyntheticLanguageSpec,
    build_grammar,
    generate_synthetic_pair,
    generate_synthetic_qa,
    vocabulary_map,
)
from xmetra.data.tfidf import TfidfIndex, cosine, cosine_matrix, tfidf_encode

__all__ = [
    "Corpus", "LabelSpace", "QATriplet", "Schema", "Split", "Utterance", "Vocab",
    "answer_token_span", "bio_labels", "featurize_mtod", "featurize_qa", "load_corpus",
    "save_corpus", "slot_types", "tokenize_with_offsets",
    "SyntheticLanguageSpec", "build_grammar", "generate_synthetic_pair", "generate_synthetic_qa",
    "vocabulary_map",
    "TfidfIndex", "cosine", "cosine_matrix", "tfidf_encode",
]
