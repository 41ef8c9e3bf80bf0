"""Hard-negative contrastive learning laboratory for dual encoders."""

from hncl.lexicon import (
    Concept,
    ConceptLexicon,
    LexiconError,
    MatchSpan,
    RuleKind,
    SubstitutionRule,
    builtin_lexicon,
    enumerate_negatives,
    find_keyword_spans,
    generate_hard_negative,
    load_lexicon,
)

__version__ = "0.1.0"
