"""Concept lexicons: keyword matching and caption rewriting.

A lexicon holds substitution rules for one concept (color, object, location,
size). Captions are matched token-wise (case-insensitive, edge punctuation
ignored, longest keyword first) and rewritten by splicing a replacement
keyword over a matched span while leaving every other token untouched.

Lexicon file format (UTF-8, line oriented)::

    # comment
    concept: color
    class: blue, red, green
    sym: left <-> right
    dir: long -> short

``class`` rules let every member replace every other member, ``sym`` rules
swap the two keywords in either direction, and ``dir`` rules replace the
source with the target only.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "Concept",
    "RuleKind",
    "SubstitutionRule",
    "ConceptLexicon",
    "MatchSpan",
    "LexiconError",
    "load_lexicon",
    "builtin_lexicon",
    "find_keyword_spans",
    "generate_hard_negative",
    "enumerate_negatives",
    "tokenize",
    "normalize_token",
    "COLOR_WORDS",
    "OBJECT_WORDS",
    "LOCATION_PAIRS",
    "SIZE_SYMMETRIC_PAIRS",
    "SIZE_DIRECTED_PAIRS",
]


class LexiconError(ValueError):
    """Raised for malformed lexicon sources or invalid matching preconditions."""


class Concept(str, Enum):
    COLOR = "color"
    OBJECT = "object"
    LOCATION = "location"
    SIZE = "size"


class RuleKind(str, Enum):
    CLOSED_CLASS = "closed_class"
    SYMMETRIC_PAIR = "symmetric_pair"
    DIRECTED_PAIR = "directed_pair"


# Paper-default keyword inventories. Keywords may be multi-word phrases.
COLOR_WORDS = (
    "blue", "red", "green", "yellow", "black", "white", "brown", "gray", "orange",
)

OBJECT_WORDS = (
    "person", "bicycle", "car", "motorbike", "aeroplane", "bus", "train", "truck",
    "boat", "traffic light", "fire hydrant", "stop sign", "parking meter", "bench",
    "bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra",
    "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee",
    "skis", "snowboard", "sports ball", "kite", "baseball bat", "baseball glove",
    "skateboard", "surfboard", "tennis racket", "bottle", "wine glass", "cup",
    "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "sofa",
    "potted plant", "bed", "dining table", "toilet", "tv monitor", "laptop",
    "mouse", "remote", "keyboard", "cell phone", "microwave", "oven", "toaster",
    "sink", "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)

LOCATION_PAIRS = (
    ("left", "right"),
    ("above", "below"),
    ("under", "over"),
    ("foreground", "background"),
    ("in front of", "behind"),
    ("back", "front"),
)

SIZE_SYMMETRIC_PAIRS = (
    ("large", "small"),
    ("little", "big"),
    ("tall", "short"),
    ("thin", "fat"),
    ("huge", "tiny"),
)

# One-way substitutions; the reverse of "short" resolves via tall <-> short.
SIZE_DIRECTED_PAIRS = (("long", "short"),)


@dataclass(frozen=True)
class SubstitutionRule:
    """One substitution rule. Matchable keywords depend on the kind:

    closed_class   every member is a keyword, replaceable by any other member
    symmetric_pair both words are keywords, each replaced by its partner
    directed_pair  only the source is a keyword; the target is the sole
                   replacement and is never matched by this rule
    """

    kind: RuleKind
    members: tuple[str, ...]

    def __post_init__(self) -> None:
        members = tuple(w.strip().lower() for w in self.members)
        if any(not w for w in members):
            raise LexiconError("rule contains an empty keyword")
        if self.kind is RuleKind.CLOSED_CLASS:
            if len(members) < 2:
                raise LexiconError("closed_class rule needs at least 2 members")
            if len(set(members)) != len(members):
                raise LexiconError(f"duplicate keyword within rule: {members}")
        else:
            if len(members) != 2:
                raise LexiconError(f"{self.kind.value} rule needs exactly 2 keywords")
            if members[0] == members[1]:
                raise LexiconError(f"pair keywords must be distinct: {members}")
        object.__setattr__(self, "members", members)

    @property
    def keywords(self) -> tuple[str, ...]:
        """Words this rule can match in a caption."""
        if self.kind is RuleKind.DIRECTED_PAIR:
            return (self.members[0],)
        return self.members

    def replacements(self, keyword: str) -> tuple[str, ...]:
        """Legal replacements for a matched keyword, in declaration order."""
        if self.kind is RuleKind.CLOSED_CLASS:
            return tuple(w for w in self.members if w != keyword)
        a, b = self.members
        if self.kind is RuleKind.SYMMETRIC_PAIR:
            return (b,) if keyword == a else (a,)
        return (b,)  # directed: source -> target only


@dataclass(frozen=True)
class ConceptLexicon:
    """Immutable keyword inventory for one concept, safe to share across workers."""

    concept: Concept
    rules: tuple[SubstitutionRule, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)
    _max_phrase_len: int = field(default=1, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, SubstitutionRule] = {}
        for rule in self.rules:
            for kw in rule.keywords:
                if kw in index:
                    raise LexiconError(f"duplicate keyword across rules: {kw!r}")
                index[kw] = rule
        if not index:
            raise LexiconError(f"lexicon for {self.concept.value!r} has no keywords")
        object.__setattr__(self, "_index", index)
        object.__setattr__(
            self, "_max_phrase_len", max(len(kw.split()) for kw in index)
        )

    @property
    def keywords(self) -> tuple[str, ...]:
        """All matchable keywords in declaration order."""
        return tuple(self._index)

    def rule_for(self, keyword: str) -> Optional[SubstitutionRule]:
        return self._index.get(keyword)

    def replacements(self, keyword: str) -> tuple[str, ...]:
        rule = self._index.get(keyword)
        if rule is None:
            raise LexiconError(f"{keyword!r} is not a keyword of this lexicon")
        return rule.replacements(keyword)


@dataclass(frozen=True)
class MatchSpan:
    """A keyword occurrence in a tokenized caption."""

    token_start: int
    token_len: int
    keyword: str
    rule: SubstitutionRule


_PUNCT = string.punctuation


def normalize_token(token: str) -> str:
    """Lowercase and strip punctuation from token edges (inner chars kept)."""
    return token.strip(_PUNCT).lower()


def tokenize(caption: Union[str, Sequence[str]]) -> list[str]:
    """Whitespace tokenization; token sequences pass through unchanged."""
    if isinstance(caption, str):
        return caption.split()
    return list(caption)


def find_keyword_spans(
    caption: Union[str, Sequence[str]], lexicon: ConceptLexicon
) -> list[MatchSpan]:
    """All non-overlapping keyword matches, left to right, longest phrase first.

    Matching compares normalized tokens (lowercased, edge punctuation removed)
    against the lexicon keywords, so "Umbrella." matches "umbrella" while
    "background" never matches "back".
    """
    tokens = tokenize(caption)
    norm = [normalize_token(t) for t in tokens]
    spans: list[MatchSpan] = []
    i = 0
    n = len(norm)
    while i < n:
        matched = False
        for length in range(min(lexicon._max_phrase_len, n - i), 0, -1):
            phrase = " ".join(norm[i : i + length])
            rule = lexicon.rule_for(phrase)
            if rule is not None:
                spans.append(MatchSpan(i, length, phrase, rule))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return spans


def _splice(tokens: list[str], span: MatchSpan, replacement: str) -> str:
    """Replace the span's tokens with the replacement keyword.

    Surrounding tokens are preserved verbatim; edge punctuation of the
    replaced span (e.g. a trailing period) carries over to the replacement.
    """
    first = tokens[span.token_start]
    last = tokens[span.token_start + span.token_len - 1]
    lead = first[: len(first) - len(first.lstrip(_PUNCT))]
    trail = last[len(last.rstrip(_PUNCT)) :]
    new = replacement.split()
    new[0] = lead + new[0]
    new[-1] = new[-1] + trail
    out = tokens[: span.token_start] + new + tokens[span.token_start + span.token_len :]
    return " ".join(out)


def generate_hard_negative(
    caption: Union[str, Sequence[str]],
    lexicon: ConceptLexicon,
    rng: np.random.Generator,
) -> Optional[str]:
    """Rewrite one uniformly chosen keyword span with a uniformly chosen
    legal replacement, or return None when the caption has no keyword."""
    tokens = tokenize(caption)
    spans = find_keyword_spans(tokens, lexicon)
    if not spans:
        return None
    span = spans[int(rng.integers(len(spans)))]
    options = span.rule.replacements(span.keyword)
    replacement = options[int(rng.integers(len(options)))]
    return _splice(tokens, span, replacement)


def enumerate_negatives(
    caption: Union[str, Sequence[str]], lexicon: ConceptLexicon
) -> list[str]:
    """All rewrites of the FIRST matched span, in lexicon declaration order.

    Later spans are left untouched, so the output length equals the
    replacement count of the first span's rule.
    """
    tokens = tokenize(caption)
    spans = find_keyword_spans(tokens, lexicon)
    if not spans:
        raise LexiconError(
            f"caption has no {lexicon.concept.value} keyword: {' '.join(tokens)!r}"
        )
    span = spans[0]
    return [_splice(tokens, span, rep) for rep in span.rule.replacements(span.keyword)]


def _builtin_rules(concept: Concept) -> tuple[SubstitutionRule, ...]:
    if concept is Concept.COLOR:
        return (SubstitutionRule(RuleKind.CLOSED_CLASS, COLOR_WORDS),)
    if concept is Concept.OBJECT:
        return (SubstitutionRule(RuleKind.CLOSED_CLASS, OBJECT_WORDS),)
    if concept is Concept.LOCATION:
        return tuple(
            SubstitutionRule(RuleKind.SYMMETRIC_PAIR, pair) for pair in LOCATION_PAIRS
        )
    rules = [SubstitutionRule(RuleKind.SYMMETRIC_PAIR, p) for p in SIZE_SYMMETRIC_PAIRS]
    rules += [SubstitutionRule(RuleKind.DIRECTED_PAIR, p) for p in SIZE_DIRECTED_PAIRS]
    return tuple(rules)


_BUILTINS: dict[Concept, ConceptLexicon] = {}


def builtin_lexicon(concept: Union[Concept, str]) -> ConceptLexicon:
    """The bundled default lexicon for a concept (9 color words, 80 object
    names, 6 location pairs, 5 size pairs plus long -> short)."""
    concept = Concept(concept)
    if concept not in _BUILTINS:
        _BUILTINS[concept] = ConceptLexicon(concept, _builtin_rules(concept))
    return _BUILTINS[concept]


def _parse_lexicon_text(text: str) -> tuple[Optional[Concept], tuple[SubstitutionRule, ...]]:
    concept: Optional[Concept] = None
    rules: list[SubstitutionRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise LexiconError(f"line {lineno}: expected 'key: value', got {line!r}")
        key = key.strip().lower()
        rest = rest.strip()
        try:
            if key == "concept":
                concept = Concept(rest.lower())
            elif key == "class":
                members = tuple(w.strip() for w in rest.split(","))
                rules.append(SubstitutionRule(RuleKind.CLOSED_CLASS, members))
            elif key == "sym":
                a, sep2, b = rest.partition("<->")
                if not sep2:
                    raise LexiconError("sym rule needs 'a <-> b'")
                rules.append(SubstitutionRule(RuleKind.SYMMETRIC_PAIR, (a.strip(), b.strip())))
            elif key == "dir":
                a, sep2, b = rest.partition("->")
                if not sep2:
                    raise LexiconError("dir rule needs 'a -> b'")
                rules.append(SubstitutionRule(RuleKind.DIRECTED_PAIR, (a.strip(), b.strip())))
            else:
                raise LexiconError(f"unknown rule kind {key!r}")
        except LexiconError as exc:
            raise LexiconError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise LexiconError(f"line {lineno}: {exc}") from None
    return concept, tuple(rules)


def load_lexicon(
    source: Union[str, Path],
    concept: Union[Concept, str, None] = None,
) -> ConceptLexicon:
    """Load a lexicon from the builtin set, a file path, or literal text.

    ``source="builtin"`` returns the bundled defaults for ``concept``. A
    string containing a newline is parsed as lexicon text; anything else is
    treated as a path. A ``concept:`` header in the file must agree with the
    ``concept`` argument when both are present.
    """
    if isinstance(source, str) and source == "builtin":
        if concept is None:
            raise LexiconError("builtin lexicons require a concept")
        return builtin_lexicon(concept)
    if isinstance(source, str) and "\n" in source:
        text = source
    else:
        path = Path(source)
        if not path.exists():
            raise LexiconError(f"lexicon file not found: {path}")
        text = path.read_text(encoding="utf-8")
    header_concept, rules = _parse_lexicon_text(text)
    if concept is not None:
        concept = Concept(concept)
        if header_concept is not None and header_concept != concept:
            raise LexiconError(
                f"lexicon declares concept {header_concept.value!r}, expected {concept.value!r}"
            )
    elif header_concept is None:
        raise LexiconError("lexicon source declares no concept and none was given")
    else:
        concept = header_concept
    if not rules:
        raise LexiconError("lexicon source contains no rules")
    return ConceptLexicon(concept, rules)
