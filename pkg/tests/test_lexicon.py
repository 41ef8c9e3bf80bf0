import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hncl.lexicon import (
    Concept,
    LexiconError,
    RuleKind,
    builtin_lexicon,
    enumerate_negatives,
    find_keyword_spans,
    generate_hard_negative,
    load_lexicon,
)

CAT_CAPTION = "a white cat sits under a black open umbrella"


def test_builtin_keyword_counts():
    assert len(builtin_lexicon("color").keywords) == 9
    assert len(builtin_lexicon("object").keywords) == 80
    assert len(builtin_lexicon("location").keywords) == 12
    assert len(builtin_lexicon("size").keywords) == 11


def test_builtin_color_is_one_closed_class():
    lex = load_lexicon("builtin", Concept.COLOR)
    assert len(lex.rules) == 1
    assert lex.rules[0].kind is RuleKind.CLOSED_CLASS


def test_builtin_location_is_six_symmetric_pairs():
    lex = load_lexicon("builtin", "location")
    assert len(lex.rules) == 6
    assert all(r.kind is RuleKind.SYMMETRIC_PAIR for r in lex.rules)


def test_load_rejects_duplicate_keyword_across_rules():
    text = "concept: color\nclass: red, blue\nsym: red <-> green\n"
    with pytest.raises(LexiconError, match="duplicate keyword"):
        load_lexicon(text)


def test_load_rejects_empty_rule():
    with pytest.raises(LexiconError, match="line 2"):
        load_lexicon("concept: color\nclass: red\n")


def test_load_from_file(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text(
        "# custom size lexicon\nconcept: size\nsym: mini <-> maxi\ndir: giant -> tiny\n"
    )
    lex = load_lexicon(path)
    assert lex.concept is Concept.SIZE
    assert lex.keywords == ("mini", "maxi", "giant")
    assert lex.replacements("giant") == ("tiny",)


def test_load_concept_mismatch(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("concept: size\nsym: mini <-> maxi\n")
    with pytest.raises(LexiconError, match="declares concept"):
        load_lexicon(path, Concept.COLOR)


def test_find_spans_color():
    spans = find_keyword_spans(CAT_CAPTION, builtin_lexicon("color"))
    assert [(s.token_start, s.keyword) for s in spans] == [(1, "white"), (6, "black")]


def test_find_spans_location():
    spans = find_keyword_spans(CAT_CAPTION, builtin_lexicon("location"))
    assert [(s.token_start, s.keyword) for s in spans] == [(4, "under")]


def test_find_spans_none():
    assert find_keyword_spans("a person riding a horse", builtin_lexicon("color")) == []


def test_find_spans_case_and_punctuation():
    spans = find_keyword_spans(
        "A White cat under a black Umbrella.", builtin_lexicon("object")
    )
    assert [s.keyword for s in spans] == ["cat", "umbrella"]


def test_multiword_keyword_matches_whole_phrase():
    spans = find_keyword_spans("a red fire hydrant on the sidewalk", builtin_lexicon("object"))
    assert [(s.token_start, s.token_len, s.keyword) for s in spans] == [(2, 2, "fire hydrant")]


def test_in_front_of_beats_front():
    lex = builtin_lexicon("location")
    spans = find_keyword_spans("a dog in front of a car", lex)
    assert [(s.token_start, s.token_len, s.keyword) for s in spans] == [(2, 3, "in front of")]


def test_word_boundary_no_substring_match():
    lex = builtin_lexicon("location")
    assert find_keyword_spans("a plain background scene", lex) != []  # "background" itself
    spans = find_keyword_spans("a backgroundish scene", lex)
    assert spans == []


def test_generate_hard_negative_size_directed():
    rng = np.random.default_rng(0)
    out = generate_hard_negative("the long road", builtin_lexicon("size"), rng)
    assert out == "the short road"


def test_generate_hard_negative_absent_without_keyword():
    rng = np.random.default_rng(0)
    assert generate_hard_negative("a person riding a horse", builtin_lexicon("color"), rng) is None


def test_generate_hard_negative_deterministic_per_seed():
    lex = builtin_lexicon("color")
    outs = {generate_hard_negative(CAT_CAPTION, lex, np.random.default_rng(42)) for _ in range(5)}
    assert len(outs) == 1


def test_generate_hard_negative_changes_one_span():
    lex = builtin_lexicon("color")
    rng = np.random.default_rng(7)
    for _ in range(50):
        out = generate_hard_negative(CAT_CAPTION, lex, rng)
        assert out is not None and out != CAT_CAPTION
        diff = [
            (a, b) for a, b in zip(CAT_CAPTION.split(), out.split()) if a != b
        ]
        assert len(diff) == 1
        assert diff[0][0] in {"white", "black"}
        assert diff[0][1] in set(lex.keywords)


def test_enumerate_color_variants():
    outs = enumerate_negatives(CAT_CAPTION, builtin_lexicon("color"))
    assert len(outs) == 8
    assert outs[0] == "a blue cat sits under a black open umbrella"
    assert "a brown cat sits under a black open umbrella" in outs
    assert all(out.endswith("a black open umbrella") for out in outs)


def test_enumerate_location_single_variant():
    outs = enumerate_negatives(CAT_CAPTION, builtin_lexicon("location"))
    assert outs == ["a white cat sits over a black open umbrella"]


def test_enumerate_short_never_reverses_to_long():
    outs = enumerate_negatives("the short fence", builtin_lexicon("size"))
    assert outs == ["the tall fence"]


def test_enumerate_requires_a_span():
    with pytest.raises(LexiconError, match="no color keyword"):
        enumerate_negatives("a person riding a horse", builtin_lexicon("color"))


def test_enumerate_object_returns_79():
    outs = enumerate_negatives("a small cat on a mat", builtin_lexicon("object"))
    assert len(outs) == 79


def test_splice_preserves_edge_punctuation():
    outs = enumerate_negatives("a white cat sits under a black open umbrella.",
                               builtin_lexicon("location"))
    assert outs == ["a white cat sits over a black open umbrella."]


@given(st.sampled_from(builtin_lexicon("location").keywords), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_symmetric_substitution_is_an_involution(keyword, seed):
    lex = builtin_lexicon("location")
    caption = f"a cat {keyword} a tree"
    rng = np.random.default_rng(seed)
    once = generate_hard_negative(caption, lex, rng)
    assert once is not None
    twice = generate_hard_negative(once, lex, np.random.default_rng(seed))
    assert twice == caption


@given(
    st.lists(
        st.sampled_from(["a", "white", "cat", "under", "umbrella", "rides", "black", "dog"]),
        min_size=1,
        max_size=12,
    ),
    st.integers(0, 10_000),
)
@settings(max_examples=60, deadline=None)
def test_generate_differs_in_exactly_one_span_or_is_none(tokens, seed):
    lex = builtin_lexicon("color")
    caption = " ".join(tokens)
    out = generate_hard_negative(caption, lex, np.random.default_rng(seed))
    spans = find_keyword_spans(caption, lex)
    if not spans:
        assert out is None
        return
    assert out is not None
    orig, new = caption.split(), out.split()
    assert len(orig) == len(new)  # color keywords are single tokens
    assert sum(a != b for a, b in zip(orig, new)) == 1
