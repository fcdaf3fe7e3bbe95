"""Token spans, word grouping, and offset-stable lowercasing."""

from __future__ import annotations

import numpy as np

from detmask.tokenizer import (
    count_words,
    lower_aligned,
    token_spans,
    tokens_inside,
    tokens_lower,
    word_starts,
)


class TestTokenSpans:
    def test_words_and_punctuation(self):
        text = "War Horse, a 2011 film."
        spans = token_spans(text)
        assert [text[a:b] for a, b in spans] == [
            "War", "Horse", ",", "a", "2011", "film", ".",
        ]

    def test_offsets_point_into_original(self):
        text = "  spaced   out  "
        for a, b in token_spans(text):
            assert text[a:b].strip() == text[a:b]
            assert a < b

    def test_empty_text(self):
        assert token_spans("") == []

    def test_lowercased_tokens(self):
        assert tokens_lower("Steven SPIELBERG!") == ["steven", "spielberg", "!"]


class TestLowerAligned:
    def test_plain_ascii(self):
        assert lower_aligned("War Horse") == "war horse"

    def test_length_is_always_preserved(self):
        # The dotted capital I lowercases to two code points; it must be
        # left alone so character offsets stay valid.
        tricky = "FİLM night"
        low = lower_aligned(tricky)
        assert len(low) == len(tricky)
        assert low.endswith(" night")

    def test_offsets_survive_for_mixed_text(self):
        text = "Abc İ def"
        low = lower_aligned(text)
        spans = token_spans(text)
        assert [low[a:b] for a, b in spans][0] == "abc"


class TestWordStarts:
    def test_glued_punctuation_joins_previous_word(self):
        text = "a film. Directed by"
        spans = token_spans(text)
        assert word_starts(text, spans) == [True, True, False, True, True]

    def test_first_token_always_starts(self):
        text = ",oddly"
        spans = token_spans(text)
        assert word_starts(text, spans) == [True, False]

    def test_count_matches_split(self):
        rng = np.random.default_rng(3)
        words = ["alpha", "beta,", "gamma.", "d", "else!"]
        for _ in range(50):
            k = int(rng.integers(1, 6))
            text = " ".join(words[int(rng.integers(len(words)))] for _ in range(k))
            spans = token_spans(text)
            assert sum(word_starts(text, spans)) == len(text.split())


class TestCountWords:
    def test_single_and_multi(self):
        assert count_words("Spielberg") == 1
        assert count_words("Steven Spielberg") == 2
        assert count_words("  padded   out ") == 2


class TestTokensInside:
    def test_only_fully_contained(self):
        text = "War Horse is a film"
        spans = token_spans(text)
        # [0, 9) covers exactly "War Horse".
        assert tokens_inside(spans, 0, 9) == [0, 1]

    def test_straddling_token_excluded(self):
        text = "War Horse is a film"
        spans = token_spans(text)
        # Cutting through "Horse" leaves only "War" fully inside.
        assert tokens_inside(spans, 0, 6) == [0]

    def test_empty_window(self):
        spans = token_spans("a b c")
        assert tokens_inside(spans, 1, 1) == []
