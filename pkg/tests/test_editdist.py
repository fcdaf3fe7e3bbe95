"""Edit distance: reference DP and the within-one fast path."""

from __future__ import annotations

import numpy as np

from detmask.editdist import levenshtein, within_one
from oracles import levenshtein_oracle

WORDS = ["", "a", "ab", "abc", "directed by", "directd by", "derected by",
         "director", "diretcor", "starring", "b", "ba"]


class TestLevenshtein:
    def test_known_values(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("directed by", "directd by") == 1
        assert levenshtein("", "abc") == 3
        assert levenshtein("abc", "") == 3
        assert levenshtein("same", "same") == 0

    def test_matches_recursive_oracle(self):
        rng = np.random.default_rng(7)
        alphabet = "abcde "
        for _ in range(300):
            n, m = int(rng.integers(0, 12)), int(rng.integers(0, 12))
            a = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), n))
            b = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), m))
            assert levenshtein(a, b) == levenshtein_oracle(a, b)


class TestWithinOne:
    def test_pairs_from_word_list(self):
        for a in WORDS:
            for b in WORDS:
                assert within_one(a, b) == (levenshtein(a, b) < 2), (a, b)

    def test_near_miss_mutations(self):
        # Mutate a base string 0..3 times; compare to the full DP every time.
        rng = np.random.default_rng(11)
        alphabet = "abcdef"
        for _ in range(400):
            n = int(rng.integers(1, 10))
            base = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), n))
            s = base
            for _ in range(int(rng.integers(0, 4))):
                op = int(rng.integers(3))
                i = int(rng.integers(0, max(1, len(s))))
                if op == 0 and s:
                    s = s[:i] + alphabet[int(rng.integers(len(alphabet)))] + s[i + 1 :]
                elif op == 1 and s:
                    s = s[:i] + s[i + 1 :]
                else:
                    s = s[:i] + alphabet[int(rng.integers(len(alphabet)))] + s[i:]
            assert within_one(base, s) == (levenshtein(base, s) < 2), (base, s)
