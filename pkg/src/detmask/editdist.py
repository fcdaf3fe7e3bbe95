"""Character-level edit distance used by predicate surface matching.

Matching only ever needs to know whether a window is within distance 1 of an
alias, so the hot path is an O(n) within-one check rather than the full DP.
``levenshtein`` is kept as the straightforward reference implementation.
"""

from __future__ import annotations


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute), full DP."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def within_one(a: str, b: str) -> bool:
    """True iff edit distance between a and b is < 2, without running the DP.

    Equal lengths: at most one substitution, so the suffixes after the first
    mismatch must be equal. Lengths off by one: the longer string must equal
    the shorter with one character dropped. Anything further apart fails.
    """
    la, lb = len(a), len(b)
    if la > lb:
        a, b, la, lb = b, a, lb, la
    if lb - la > 1:
        return False
    if la == lb:
        if a == b:
            return True
        i = 0
        while a[i] == b[i]:
            i += 1
        return a[i + 1 :] == b[i + 1 :]
    # lb == la + 1: try deleting one char of b.
    i = 0
    while i < la and a[i] == b[i]:
        i += 1
    return a[i:] == b[i + 1 :]
