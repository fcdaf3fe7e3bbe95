"""Tokenization of aligned samples and construction of masked training inputs.

Each aligned sample yields one tokenized sample per distinct object span;
subject and predicate spans of every triplet sharing that object become its
clue tokens, while clue tokens of the paragraph's other triplets are tracked
separately so they are never drawn as "random" context.  Masking replaces a
token id with the mask sentinel one-for-one, so restoring the targets at the
mask positions always reconstructs the original sequence.

Three families of outputs:

* plain schemes (random tokens, whole words, one entity span, the object span),
* the contrastive pair: object masked with clues kept vs. clues masked too,
* the classification triple: the pair plus a third input that masks the object
  and as many uniformly chosen context tokens as there are clue tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .align import AlignedSample, AlignedTriplet, Span
from .errors import InsufficientContext, NoClues, NoMaskableContent
from .tokenizer import count_words, token_spans, tokens_inside, tokens_lower, word_starts

PAD_ID = 0
MASK_ID = 1
UNK_ID = 2
PAD_TOKEN = "<pad>"
MASK_TOKEN = "<mask>"
UNK_TOKEN = "<unk>"
_RESERVED = (PAD_TOKEN, MASK_TOKEN, UNK_TOKEN)


class Role(Enum):
    OTHER = "other"
    SUBJECT_CLUE = "subject_clue"
    PREDICATE_CLUE = "predicate_clue"
    OBJECT = "object"


class MaskScheme(Enum):
    RANDOM_TOKEN = "random_token"
    WHOLE_WORD = "whole_word"
    SALIENT_SPAN = "salient_span"
    OBJECT_SPAN = "object_span"
    DETERMINISTIC = "deterministic"


class Variant(Enum):
    PLAIN = "plain"
    KEEP_CLUES = "keep_clues"
    MASK_CLUES = "mask_clues"
    MASK_RANDOM = "mask_random"


@dataclass(frozen=True)
class Vocabulary:
    """Closed vocabulary; ids 0..2 are the pad, mask and unknown sentinels."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_tokens(cls, content_tokens: Iterable[str]) -> "Vocabulary":
        ordered = _RESERVED + tuple(sorted(set(content_tokens) - set(_RESERVED)))
        return cls(ordered, {t: i for i, t in enumerate(ordered)})

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(tokens_lower(text))
        return cls.from_tokens(seen)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, token_id: int) -> str:
        return self.id_to_token[token_id]


@dataclass(frozen=True)
class TokenizedSample:
    doc_id: str
    tokens: tuple[int, ...]
    token_spans: tuple[tuple[int, int], ...]
    roles: tuple[Role, ...]
    word_boundaries: tuple[bool, ...]
    # Token-index ranges [start, end) of linked entity spans, for span masking.
    entity_token_spans: tuple[tuple[int, int], ...] = ()
    # Clue positions of the paragraph's other triplet groups; excluded from
    # random draws so a "random" input never masks a real clue.
    foreign_clue_positions: frozenset[int] = frozenset()
    object_word_count: int = 0

    def positions(self, role: Role) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r is role)

    @property
    def object_positions(self) -> tuple[int, ...]:
        return self.positions(Role.OBJECT)

    @property
    def clue_positions(self) -> tuple[int, ...]:
        return tuple(
            i
            for i, r in enumerate(self.roles)
            if r is Role.SUBJECT_CLUE or r is Role.PREDICATE_CLUE
        )


@dataclass(frozen=True)
class MaskedSample:
    doc_id: str
    input_tokens: tuple[int, ...]
    mask_positions: tuple[int, ...]
    targets: tuple[int, ...]
    variant: Variant
    scheme: MaskScheme


def _masked(sample: TokenizedSample, positions: Sequence[int], variant: Variant,
            scheme: MaskScheme) -> MaskedSample:
    order = tuple(sorted(positions))
    inputs = list(sample.tokens)
    targets = []
    for p in order:
        targets.append(inputs[p])
        inputs[p] = MASK_ID
    return MaskedSample(sample.doc_id, tuple(inputs), order, tuple(targets), variant, scheme)


def _entity_token_spans(
    spans: Sequence[tuple[int, int]], entity_spans: Sequence[tuple[Span, str]]
) -> tuple[tuple[int, int], ...]:
    out = []
    for span, _eid in entity_spans:
        inside = tokens_inside(list(spans), span.char_start, span.char_end)
        if inside:
            out.append((inside[0], inside[-1] + 1))
    return tuple(out)


def _base_fields(text: str, vocab: Vocabulary):
    spans = token_spans(text)
    toks = tokens_lower(text)
    ids = tuple(vocab.encode(t) for t in toks)
    bounds = tuple(word_starts(text, spans))
    return spans, ids, bounds


def _assign(roles: list[Role], positions: Iterable[int], role: Role) -> None:
    # Precedence: Object over SubjectClue over PredicateClue over Other.
    rank = {Role.OTHER: 0, Role.PREDICATE_CLUE: 1, Role.SUBJECT_CLUE: 2, Role.OBJECT: 3}
    for i in positions:
        if rank[role] > rank[roles[i]]:
            roles[i] = role


def tokenize(text: str, vocab: Vocabulary, aligned: Optional[AlignedTriplet] = None,
             doc_id: str = "") -> TokenizedSample:
    """Tokenize raw text, tagging roles from one aligned triplet if given.

    A token gets a clue or object role only when it lies fully inside the
    corresponding span; straddling tokens stay in the Other role.
    """
    spans, ids, bounds = _base_fields(text, vocab)
    roles = [Role.OTHER] * len(ids)
    word_count = 0
    if aligned is not None:
        _assign(roles, tokens_inside(spans, aligned.predicate_span.char_start,
                                     aligned.predicate_span.char_end), Role.PREDICATE_CLUE)
        _assign(roles, tokens_inside(spans, aligned.subject_span.char_start,
                                     aligned.subject_span.char_end), Role.SUBJECT_CLUE)
        _assign(roles, tokens_inside(spans, aligned.object_span.char_start,
                                     aligned.object_span.char_end), Role.OBJECT)
        word_count = count_words(aligned.object_span.surface)
    return TokenizedSample(
        doc_id=doc_id,
        tokens=ids,
        token_spans=tuple(spans),
        roles=tuple(roles),
        word_boundaries=bounds,
        object_word_count=word_count,
    )


def tokenize_groups(sample: AlignedSample, vocab: Vocabulary) -> list[TokenizedSample]:
    """One TokenizedSample per distinct object span of an aligned sample.

    Triplets sharing the object span pool their subject and predicate tokens
    into the group's clue set; clue tokens of the other groups are recorded as
    foreign so random draws can avoid them.
    """
    text = sample.paragraph.text
    spans, ids, bounds = _base_fields(text, vocab)
    ent_spans = _entity_token_spans(spans, sample.entity_spans)
    groups: dict[tuple[int, int], list[AlignedTriplet]] = {}
    for t in sample.aligned:
        key = (t.object_span.char_start, t.object_span.char_end)
        groups.setdefault(key, []).append(t)

    def clue_positions(triplets: list[AlignedTriplet]) -> set[int]:
        pos: set[int] = set()
        for t in triplets:
            pos.update(tokens_inside(spans, t.subject_span.char_start, t.subject_span.char_end))
            pos.update(tokens_inside(spans, t.predicate_span.char_start, t.predicate_span.char_end))
        return pos

    out: list[TokenizedSample] = []
    for key, triplets in groups.items():
        roles = [Role.OTHER] * len(ids)
        for t in triplets:
            _assign(roles, tokens_inside(spans, t.predicate_span.char_start,
                                         t.predicate_span.char_end), Role.PREDICATE_CLUE)
            _assign(roles, tokens_inside(spans, t.subject_span.char_start,
                                         t.subject_span.char_end), Role.SUBJECT_CLUE)
        _assign(roles, tokens_inside(spans, key[0], key[1]), Role.OBJECT)
        foreign: set[int] = set()
        for other_key, other_triplets in groups.items():
            if other_key != key:
                foreign.update(clue_positions(other_triplets))
        foreign -= {i for i, r in enumerate(roles) if r is not Role.OTHER}
        out.append(
            TokenizedSample(
                doc_id=sample.paragraph.doc_id,
                tokens=ids,
                token_spans=tuple(spans),
                roles=tuple(roles),
                word_boundaries=bounds,
                entity_token_spans=ent_spans,
                foreign_clue_positions=frozenset(foreign),
                object_word_count=count_words(text[key[0]:key[1]]),
            )
        )
    return out


def tokenize_for_spans(sample: AlignedSample, vocab: Vocabulary) -> TokenizedSample:
    """Tokenize a paragraph keeping only its entity spans (span masking input)."""
    text = sample.paragraph.text
    spans, ids, bounds = _base_fields(text, vocab)
    return TokenizedSample(
        doc_id=sample.paragraph.doc_id,
        tokens=ids,
        token_spans=tuple(spans),
        roles=tuple([Role.OTHER] * len(ids)),
        word_boundaries=bounds,
        entity_token_spans=_entity_token_spans(spans, sample.entity_spans),
    )


def _words(sample: TokenizedSample) -> list[list[int]]:
    words: list[list[int]] = []
    for i in range(len(sample.tokens)):
        if sample.word_boundaries[i] or not words:
            words.append([i])
        else:
            words[-1].append(i)
    return words


def _choose(rng: np.random.Generator, candidates: Sequence[int], k: int) -> list[int]:
    picked = rng.choice(len(candidates), size=k, replace=False)
    return [candidates[int(i)] for i in picked]


def apply_mask(sample: TokenizedSample, scheme: MaskScheme,
               rng: np.random.Generator) -> MaskedSample:
    """Mask ``sample`` under one scheme; counts are tied to the object span.

    Random-token masking draws as many positions as the object has tokens;
    whole-word masking draws as many whole words as the object surface has
    space-separated words; span masking picks one linked entity span; the
    object schemes mask exactly the object tokens.
    """
    objects = sample.object_positions
    if scheme in (MaskScheme.DETERMINISTIC, MaskScheme.OBJECT_SPAN):
        if not objects:
            raise NoMaskableContent("no object tokens to mask")
        return _masked(sample, objects, Variant.PLAIN, scheme)
    if scheme is MaskScheme.RANDOM_TOKEN:
        k = len(objects)
        if k == 0 or k > len(sample.tokens):
            raise NoMaskableContent("token budget empty or larger than the sample")
        return _masked(sample, _choose(rng, range(len(sample.tokens)), k),
                       Variant.PLAIN, scheme)
    if scheme is MaskScheme.WHOLE_WORD:
        k = sample.object_word_count
        words = _words(sample)
        if k == 0 or k > len(words):
            raise NoMaskableContent("word budget empty or larger than the sample")
        positions = [p for w in _choose_words(rng, words, k) for p in w]
        return _masked(sample, positions, Variant.PLAIN, scheme)
    if scheme is MaskScheme.SALIENT_SPAN:
        if not sample.entity_token_spans:
            raise NoMaskableContent("no entity spans to mask")
        a, b = sample.entity_token_spans[int(rng.integers(len(sample.entity_token_spans)))]
        return _masked(sample, range(a, b), Variant.PLAIN, scheme)
    raise ValueError(f"unknown scheme {scheme!r}")


def _choose_words(rng: np.random.Generator, words: list[list[int]], k: int) -> list[list[int]]:
    picked = rng.choice(len(words), size=k, replace=False)
    return [words[int(i)] for i in picked]


def make_contrastive_pair(sample: TokenizedSample) -> tuple[MaskedSample, MaskedSample]:
    """The clue-visibility pair: object masked vs. object and all clues masked."""
    objects = sample.object_positions
    clues = sample.clue_positions
    if not objects:
        raise NoMaskableContent("no object tokens to mask")
    if not clues:
        raise NoClues("sample has no clue tokens")
    keep = _masked(sample, objects, Variant.KEEP_CLUES, MaskScheme.DETERMINISTIC)
    drop = _masked(sample, tuple(objects) + tuple(clues), Variant.MASK_CLUES,
                   MaskScheme.DETERMINISTIC)
    return keep, drop


def make_classification_triple(
    sample: TokenizedSample, rng: np.random.Generator
) -> tuple[MaskedSample, MaskedSample, MaskedSample]:
    """The three classifier inputs: clues kept, clues masked, random context masked.

    The third input masks the object plus exactly as many uniformly chosen
    Other-role tokens as there are clue tokens, never touching clue tokens of
    any triplet in the paragraph.
    """
    keep, drop = make_contrastive_pair(sample)
    clues = sample.clue_positions
    eligible = [
        i
        for i, r in enumerate(sample.roles)
        if r is Role.OTHER and i not in sample.foreign_clue_positions
    ]
    if len(eligible) < len(clues):
        raise InsufficientContext(
            f"need {len(clues)} maskable context tokens, have {len(eligible)}"
        )
    randoms = _choose(rng, eligible, len(clues))
    randv = _masked(sample, tuple(sample.object_positions) + tuple(randoms),
                    Variant.MASK_RANDOM, MaskScheme.DETERMINISTIC)
    return keep, drop, randv
