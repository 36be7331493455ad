"""Tokenization, syllable counting and the single-sentence Flesch Reading Ease.

Every message is treated as one sentence, so the score reduces to

    RE = 206.835 - 1.015 * W - 84.6 * (S / W)

with W countable words and S their total syllables.  URLs and mentions are
never counted; hashtags are counted (sigil removed) only under the
``include`` policy.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache

BASE = 206.835
WORDS_PER_SENTENCE_COEF = 1.015
SYLLABLES_PER_WORD_COEF = 84.6

# single word of one syllable
MAX_RE = BASE - WORDS_PER_SENTENCE_COEF - SYLLABLES_PER_WORD_COEF

_VOWEL_RUN = re.compile(r"[aeiou]+")
# first letter/digit through last letter/digit
_CORE = re.compile(r"[^\W_](?:.*[^\W_])?", re.DOTALL)


class TokenClass(str, enum.Enum):
    WORD = "word"
    MENTION = "mention"
    URL = "url"
    HASHTAG = "hashtag"


class HashtagPolicy(str, enum.Enum):
    EXCLUDE = "exclude"
    INCLUDE = "include"


@dataclass(frozen=True)
class Token:
    text: str
    cls: TokenClass


@dataclass(frozen=True)
class ReadabilityScore:
    re: float
    word_count: int
    syllable_count: int
    policy: HashtagPolicy = HashtagPolicy.EXCLUDE


def flesch_single_sentence(word_count: int, syllable_count: int) -> float:
    return (
        BASE
        - WORDS_PER_SENTENCE_COEF * word_count
        - SYLLABLES_PER_WORD_COEF * (syllable_count / word_count)
    )


def _classify(raw: str) -> Token | None:
    first = raw[0]
    if first == "@":
        return Token(raw[1:], TokenClass.MENTION) if len(raw) > 1 else None
    if first == "#":
        return Token(raw[1:], TokenClass.HASHTAG) if len(raw) > 1 else None
    if raw[:4].lower() == "http":
        return Token(raw, TokenClass.URL)
    if not (first.isalnum() and raw[-1].isalnum()):
        m = _CORE.search(raw)
        if m is None:
            return None
        raw = m.group()
    return Token(raw, TokenClass.WORD)


def tokenize(text: str) -> list[Token]:
    """Split on whitespace and classify each raw token.

    Sigils are checked before any punctuation is stripped, so ``"@bob,"``
    is a mention and ``"(#tag)"`` is a word ``"tag"``.
    """
    out = []
    for raw in text.split():
        tok = _classify(raw)
        if tok is not None:
            out.append(tok)
    return out


@lru_cache(maxsize=1 << 16)
def count_syllables(word: str) -> int:
    if not word:
        raise ValueError("count_syllables needs a non-empty word")
    w = word.lower()
    n = len(_VOWEL_RUN.findall(w))
    if w.endswith(("es", "ed")) or (w.endswith("e") and not w.endswith("le")):
        n -= 1
    return n if n > 1 else 1


# Per-token contributions are packed into one int of four 40-bit fields
# (word count, word syllables, hashtag count, hashtag syllables) so that a
# message's totals are a single C-level sum.  No field can overflow short of
# a trillion tokens in one message.
_FIELD = 40
_MASK = (1 << _FIELD) - 1
_WORD_UNIT = 1 << (3 * _FIELD)
_HASHTAG_UNIT = 1 << _FIELD


@lru_cache(maxsize=1 << 18)
def _token_contribution(raw: str) -> int:
    tok = _classify(raw)
    if tok is None or tok.cls is TokenClass.URL or tok.cls is TokenClass.MENTION:
        return 0
    syl = count_syllables(tok.text)
    if tok.cls is TokenClass.WORD:
        return _WORD_UNIT | (syl << (2 * _FIELD))
    return _HASHTAG_UNIT | syl


def count_both(text: str) -> tuple[int, int, int, int]:
    """Return ``(words, word_syllables, hashtags, hashtag_syllables)``.

    One pass serves both hashtag policies; this is the hot path of corpus
    scoring.
    """
    packed = sum(map(_token_contribution, text.split()))
    return (
        packed >> (3 * _FIELD),
        (packed >> (2 * _FIELD)) & _MASK,
        (packed >> _FIELD) & _MASK,
        packed & _MASK,
    )


def _make_score(w: int, s: int, policy: HashtagPolicy) -> ReadabilityScore | None:
    if w == 0:
        return None
    return ReadabilityScore(flesch_single_sentence(w, s), w, s, policy)


def score_counts(
    counts: tuple[int, int, int, int], policy: HashtagPolicy
) -> ReadabilityScore | None:
    w, s, hw, hs = counts
    if policy is HashtagPolicy.INCLUDE:
        return _make_score(w + hw, s + hs, policy)
    return _make_score(w, s, policy)


def score_message(
    text: str, policy: HashtagPolicy = HashtagPolicy.EXCLUDE
) -> ReadabilityScore | None:
    """Score one message, or return None when nothing countable is left."""
    return score_counts(count_both(text), HashtagPolicy(policy))


def delta_from_counts(counts: tuple[int, int, int, int]) -> float | None:
    w, s, hw, hs = counts
    if hw == 0 or w == 0:
        return None
    return flesch_single_sentence(w, s) - flesch_single_sentence(w + hw, s + hs)


def score_delta(text: str) -> float | None:
    """RE(exclude) - RE(include) for messages carrying at least one hashtag.

    Positive values mean the hashtags made the message score harder.
    """
    return delta_from_counts(count_both(text))
