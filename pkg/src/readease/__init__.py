"""Tweet-adapted Flesch Reading Ease scoring and corpus analytics."""

from .core import (
    HashtagPolicy,
    ReadabilityScore,
    Token,
    TokenClass,
    count_syllables,
    score_delta,
    score_message,
    tokenize,
)

__all__ = [
    "HashtagPolicy",
    "ReadabilityScore",
    "Token",
    "TokenClass",
    "count_syllables",
    "score_delta",
    "score_message",
    "tokenize",
]
