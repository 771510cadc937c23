"""Deterministic synthetic English-like text for desk-scale experiments.

The generator composes sentences from small word pools with a seeded RNG, so
any amount of training text can be produced reproducibly without bundling a
large file. The character set is lowercase letters plus space, comma, period
and newline (about 30 symbols).
"""

from __future__ import annotations

from .linalg import SeededRng

_DETERMINERS = ["the", "a", "this", "that", "every", "some", "one"]
_ADJECTIVES = [
    "old", "small", "great", "quiet", "bright", "dark", "cold", "warm", "long",
    "short", "young", "strange", "simple", "heavy", "light", "deep", "early",
    "late", "green", "grey", "distant", "gentle", "sudden", "steady",
]
_NOUNS = [
    "river", "mountain", "house", "garden", "road", "city", "forest", "window",
    "winter", "summer", "morning", "evening", "stone", "bridge", "letter",
    "story", "voice", "shadow", "fire", "water", "tree", "bird", "horse",
    "child", "friend", "stranger", "village", "valley", "island", "harbor",
    "lamp", "door", "table", "field", "sky", "cloud", "rain", "wind", "snow",
]
_VERBS = [
    "crossed", "followed", "watched", "remembered", "carried", "reached",
    "opened", "closed", "answered", "called", "found", "left", "built",
    "painted", "wrote", "read", "heard", "saw", "knew", "kept", "held",
    "turned", "passed", "entered", "waited for", "returned to", "spoke of",
]
_ADVERBS = [
    "slowly", "quietly", "again", "at last", "every day", "once more",
    "in silence", "without a word", "before dawn", "after dark", "together",
    "alone", "at first light", "in the rain",
]
_OPENERS = [
    "in the morning", "long ago", "that winter", "by the river", "for years",
    "one evening", "at the edge of town", "far from home", "in those days",
]


def _sentence(rng: SeededRng) -> str:
    pick = lambda pool: pool[int(rng.integers(0, len(pool)))]
    subject = f"{pick(_DETERMINERS)} {pick(_ADJECTIVES)} {pick(_NOUNS)}"
    obj = f"{pick(_DETERMINERS)} {pick(_ADJECTIVES)} {pick(_NOUNS)}"
    template = int(rng.integers(0, 4))
    if template == 0:
        body = f"{subject} {pick(_VERBS)} {obj}"
    elif template == 1:
        body = f"{subject} {pick(_VERBS)} {obj} {pick(_ADVERBS)}"
    elif template == 2:
        body = f"{pick(_OPENERS)}, {subject} {pick(_VERBS)} {obj}"
    else:
        body = f"{subject} {pick(_VERBS)} {obj}, and {pick(_NOUNS)} {pick(_VERBS)} {obj}"
    return body + "."


def synthetic_corpus(seed: int, n_chars: int) -> str:
    """At least n_chars of seeded sentence text, paragraph-broken."""
    rng = SeededRng(seed)
    pieces: list[str] = []
    size = 0
    sentences_in_paragraph = 0
    while size < n_chars:
        s = _sentence(rng)
        sentences_in_paragraph += 1
        if sentences_in_paragraph >= 6:
            s += "\n"
            sentences_in_paragraph = 0
        else:
            s += " "
        pieces.append(s)
        size += len(s)
    return "".join(pieces)
