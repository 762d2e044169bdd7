"""Synthetic review sets for tests and desk-scale experiments."""

from __future__ import annotations

import random
from typing import Mapping, Sequence

from .corpus import RATINGS, RecordSet, ReviewRecord

# One marker word per rating; filler never contains any of them.
CLASS_KEYWORDS = {1: "siaubinga", 2: "prastoka", 3: "vidutiniška", 4: "gera", 5: "nuostabi"}
FILLER = (
    "prekė", "pristatymas", "kaina", "parduotuvė", "aptarnavimas", "kokybė", "buvo", "labai",
    "šiek", "tiek", "dar", "kartą", "užsakymas", "atkeliavo", "laiku", "ir", "bet", "tačiau",
    "vieta", "maistas", "personalas", "kambarys", "telefonas", "batai", "knyga", "mano",
)


def keyword_reviews(n: int = 500, seed: int = 0, min_words: int = 4, max_words: int = 10,
                    source: str = "synthetic") -> RecordSet:
    """Linearly separable set: every text carries exactly one class keyword.

    Ratings cycle 1..5 so classes are balanced.
    """
    rng = random.Random(seed)
    records = []
    for i in range(n):
        rating = RATINGS[i % 5]
        words = [rng.choice(FILLER) for _ in range(rng.randint(min_words, max_words) - 1)]
        words.insert(rng.randint(0, len(words)), CLASS_KEYWORDS[rating])
        records.append(ReviewRecord(f"syn-{i:05d}", " ".join(words), rating, source))
    return RecordSet(tuple(records), (f"synthetic:keyword:n={n}:seed={seed}",))


def with_rating_mix(n: int, mix: Mapping[int, float], seed: int = 0) -> RecordSet:
    """``n`` short records whose rating counts follow ``mix`` (largest remainder)."""
    from fractions import Fraction

    from .corpus import largest_remainder

    ratings = sorted(mix)
    counts = largest_remainder(n, [Fraction(str(mix[r])) for r in ratings])
    rng = random.Random(seed)
    labels: list[int] = []
    for r, c in zip(ratings, counts):
        labels.extend([r] * c)
    rng.shuffle(labels)
    return RecordSet(
        tuple(ReviewRecord(f"mix-{i:07d}", f"atsiliepimas {i}", r, "synthetic") for i, r in enumerate(labels)),
        (f"synthetic:mix:n={n}:seed={seed}",),
    )


def ratings_of(rs: RecordSet) -> Sequence[int]:
    return [r.rating for r in rs]
