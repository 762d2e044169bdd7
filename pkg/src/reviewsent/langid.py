"""Character n-gram rank profiles for language identification.

Profiles follow the Cavnar & Trenkle scheme: each language is represented by
its R most frequent character n-grams (n = 1..4, words padded with a blank),
and a text is assigned to the profile with the smallest out-of-place
distance.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CleaningLog, RecordSet, count_words, with_lang

DEFAULT_R = 300
DEFAULT_N_MAX = 4
SHORT_REVIEW_WORDS = 5
MARGIN_FRACTION = 0.05
UNDETERMINED = "und"

_WORD = re.compile(r"[^\W\d_]+(?:['’][^\W\d_]+)*")


@dataclass(frozen=True)
class LangProfile:
    lang: str
    ranks: dict[str, int]
    n_max: int = DEFAULT_N_MAX

    @property
    def R(self) -> int:
        return len(self.ranks)

    def to_json(self) -> dict:
        ordered = sorted(self.ranks.items(), key=lambda kv: kv[1])
        return {"lang": self.lang, "n_max": self.n_max, "ranks": [[g, r] for g, r in ordered]}

    @classmethod
    def from_json(cls, obj: dict) -> "LangProfile":
        ranks = {g: int(r) for g, r in obj["ranks"]}
        if sorted(ranks.values()) != list(range(len(ranks))):
            raise ValueError(f"profile {obj.get('lang')!r}: ranks are not 0..R-1")
        return cls(obj["lang"], ranks, int(obj.get("n_max", DEFAULT_N_MAX)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LangProfile":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class LangVerdict:
    lang: str
    score: int
    ambiguous: bool


def ngram_counts(text: str, n_max: int = DEFAULT_N_MAX) -> Counter:
    text = unicodedata.normalize("NFC", text).casefold()
    counts: Counter = Counter()
    for word in _WORD.findall(text):
        padded = f" {word} "
        for n in range(1, n_max + 1):
            for i in range(len(padded) - n + 1):
                gram = padded[i:i + n]
                if gram.strip():
                    counts[gram] += 1
    return counts


def rank_ngrams(counts: Counter, R: int) -> dict[str, int]:
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:R]
    return {g: i for i, (g, _) in enumerate(ordered)}


def train_profile(corpus: Sequence[str], lang: str, R: int = DEFAULT_R,
                  n_max: int = DEFAULT_N_MAX) -> LangProfile:
    if not corpus:
        raise ValueError("cannot train a language profile from an empty corpus")
    if R < 1:
        raise ValueError("R must be >= 1")
    counts: Counter = Counter()
    for doc in corpus:
        counts.update(ngram_counts(doc, n_max))
    if not counts:
        raise ValueError(f"corpus for {lang!r} contains no letters")
    return LangProfile(lang, rank_ngrams(counts, R), n_max)


def out_of_place(text_ranks: dict[str, int], profile_ranks: dict[str, int], R: int) -> int:
    total = 0
    for gram, rank in text_ranks.items():
        other = profile_ranks.get(gram)
        total += R if other is None else abs(rank - other)
    return total


def identify(text: str, profiles: Sequence[LangProfile]) -> LangVerdict:
    if not profiles:
        raise ValueError("identify needs at least one profile")
    R = max(p.R for p in profiles)
    n_max = max(p.n_max for p in profiles)
    text_ranks = rank_ngrams(ngram_counts(text, n_max), R)
    if not text_ranks:
        return LangVerdict(UNDETERMINED, 0, True)

    scored = sorted(
        ((out_of_place(text_ranks, p.ranks, R), p.lang) for p in profiles),
        key=lambda sl: (sl[0], sl[1]),
    )
    best_score, best_lang = scored[0]
    ambiguous = count_words(text) <= SHORT_REVIEW_WORDS
    if len(scored) > 1:
        worst_case = len(text_ranks) * R
        if scored[1][0] - best_score < MARGIN_FRACTION * worst_case:
            ambiguous = True
    return LangVerdict(best_lang, best_score, ambiguous)


def filter_language(rs: RecordSet, keep: str, profiles: Sequence[LangProfile]
                    ) -> tuple[RecordSet, RecordSet, CleaningLog]:
    """Split records into the target language and a separated list.

    Ambiguous verdicts (short reviews or near ties) always go to the
    separated list so they can be reviewed by hand.
    """
    if keep not in {p.lang for p in profiles}:
        raise ValueError(f"no profile for target language {keep!r}")
    kept, separated, log = [], [], CleaningLog()
    langs = {}
    for r in rs:
        verdict = identify(r.text, profiles)
        langs[r.id] = verdict.lang
        if verdict.lang == keep and not verdict.ambiguous:
            kept.append(r)
        else:
            separated.append(r)
            log.removed.append((r.id, "non_target_language"))
    log.kept_count = len(kept)
    return (
        rs.derive(with_lang(kept, langs), f"langid:keep={keep}"),
        rs.derive(with_lang(separated, langs), f"langid:separated!={keep}"),
        log,
    )


def bundled_texts() -> dict[str, str]:
    root = resources.files("reviewsent") / "data" / "langid"
    return {lang: (root / f"{lang}.txt").read_text(encoding="utf-8") for lang in ("lt", "en", "ru")}


def default_profiles(R: int = DEFAULT_R) -> list[LangProfile]:
    """Profiles trained from the bundled review-style texts."""
    return [train_profile(text.splitlines(), lang, R) for lang, text in bundled_texts().items()]


def load_profiles(paths: Iterable[str | Path]) -> list[LangProfile]:
    return [LangProfile.load(p) for p in paths]
