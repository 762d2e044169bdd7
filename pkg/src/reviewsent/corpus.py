"""Review corpus ingestion, cleaning, de-duplication and stratified splitting.

Every operation takes a :class:`RecordSet` and returns new ones; nothing is
mutated in place.  Each operation appends one descriptor to ``provenance``.
"""

from __future__ import annotations

import csv
import io
import json
import random
import re
import unicodedata
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

RATINGS = (1, 2, 3, 4, 5)
REMOVAL_REASONS = (
    "empty",
    "non_alphabetic",
    "emoji_only",
    "too_long",
    "non_target_language",
    "duplicate",
)

_WS = re.compile(r"\s+")
# Non-letter categories that make up emoji sequences (symbols, ZWJ, variation
# selectors, keycap combiners, skin-tone modifiers).
_EMOJI_CATEGORIES = {"So", "Sk", "Sm", "Sc", "Cf", "Mn", "Me"}


class CorpusError(ValueError):
    """Raised for malformed input files or violated corpus preconditions."""


@dataclass(frozen=True)
class ReviewRecord:
    id: str
    text: str
    rating: int
    source: str
    lang: str | None = None
    word_count: int = -1

    def __post_init__(self):
        if self.rating not in RATINGS:
            raise CorpusError(f"record {self.id!r}: rating {self.rating!r} outside 1..5")
        if self.word_count < 0:
            object.__setattr__(self, "word_count", count_words(self.text))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "rating": self.rating,
            "source": self.source,
            "lang": self.lang,
            "word_count": self.word_count,
        }


@dataclass(frozen=True)
class RecordSet:
    records: tuple[ReviewRecord, ...]
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise CorpusError(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def derive(self, records: Iterable[ReviewRecord], step: str) -> "RecordSet":
        return RecordSet(tuple(records), self.provenance + (step,))

    def rating_counts(self) -> dict[int, int]:
        counts = dict.fromkeys(RATINGS, 0)
        for r in self.records:
            counts[r.rating] += 1
        return counts


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[Fraction, Fraction, Fraction]
    seed: int = 0
    stratify_by_rating: bool = True

    def __post_init__(self):
        fr = tuple(Fraction(str(f)) if isinstance(f, float) else Fraction(f) for f in self.fractions)
        if len(fr) != 3:
            raise CorpusError("split needs exactly three fractions (train, eval, test)")
        if any(f < 0 for f in fr):
            raise CorpusError(f"negative split fraction in {fr}")
        if sum(fr) != 1:
            raise CorpusError(f"split fractions sum to {sum(fr)}, not 1")
        object.__setattr__(self, "fractions", fr)


@dataclass
class CleaningLog:
    removed: list[tuple[str, str]] = field(default_factory=list)
    kept_count: int = 0

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(REMOVAL_REASONS, 0)
        for _, reason in self.removed:
            out[reason] += 1
        return out

    def merge(self, other: "CleaningLog") -> "CleaningLog":
        return CleaningLog(self.removed + other.removed, self.kept_count + other.kept_count)

    def to_json(self) -> dict:
        return {
            "kept_count": self.kept_count,
            "removed": [{"id": i, "reason": r} for i, r in self.removed],
        }


def count_words(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------------------
# I/O


def _record_from_row(row: Mapping, where: str) -> ReviewRecord:
    try:
        rid = str(row["id"])
        text = row["text"]
        rating_raw = row["rating"]
        source = str(row.get("source") or "")
    except KeyError as e:
        raise CorpusError(f"{where}: missing column {e.args[0]!r}") from None
    if text is None:
        text = ""
    try:
        rating = int(rating_raw)
        if isinstance(rating_raw, float) and rating != rating_raw:
            raise ValueError
    except (TypeError, ValueError):
        raise CorpusError(f"{where}: record {rid!r} has non-integer rating {rating_raw!r}") from None
    if rating not in RATINGS:
        raise CorpusError(f"{where}: record {rid!r} has rating {rating} outside 1..5")
    lang = row.get("lang") or None
    return ReviewRecord(id=rid, text=str(text), rating=rating, source=source, lang=lang)


def ingest(path: str | Path, format: str | None = None) -> RecordSet:
    """Read a JSONL or CSV export into a RecordSet.

    Columns other than id/text/rating/source/lang (author names, e-mails,
    timestamps...) are dropped on read.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise CorpusError(f"unsupported format {format!r}")
    raw = path.read_bytes()
    try:
        content = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}: invalid UTF-8 at byte {e.start}") from None

    records = []
    if format == "jsonl":
        for lineno, line in enumerate(content.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: parse error: {e.msg}") from None
            if not isinstance(row, dict):
                raise CorpusError(f"{path}:{lineno}: parse error: expected an object")
            records.append(_record_from_row(row, f"{path}:{lineno}"))
    else:
        reader = csv.DictReader(io.StringIO(content, newline=""), strict=True)
        try:
            for row in reader:
                records.append(_record_from_row(row, f"{path}:{reader.line_num}"))
        except csv.Error as e:
            raise CorpusError(f"{path}:{reader.line_num}: parse error: {e}") from None
    return RecordSet(tuple(records), (f"ingest:{path.name}",))


def write_jsonl(rs: RecordSet | Iterable[ReviewRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rs:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> RecordSet:
    return ingest(path, "jsonl")


# ---------------------------------------------------------------------------
# Pipeline steps


def stable_digest(*parts: str) -> str:
    """64-bit FNV-1a over the NUL-joined UTF-8 parts, as 16 hex digits."""
    h = 0xCBF29CE484222325
    for byte in "\x00".join(parts).encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


_EMAIL = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")


def anonymize(rs: RecordSet) -> RecordSet:
    """Keep only text, rating and source; hash ids and mask e-mail addresses."""
    if "anonymize" in rs.provenance:
        return RecordSet(rs.records, rs.provenance)
    out = []
    for r in rs:
        text = _EMAIL.sub("[email]", r.text)
        out.append(ReviewRecord(stable_digest(r.source, r.id), text, r.rating, r.source, r.lang))
    return rs.derive(out, "anonymize")


def removal_reason(text: str, max_words: int = 450) -> str | None:
    """Return why ``text`` should be dropped, or None to keep it."""
    if not text.strip():
        return "empty"
    if not any(unicodedata.category(ch).startswith("L") for ch in text):
        visible = [ch for ch in text if not ch.isspace()]
        if all(unicodedata.category(ch) in _EMOJI_CATEGORIES for ch in visible):
            return "emoji_only"
        return "non_alphabetic"
    if count_words(text) > max_words:
        return "too_long"
    return None


def clean(rs: RecordSet, max_words: int = 450) -> tuple[RecordSet, CleaningLog]:
    if max_words < 1:
        raise CorpusError("max_words must be >= 1")
    kept, log = [], CleaningLog()
    for r in rs:
        reason = removal_reason(r.text, max_words)
        if reason is None:
            kept.append(r)
        else:
            log.removed.append((r.id, reason))
    log.kept_count = len(kept)
    return rs.derive(kept, f"clean:max_words={max_words}"), log


def normalize_for_dedup(text: str) -> str:
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip().casefold()


def largest_remainder(total: int, weights: Sequence[Fraction]) -> list[int]:
    """Apportion ``total`` integer units proportionally to ``weights``.

    Ties in the fractional parts go to the earlier index.
    """
    wsum = sum(weights)
    if wsum <= 0:
        raise CorpusError("weights must have a positive sum")
    quotas = [Fraction(total) * Fraction(w) / wsum for w in weights]
    base = [q.numerator // q.denominator for q in quotas]
    short = total - sum(base)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def dedup(rs: RecordSet) -> tuple[RecordSet, CleaningLog]:
    seen = set()
    kept, log = [], CleaningLog()
    for r in rs:
        key = (normalize_for_dedup(r.text), r.rating)
        if key in seen:
            log.removed.append((r.id, "duplicate"))
        else:
            seen.add(key)
            kept.append(r)
    log.kept_count = len(kept)
    return rs.derive(kept, "dedup"), log


def dedup_downsample(
    rs: RecordSet, target: Mapping[int, float | Fraction] | None, seed: int
) -> RecordSet:
    """Drop duplicate texts, then randomly down-sample over-represented ratings.

    The class that is scarcest relative to its target share is kept whole and
    fixes the output size; every other class is sampled down to its quota.
    """
    deduped, _ = dedup(rs)
    if target is None:
        return RecordSet(deduped.records, rs.provenance + ("dedup_downsample:none",))
    fracs = {k: Fraction(str(v)) if isinstance(v, float) else Fraction(v) for k, v in target.items()}
    if set(fracs) - set(RATINGS):
        raise CorpusError(f"target has unknown ratings {sorted(set(fracs) - set(RATINGS))}")
    if sum(fracs.values()) != 1:
        raise CorpusError(f"target fractions sum to {float(sum(fracs.values()))}, not 1")

    by_rating: dict[int, list[ReviewRecord]] = {k: [] for k in RATINGS}
    for r in deduped:
        by_rating[r.rating].append(r)
    for k in RATINGS:
        if fracs.get(k, 0) > 0 and not by_rating[k]:
            raise CorpusError(f"rating {k} has no records; target share unreachable by down-sampling")

    active = [k for k in RATINGS if fracs.get(k, 0) > 0]
    total = min(Fraction(len(by_rating[k])) / fracs[k] for k in active)
    total_n = int(total)
    quotas = dict(zip(active, largest_remainder(total_n, [fracs[k] for k in active])))
    for k in active:
        if quotas[k] > len(by_rating[k]):
            # rounding pushed a limiting class one over; give the unit back
            quotas[k] = len(by_rating[k])

    rng = random.Random(seed)
    keep_ids = set()
    for k in RATINGS:
        group = by_rating[k]
        q = quotas.get(k, 0)
        if q >= len(group):
            keep_ids.update(r.id for r in group)
        else:
            keep_ids.update(r.id for r in rng.sample(group, q))
    kept = [r for r in deduped if r.id in keep_ids]
    desc = ",".join(f"{k}:{fracs.get(k, 0)}" for k in RATINGS)
    return RecordSet(tuple(kept), rs.provenance + (f"dedup_downsample:{desc}:seed={seed}",))


def _stratified_counts(class_sizes: Sequence[int], split_sizes: Sequence[int],
                       fractions: Sequence[Fraction]) -> list[list[int]]:
    """Integer table with the given row sums (classes) and column sums (splits),
    each cell as close as rounding allows to class_size * fraction."""
    table, rem = [], []
    for n in class_sizes:
        row = [int(n * f) for f in fractions]
        table.append(row)
        rem.append([Fraction(n) * f - c for f, c in zip(fractions, row)])
    row_need = [n - sum(row) for n, row in zip(class_sizes, table)]
    col_need = [s - sum(table[c][j] for c in range(len(class_sizes))) for j, s in enumerate(split_sizes)]
    cells = sorted(
        ((c, j) for c in range(len(class_sizes)) for j in range(len(fractions))),
        key=lambda cj: (-rem[cj[0]][cj[1]], cj),
    )
    for c, j in cells:
        if row_need[c] > 0 and col_need[j] > 0:
            table[c][j] += 1
            row_need[c] -= 1
            col_need[j] -= 1
    # Leftovers only occur when the greedy pass paints itself into a corner.
    for c in range(len(class_sizes)):
        for j in range(len(fractions)):
            while row_need[c] > 0 and col_need[j] > 0:
                table[c][j] += 1
                row_need[c] -= 1
                col_need[j] -= 1
    return table


def split(rs: RecordSet, spec: SplitSpec) -> tuple[RecordSet, RecordSet, RecordSet]:
    if len(rs) < 3:
        raise CorpusError(f"need at least 3 records to split, got {len(rs)}")
    if any(f <= 0 for f in spec.fractions):
        raise CorpusError("split fractions must be positive")
    rng = random.Random(spec.seed)
    sizes = largest_remainder(len(rs), spec.fractions)
    parts: list[list[ReviewRecord]] = [[], [], []]

    if spec.stratify_by_rating:
        groups = {k: [r for r in rs if r.rating == k] for k in RATINGS}
        present = [k for k in RATINGS if groups[k]]
        for k in present:
            if len(groups[k]) < 3:
                raise CorpusError(f"rating {k} has {len(groups[k])} records, fewer than the 3 splits")
        table = _stratified_counts([len(groups[k]) for k in present], sizes, spec.fractions)
        for k, row in zip(present, table):
            group = list(groups[k])
            rng.shuffle(group)
            start = 0
            for j, n in enumerate(row):
                parts[j].extend(group[start:start + n])
                start += n
    else:
        shuffled = list(rs)
        rng.shuffle(shuffled)
        start = 0
        for j, n in enumerate(sizes):
            parts[j] = shuffled[start:start + n]
            start += n

    order = {r.id: i for i, r in enumerate(rs)}
    names = ("train", "eval", "test")
    out = []
    for name, part in zip(names, parts):
        part.sort(key=lambda r: order[r.id])
        out.append(RecordSet(tuple(part), rs.provenance + (f"split:{name}:seed={spec.seed}",)))
    return out[0], out[1], out[2]


def with_lang(records: Iterable[ReviewRecord], langs: Mapping[str, str]) -> list[ReviewRecord]:
    return [replace(r, lang=langs.get(r.id, r.lang)) for r in records]
