"""Confusion matrices, precision/recall/F1 with micro/macro/weighted averaging,
five-to-three class collapse and report rendering.

Matrices are oriented ``counts[pred][true]``.  Predictions that could not be
mapped to a label are kept in a separate per-true-class ``unmapped`` vector:
they count towards the total and towards each true class's false negatives
but can never be correct.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

STAR_NAMES = (
    "emotionally negative",
    "rationally negative",
    "neutral",
    "rationally positive",
    "emotionally positive",
)
COARSE_NAMES = ("negative", "neutral", "positive")
DEFAULT_COLLAPSE = {1: "negative", 2: "negative", 3: "neutral", 4: "positive", 5: "positive"}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    label_names: tuple[str, ...]
    unmapped: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.label_names)
        if counts.shape != (k, k):
            raise MetricsError(f"counts shape {counts.shape} does not match {k} labels")
        if (counts < 0).any():
            raise MetricsError("negative count")
        um = np.zeros(k, dtype=np.int64) if self.unmapped is None else np.asarray(self.unmapped, dtype=np.int64)
        if um.shape != (k,) or (um < 0).any():
            raise MetricsError("unmapped must be a non-negative length-k vector")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "unmapped", um)
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def k(self) -> int:
        return len(self.label_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.unmapped.sum())

    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp()

    def fn(self) -> np.ndarray:
        return self.support() - self.tp()

    def tn(self) -> np.ndarray:
        return self.total - self.tp() - self.fp() - self.fn()

    def support(self) -> np.ndarray:
        """True-class counts (column sums, unmapped included)."""
        return self.counts.sum(axis=0) + self.unmapped

    def predicted(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_json(self) -> dict:
        return {
            "label_names": list(self.label_names),
            "counts": self.counts.tolist(),
            "unmapped": self.unmapped.tolist(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ConfusionMatrix":
        return cls(np.array(obj["counts"]), tuple(obj["label_names"]), obj.get("unmapped"))


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def to_json(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: tuple[PRF, ...]
    micro: PRF
    macro: PRF
    weighted: PRF
    support: tuple[int, ...]
    label_names: tuple[str, ...] = ()
    total: int = 0

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "per_class": {name: {**prf.to_json(), "support": s}
                          for name, prf, s in zip(self.label_names, self.per_class, self.support)},
            "micro": self.micro.to_json(),
            "macro": self.macro.to_json(),
            "weighted": self.weighted.to_json(),
        }


def confusion(preds: Sequence[int | None], truths: Sequence[int], k: int,
              label_names: Sequence[str] | None = None) -> ConfusionMatrix:
    """Count (pred, true) pairs of 0-based class indices; ``None`` preds are unmapped."""
    if len(preds) != len(truths):
        raise MetricsError(f"{len(preds)} predictions but {len(truths)} truths")
    if not preds:
        raise MetricsError("no predictions")
    counts = np.zeros((k, k), dtype=np.int64)
    unmapped = np.zeros(k, dtype=np.int64)
    for i, (p, t) in enumerate(zip(preds, truths)):
        if not 0 <= t < k:
            raise MetricsError(f"item {i}: true class {t} outside 0..{k - 1}")
        if p is None:
            unmapped[t] += 1
        elif not 0 <= p < k:
            raise MetricsError(f"item {i}: predicted class {p} outside 0..{k - 1}")
        else:
            counts[p, t] += 1
    names = tuple(label_names) if label_names is not None else tuple(str(i) for i in range(k))
    return ConfusionMatrix(counts, names, unmapped)


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _div(2 * precision * recall, precision + recall)


def prf(tp: int, fp: int, fn: int) -> PRF:
    # F1 straight from counts: same value as the harmonic mean, but micro F1
    # then reduces to the same float division as accuracy (2tp / 2n).
    return PRF(_div(tp, tp + fp), _div(tp, tp + fn), _div(2 * tp, 2 * tp + fp + fn))


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    total = cm.total
    if total < 1:
        raise MetricsError("empty confusion matrix")
    tp, fp, fn = cm.tp(), cm.fp(), cm.fn()
    per_class = tuple(prf(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn))
    micro = prf(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    macro = PRF(*(float(np.mean([getattr(x, f) for x in per_class])) for f in ("precision", "recall", "f1")))
    support = cm.support()
    weighted = PRF(*(_div(sum(getattr(x, f) * s for x, s in zip(per_class, support)), support.sum())
                     for f in ("precision", "recall", "f1")))
    return MetricsReport(
        accuracy=int(tp.sum()) / total,
        per_class=per_class,
        micro=micro,
        macro=macro,
        weighted=weighted,
        support=tuple(int(s) for s in support),
        label_names=cm.label_names,
        total=total,
    )


# ---------------------------------------------------------------------------
# Collapse


def _blocks(mapping: Mapping[int, str]) -> tuple[list[int], tuple[str, ...]]:
    if set(mapping) != {1, 2, 3, 4, 5}:
        raise MetricsError("collapse map must cover ratings 1..5")
    names: list[str] = []
    for r in sorted(mapping):
        if mapping[r] not in names:
            names.append(mapping[r])
    return [names.index(mapping[r]) for r in sorted(mapping)], tuple(names)


def collapse(cm: ConfusionMatrix, mapping: Mapping[int, str] = DEFAULT_COLLAPSE) -> ConfusionMatrix:
    """Sum 5-class cells into the blocks given by ``mapping`` (rating -> group name)."""
    if cm.k != 5:
        raise MetricsError(f"collapse needs a 5-class matrix, got {cm.k}")
    index, names = _blocks(mapping)
    m = len(names)
    proj = np.zeros((5, m), dtype=np.int64)
    proj[np.arange(5), index] = 1
    counts = proj.T @ cm.counts @ proj
    return ConfusionMatrix(counts, names, cm.unmapped @ proj)


def collapse_labels(ratings: Sequence[int | None], mapping: Mapping[int, str] = DEFAULT_COLLAPSE
                    ) -> list[int | None]:
    """Map 1-based ratings to 0-based coarse class indices (None passes through)."""
    index, _ = _blocks(mapping)
    return [None if r is None else index[r - 1] for r in ratings]


def ratings_confusion(preds: Sequence[int | None], truths: Sequence[int]) -> ConfusionMatrix:
    """5-class matrix from 1-based ratings."""
    return confusion([None if p is None else p - 1 for p in preds], [t - 1 for t in truths], 5, STAR_NAMES)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class RunResult:
    name: str
    report: MetricsReport
    cm: ConfusionMatrix
    notes: list[str] = field(default_factory=list)


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def render_report(runs: Sequence[RunResult | tuple], format: str = "markdown",
                  notes: Sequence[str] = ()) -> str:
    """Side-by-side accuracy/F1 table plus per-run confusion tables.

    Runs are listed by accuracy, best first (ties keep input order).
    """
    if not runs:
        raise MetricsError("nothing to report")
    runs = [r if isinstance(r, RunResult) else RunResult(*r) for r in runs]
    ordered = sorted(runs, key=lambda r: -r.report.accuracy)
    all_notes = list(notes) + [n for r in ordered for n in r.notes]

    if format == "json":
        doc = {
            "runs": [{"name": r.name, "metrics": r.report.to_json(), "confusion": r.cm.to_json(),
                      "notes": list(r.notes)} for r in ordered],
            "notes": list(notes),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if format != "markdown":
        raise MetricsError(f"unknown report format {format!r}")

    lines = ["| Run | Accuracy | Micro F1 | Macro F1 | Weighted F1 | N |",
             "|---|---|---|---|---|---|"]
    for r in ordered:
        m = r.report
        lines.append(f"| {r.name} | {_pct(m.accuracy)} | {_pct(m.micro.f1)} | {_pct(m.macro.f1)} "
                     f"| {_pct(m.weighted.f1)} | {m.total} |")
    for r in ordered:
        lines += ["", f"### {r.name}", "", "Rows: prediction, columns: true label; "
                  "percentages are shares of the row total.", ""]
        names = r.cm.label_names
        lines.append("| Prediction \\ True | " + " | ".join(names) + " | Row total |")
        lines.append("|---" * (len(names) + 2) + "|")
        for i, name in enumerate(names):
            row = r.cm.counts[i]
            tot = int(row.sum())
            cells = [f"{int(c)} ({_pct(c / tot) if tot else '0.00%'})" for c in row]
            lines.append(f"| {name} | " + " | ".join(cells) + f" | {tot} |")
        if r.cm.unmapped.any():
            tot = int(r.cm.unmapped.sum())
            cells = [str(int(c)) for c in r.cm.unmapped]
            lines.append("| (unmapped) | " + " | ".join(cells) + f" | {tot} |")
        lines += ["", "| Class | Precision | Recall | F1 | Support |", "|---|---|---|---|---|"]
        for name, x, s in zip(names, r.report.per_class, r.report.support):
            lines.append(f"| {name} | {x.precision:.4f} | {x.recall:.4f} | {x.f1:.4f} | {s} |")
    if all_notes:
        lines += ["", "Notes:", ""] + [f"- {n}" for n in all_notes]
    return "\n".join(lines) + "\n"


def read_prediction_log(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise MetricsError(f"{path}:{lineno}: {e.msg}") from None
            rows.append(row)
    return rows


def write_prediction_log(rows: Sequence[Mapping], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({"id": row["id"], "true": row["true"], "pred": row["pred"]},
                                sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Bundled regression fixture


def load_published_confusion() -> tuple[ConfusionMatrix, dict]:
    """The bundled 5-class count fixture and the figures printed next to it."""
    from importlib import resources

    raw = (resources.files("reviewsent") / "data" / "table3_confusion.json").read_text(encoding="utf-8")
    obj = json.loads(raw)
    cm = ConfusionMatrix(np.array(obj["counts"]), tuple(obj["label_names"]))
    return cm, obj


def divergence_notes(cm5: ConfusionMatrix, published: Mapping[str, float]) -> list[str]:
    """Compare count-derived figures with the published ones; one note per mismatch."""
    m5 = metrics(cm5)
    cm3 = collapse(cm5)
    m3 = metrics(cm3)
    notes = []
    diag5 = int(cm5.tp().sum())
    if "test_size" in published and published["test_size"] != cm5.total:
        notes.append(f"count total {cm5.total} differs from the published test size {published['test_size']}.")
    if "test_accuracy" in published:
        notes.append(
            f"5-class accuracy from counts is {_pct(m5.accuracy)} ({diag5}/{cm5.total}); "
            f"the published test accuracy is {_pct(published['test_accuracy'])}.")
    if "test_f1" in published:
        notes.append(
            f"published test F1 {_pct(published['test_f1'])} cannot be a micro average "
            f"(micro F1 equals accuracy, {_pct(m5.micro.f1)}); macro F1 from counts is {_pct(m5.macro.f1)}, "
            f"weighted F1 {_pct(m5.weighted.f1)}.")
    diag3 = int(cm3.tp().sum())
    neg, pos = cm3.label_names.index("negative"), cm3.label_names.index("positive")
    if "three_class_negative_accuracy" in published or "three_class_positive_accuracy" in published:
        notes.append(
            f"3-class accuracy from block sums is {_pct(m3.accuracy)} ({diag3}/{cm3.total}); "
            f"negative recall {_pct(m3.per_class[neg].recall)} / precision {_pct(m3.per_class[neg].precision)}, "
            f"positive recall {_pct(m3.per_class[pos].recall)} / precision {_pct(m3.per_class[pos].precision)}; "
            f"published per-group figures are {_pct(published.get('three_class_negative_accuracy', 0))} "
            f"(negative) and {_pct(published.get('three_class_positive_accuracy', 0))} (positive).")
    return notes
