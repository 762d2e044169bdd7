"""Recompute the headline figures from the published confusion counts.

Prints the 5-class and collapsed 3-class metrics, the printed figures they
should reproduce, and every divergence found.  With ``--out`` the markdown
report is also written to disk.

    python3 scripts/table_regressions.py --out results/published_counts.md
"""

import argparse

from reviewsent.evaluation import (
    RunResult,
    collapse,
    divergence_notes,
    load_published_confusion,
    metrics,
    render_report,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cm5, fixture = load_published_confusion()
    cm3 = collapse(cm5)
    m5, m3 = metrics(cm5), metrics(cm3)
    pub = fixture["published"]
    print(f"test size        {cm5.total} (printed {pub['test_size']})")
    print(f"5-class accuracy {m5.accuracy:.4f} (printed {pub['test_accuracy']})")
    print(f"5-class macro F1 {m5.macro.f1:.4f}, weighted F1 {m5.weighted.f1:.4f} (printed {pub['test_f1']})")
    print(f"3-class accuracy {m3.accuracy:.4f}")
    for name, x in zip(cm3.label_names, m3.per_class):
        print(f"  {name:<9} P={x.precision:.4f} R={x.recall:.4f} F1={x.f1:.4f}")
    notes = divergence_notes(cm5, pub)
    for note in notes:
        print(f"note: {note}")
    if args.out:
        runs = [RunResult("published counts (5-class)", m5, cm5), RunResult("published counts (3-class)", m3, cm3)]
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(render_report(runs, "markdown", notes))


if __name__ == "__main__":
    main()
