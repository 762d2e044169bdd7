"""End-to-end demo on a synthetic corpus, driven through the CLI.

Runs clean -> langid -> split -> train -> predict -> evaluate -> compare-remote
(against the local mock endpoint) -> report in a work directory and prints
each stage's summary line.  Everything is small enough to finish in about a
minute on a laptop CPU.

    python3 scripts/pipeline_demo.py --work /tmp/reviewsent-demo
"""

import argparse
import os
from pathlib import Path

from reviewsent.cli import run
from reviewsent.corpus import write_jsonl
from reviewsent.mock_server import MockChatServer
from reviewsent.synthetic import keyword_reviews


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("demo_run"))
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    w = args.work
    w.mkdir(parents=True, exist_ok=True)
    write_jsonl(keyword_reviews(args.n, seed=args.seed), w / "raw.jsonl")
    os.environ.setdefault("OPENAI_API_KEY", "demo-token")
    seed = ["--seed", str(args.seed)]
    steps = [
        ["clean", "--in", w / "raw.jsonl", "--out", w / "clean.jsonl"],
        ["langid", "--in", w / "clean.jsonl", "--out", w / "lt.jsonl", "--separated", w / "other.jsonl"],
        ["split", "--in", w / "clean.jsonl", "--train", w / "train.jsonl", "--eval", w / "eval.jsonl",
         "--test", w / "test.jsonl"],
        ["train", "--train", w / "train.jsonl", "--eval", w / "eval.jsonl", "--out-dir", w / "model",
         "--epochs", str(args.epochs), "--vocab-size", "200", "--max-positions", "32"],
        ["predict", "--model-dir", w / "model", "--in", w / "test.jsonl", "--out", w / "pred.jsonl"],
        ["evaluate", "--pred", w / "pred.jsonl", "--truth", w / "test.jsonl", "--out-dir", w / "reports",
         "--collapse"],
    ]
    with MockChatServer() as srv:
        steps.append(["compare-remote", "--in", w / "test.jsonl", "--local-pred", w / "pred.jsonl",
                      "--out-dir", w / "remote", "--endpoint", srv.url, "--cache", w / "remote_cache.jsonl",
                      "--rpm", "6000"])
        steps.append(["report", "--inputs", w / "reports" / "report_5class.json",
                      w / "reports" / "report_3class.json", "--published", "--out", w / "summary.md"])
        for argv in steps:
            code = run(seed + [str(a) for a in argv])
            if code != 0:
                raise SystemExit(f"stage {argv[0]} failed with exit code {code}")
    print(f"outputs in {w}")


if __name__ == "__main__":
    main()
