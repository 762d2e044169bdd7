"""One-time run that fixes the epoch bound used by the convergence acceptance check.

Trains the toy classifier on the separable keyword set with several seeds and
records the first epoch at which training accuracy reaches the threshold.  The
bound is the worst seed plus a safety margin; the result is written as JSON
and the number is frozen into tests/test_acceptance.py.

    python3 scripts/derive_epoch_bound.py --seeds 0 1 2 3 4 --out epoch_bound.json
"""

import argparse
import json
import time

from reviewsent.model import ModelConfig
from reviewsent.synthetic import keyword_reviews
from reviewsent.tokenizer import wordpiece_encode, wordpiece_train
from reviewsent.train import TrainConfig, train_loop

N_EXAMPLES = 500
VOCAB_SIZE = 200
THRESHOLD = 0.95


def first_hit(seed: int, max_epochs: int) -> tuple[int | None, list[float]]:
    rs = keyword_reviews(N_EXAMPLES, seed=0)
    vocab = wordpiece_train([r.text for r in rs], VOCAB_SIZE)
    cfg = ModelConfig.toy(len(vocab), max_positions=32)
    accs: list[float] = []
    # patience = max_epochs: the derivation observes the raw trajectory
    tcfg = TrainConfig(max_epochs=max_epochs, patience=max_epochs, seed=seed)
    train_loop(rs, rs, lambda t: wordpiece_encode(t, vocab), cfg, tcfg,
               on_epoch_end=lambda rec, w: accs.append(rec.val_accuracy))
    hit = next((i + 1 for i, a in enumerate(accs) if a >= THRESHOLD), None)
    return hit, accs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--margin", type=int, default=3)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    results = {}
    for seed in args.seeds:
        t = time.time()
        hit, accs = first_hit(seed, args.max_epochs)
        results[seed] = {"first_epoch_at_threshold": hit, "train_accuracy": accs}
        print(f"seed {seed}: first epoch >= {THRESHOLD}: {hit}  ({time.time() - t:.1f}s)", flush=True)
    hits = [r["first_epoch_at_threshold"] for r in results.values()]
    if None in hits:
        raise SystemExit("some seed never reached the threshold; raise --max-epochs")
    bound = max(hits) + args.margin
    summary = {"threshold": THRESHOLD, "n_examples": N_EXAMPLES, "vocab_size": VOCAB_SIZE,
               "learning_rate": TrainConfig().learning_rate, "batch_size": TrainConfig().batch_size,
               "worst_seed_epoch": max(hits), "margin": args.margin, "epoch_bound": bound,
               "per_seed": results}
    print(f"epoch bound: {bound}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
