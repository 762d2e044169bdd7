"""Central finite differences over every weight entry."""

import numpy as np

from reviewsent.train import Example, batch_loss

FLOOR = 1e-6


def loss_and_grads(w, batch, cfg, training, seed):
    grads = {}
    rng = np.random.default_rng(seed) if training else None
    loss = batch_loss(w, batch, cfg, training=training, rng=rng, grads=grads)
    return loss, grads


def max_relative_error(w, batch, cfg, training=False, seed=0, h=1e-5):
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, FLOOR) over all entries.

    With ``training`` the dropout masks are replayed from the same seed for
    every evaluation, so the loss stays a deterministic function of ``w``.
    """
    _, grads = loss_and_grads(w, batch, cfg, training, seed)
    worst, where = 0.0, None
    for name, arr in w.items():
        analytic = grads.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        ga = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = batch_loss(w, batch, cfg, training, np.random.default_rng(seed) if training else None)
            flat[i] = orig - h
            lm = batch_loss(w, batch, cfg, training, np.random.default_rng(seed) if training else None)
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            rel = abs(ga[i] - num) / max(abs(ga[i]), abs(num), FLOOR)
            if rel > worst:
                worst, where = rel, (name, i, ga[i], num)
    return worst, where


def examples(cfg, rng, n=3, lo=2, hi=6):
    return [Example(list(rng.integers(1, cfg.vocab_size, size=rng.integers(lo, hi + 1))),
                    int(rng.integers(0, cfg.n_classes))) for _ in range(n)]
