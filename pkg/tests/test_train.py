import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reviewsent.model import ModelConfig, init_weights
from reviewsent.synthetic import keyword_reviews
from reviewsent.tokenizer import byte_encode, wordpiece_encode, wordpiece_train
from reviewsent.train import (
    Adam,
    EarlyStopping,
    TrainConfig,
    TrainingError,
    batch_cross_entropy,
    batch_loss,
    cross_entropy,
    head_parameters,
    make_examples,
    predict_records,
    train_loop,
    write_history,
)

from gradcheck import examples, max_relative_error


@pytest.fixture(scope="module")
def small_task():
    rs = keyword_reviews(60, seed=2)
    vocab = wordpiece_train([r.text for r in rs], 80)
    cfg = ModelConfig.toy(len(vocab), d_model=8, n_heads=2, d_ff=16, max_positions=16, n_layers=1)
    return rs, (lambda t: wordpiece_encode(t, vocab)), cfg


class TestLoss:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=8), st.data())
    def test_cross_entropy_gradient(self, logits, data):
        label = data.draw(st.integers(0, len(logits) - 1))
        x = np.array(logits)
        loss, grad = cross_entropy(x, label)
        h = 1e-6
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            num = (cross_entropy(x + e, label)[0] - cross_entropy(x - e, label)[0]) / (2 * h)
            assert abs(num - grad[i]) < 1e-6
        assert loss >= 0

    def test_cross_entropy_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros(5), 5)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(4, 5))
        labels = np.array([0, 3, 4, 1])
        loss, grad = batch_cross_entropy(logits, labels)
        singles = [cross_entropy(logits[i], labels[i]) for i in range(4)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-12)
        assert np.allclose(grad, np.stack([s[1] for s in singles]) / 4, atol=1e-15)
        masked, _ = batch_cross_entropy(logits, labels, np.array([1, 0, 0, 1]))
        assert masked == pytest.approx((singles[0][0] + singles[3][0]) / 2, abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("training", [False, True])
    def test_classifier(self, training):
        cfg = ModelConfig.toy(12, d_model=8, n_heads=2, d_ff=12, max_positions=6)
        w = init_weights(cfg, 1, std=0.3)
        err, where = max_relative_error(w, examples(cfg, np.random.default_rng(1)), cfg, training, seed=5)
        assert err < 1e-3, where

    @pytest.mark.parametrize("training", [False, True])
    def test_seq2seq(self, training):
        cfg = ModelConfig.toy(259, d_model=4, n_heads=2, d_ff=6, max_positions=6, n_layers=1,
                              mode="encoder_decoder")
        w = init_weights(cfg, 2, std=0.3)
        batch = examples(cfg, np.random.default_rng(2), n=2, lo=2, hi=4)
        err, where = max_relative_error(w, batch, cfg, training, seed=7)
        assert err < 1e-3, where


class TestOptimizer:
    def test_one_step_decreases_loss(self):
        cfg = ModelConfig.toy(12, d_model=8, n_heads=2, d_ff=12, max_positions=6)
        decreased = 0
        for seed in range(100):
            w = init_weights(cfg, seed, std=0.3)
            batch = examples(cfg, np.random.default_rng(seed))
            grads = {}
            before = batch_loss(w, batch, cfg, grads=grads)
            Adam(w, 1e-3).step(w, grads)
            decreased += batch_loss(w, batch, cfg) < before
        assert decreased == 100

    def test_adam_first_step_is_lr_sign(self):
        w = {"x": np.array([1.0, -2.0, 3.0])}
        Adam(w, 0.1).step(w, {"x": np.array([0.5, -4.0, 0.0])})
        assert np.allclose(w["x"], [0.9, -1.9, 3.0], atol=1e-6)

    def test_head_only_freezes_body(self, small_task):
        rs, tok, cfg = small_task
        init = init_weights(cfg, 0)
        res = train_loop(rs, rs, tok, cfg, TrainConfig(max_epochs=1, regime="head_only"), init=init)
        heads = set(head_parameters(init))
        assert heads == {"pre_classifier.weight", "pre_classifier.bias", "classifier.weight", "classifier.bias"}
        for k in init:
            assert np.array_equal(init[k], res.weights[k]) != (k in heads)


class TestEarlyStopping:
    def test_scripted_sequence(self, small_task):
        rs, tok, cfg = small_task
        script = [1.0, 0.9, 0.95, 1.0, 1.1]
        snapshots = {}

        def validate(w, epoch):
            snapshots[epoch] = {k: v.copy() for k, v in w.items()}
            return script[epoch - 1], 0.0

        res = train_loop(rs, rs, tok, cfg, TrainConfig(max_epochs=10, patience=2), validate=validate)
        assert len(res.history) == 4
        assert res.stop_reason == "early_stop"
        assert res.best_epoch == 2
        assert all(np.array_equal(res.weights[k], snapshots[2][k]) for k in snapshots[2])
        assert not all(np.array_equal(res.weights[k], snapshots[4][k]) for k in snapshots[4])

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.integers(1, 4))
    def test_rule(self, losses, patience):
        stop = EarlyStopping(patience)
        w = {"x": np.zeros(1)}
        stopped_at = None
        for epoch, loss in enumerate(losses, start=1):
            w["x"][0] = epoch
            if stop.update(epoch, loss, w):
                stopped_at = epoch
                break
        seen = losses[:stopped_at] if stopped_at else losses
        # oracle: first epoch ending a run of `patience` consecutive rises
        rises, expected = 0, None
        for i in range(1, len(losses)):
            rises = rises + 1 if losses[i] > losses[i - 1] else 0
            if rises >= patience:
                expected = i + 1
                break
        assert stopped_at == expected
        best = min(range(len(seen)), key=lambda i: (seen[i], i)) + 1
        assert stop.best_epoch == best and stop.best_weights["x"][0] == best


class TestLoop:
    def test_seed_determinism(self, small_task, tmp_path):
        rs, tok, cfg = small_task
        tcfg = TrainConfig(max_epochs=2, seed=4)
        a = train_loop(rs, rs, tok, cfg, tcfg)
        b = train_loop(rs, rs, tok, cfg, tcfg)
        c = train_loop(rs, rs, tok, cfg, TrainConfig(max_epochs=2, seed=5))
        assert a.history == b.history
        assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
        assert a.history != c.history
        write_history(a.history, tmp_path / "h.jsonl")
        rows = [json.loads(x) for x in (tmp_path / "h.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [1, 2]

    def test_non_finite_loss_names_epoch(self, small_task):
        rs, tok, cfg = small_task
        w = init_weights(cfg, 0)
        w["classifier.bias"][:] = np.nan
        with pytest.raises((TrainingError, FloatingPointError), match="epoch 1|classifier"):
            train_loop(rs, rs, tok, cfg, TrainConfig(max_epochs=1), init=w)

    def test_examples_truncate_keep_sep(self, small_task):
        rs, tok, cfg = small_task
        cfg = ModelConfig.toy(cfg.vocab_size, max_positions=4)
        ex = make_examples(rs, tok, cfg)
        assert all(len(e.src) <= 4 and e.src[-1] == 3 for e in ex)

    def test_text_to_text_path_learns(self):
        rs = keyword_reviews(100, seed=0, max_words=6)
        cfg = ModelConfig.toy(259, mode="encoder_decoder", n_layers=1, d_model=32, max_positions=64)
        tok = lambda t: byte_encode(t, add_eos=True)  # noqa: E731
        res = train_loop(rs, rs, tok, cfg, TrainConfig(max_epochs=4, learning_rate=3e-3, patience=4))
        assert res.history[-1].train_loss < res.history[0].train_loss
        rows = predict_records(rs, tok, res.weights, cfg)
        assert {r["id"] for r in rows} == set(rs.ids)
        assert all(r["pred"] is None or 1 <= r["pred"] <= 5 for r in rows)
