import numpy as np
import pytest

from helpers import random_blocks
from rdoqlab.codec import QuantParams, make_quant_params, scalar_quantize, \
    NIR_OFFSET
from rdoqlab.nn.models import StandardizationStats, init_fcnn
from rdoqlab.nn.train import Hyperparams, TrainingSplit, evaluate_model, train


def _synthetic_split(rng, count, n=4, all_zero_labels=False):
    p = make_quant_params(22, offset=NIR_OFFSET)
    x = random_blocks(rng, count, n)
    q_sq = scalar_quantize(x, p)
    if all_zero_labels:
        q_ref = q_sq.copy()
    else:
        # knock the largest magnitude of each block down by one
        q_ref = q_sq.copy()
        mags = np.abs(q_ref).reshape(count, -1)
        top = mags.argmax(axis=1)
        flat = q_ref.reshape(count, -1)
        flat[np.arange(count), top] -= np.sign(flat[np.arange(count), top]) \
            .astype(flat.dtype)
    return p, TrainingSplit(x=x, q_sq=q_sq, q_ref=q_ref)


def _model_for(split, seed=0, hidden=(16, 16)):
    stats = StandardizationStats.compute(
        np.abs(split.x), np.abs(split.q_sq).astype(np.float64))
    return init_fcnn(4, 22, hidden=hidden, seed=seed, stats=stats)


def test_all_zero_labels_reach_full_accuracy():
    rng = np.random.default_rng(70)
    p, tr = _synthetic_split(rng, 512, all_zero_labels=True)
    _, va = _synthetic_split(rng, 128, all_zero_labels=True)
    model = _model_for(tr)
    hyper = Hyperparams(lr=3e-3, batch_size=64, epochs=30, patience=30, seed=1)
    result = train(tr, va, model, p, hyper)
    acc, _ = evaluate_model(result.model, va, p)
    assert acc == pytest.approx(100.0)


def test_training_is_deterministic():
    rng = np.random.default_rng(71)
    p, tr = _synthetic_split(rng, 256)
    _, va = _synthetic_split(rng, 64)
    hyper = Hyperparams(epochs=3, seed=5)
    r1 = train(tr, va, _model_for(tr, seed=2), p, hyper)
    r2 = train(tr, va, _model_for(tr, seed=2), p, hyper)
    for k in r1.model.params:
        assert np.array_equal(r1.model.params[k], r2.model.params[k])
    for k in r1.model.state:
        assert np.array_equal(r1.model.state[k], r2.model.state[k])
    assert [e.train_loss for e in r1.log] == [e.train_loss for e in r2.log]


def test_training_loss_decreases():
    rng = np.random.default_rng(72)
    p, tr = _synthetic_split(rng, 1024)
    _, va = _synthetic_split(rng, 128)
    hyper = Hyperparams(epochs=6, seed=3)
    result = train(tr, va, _model_for(tr, seed=4), p, hyper)
    losses = [e.train_loss for e in result.log]
    assert losses[-1] < losses[0]


def test_best_rd_log_is_monotone():
    rng = np.random.default_rng(73)
    p, tr = _synthetic_split(rng, 256)
    _, va = _synthetic_split(rng, 64)
    result = train(tr, va, _model_for(tr, seed=6), p,
                   Hyperparams(epochs=5, seed=7))
    best = [e.best_rd for e in result.log]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert all(e.best_rd <= e.val_rd for e in result.log)


def test_returned_model_matches_best_checkpoint():
    rng = np.random.default_rng(74)
    p, tr = _synthetic_split(rng, 256)
    _, va = _synthetic_split(rng, 64)
    result = train(tr, va, _model_for(tr, seed=8), p,
                   Hyperparams(epochs=5, seed=9))
    _, rd = evaluate_model(result.model, va, p)
    assert rd == pytest.approx(min(e.val_rd for e in result.log))


def test_train_input_validation():
    rng = np.random.default_rng(75)
    p, tr = _synthetic_split(rng, 32)
    _, va = _synthetic_split(rng, 16)
    empty = TrainingSplit(x=tr.x[:0], q_sq=tr.q_sq[:0], q_ref=tr.q_ref[:0])
    with pytest.raises(ValueError):
        train(empty, va, _model_for(tr), p)
    with pytest.raises(ValueError):
        train(tr, va, _model_for(tr), p,
              Hyperparams(epochs=1, use_sensitivity_map=True))
    with pytest.raises(ValueError):
        train(tr, va, _model_for(tr), p,
              Hyperparams(epochs=1, class_weights=(1.0, 2.0, 3.0)))


def test_class_weights_and_mask_paths_run():
    rng = np.random.default_rng(76)
    p, tr = _synthetic_split(rng, 128)
    _, va = _synthetic_split(rng, 32)
    hyper = Hyperparams(epochs=2, seed=1, zero_mask_loss=True,
                        class_weights=(4.0, 1.0))
    result = train(tr, va, _model_for(tr, seed=3), p, hyper)
    assert len(result.log) == 2
    assert np.isfinite(result.log[-1].train_loss)
