"""Training-loop behavior: determinism, checkpoint selection, round trips."""

import dataclasses

import numpy as np
import pytest

from mmists.data import DataError, GenConfig, generate_synthetic
from mmists.harness import (
    Checkpoint,
    NumericalError,
    aggregate_reports,
    evaluate,
    gate_summary,
    load_checkpoint,
    predict,
    run_seeds,
    save_checkpoint,
    snapshot_arrays,
    train,
)
from mmists.metrics import EvalReport, evaluate_scores
from mmists.model import ConfigError, RunConfig, init_model


SMALL = dict(
    modality="ts",
    ts_embed="utde",
    alpha=6,
    n_features=4,
    d_hidden=8,
    d_timeembed=4,
    time_heads=1,
    heads=1,
    fusion_layers=1,
    batch_size=16,
    lr=2e-3,
    epochs=2,
)


def small_config(**overrides) -> RunConfig:
    kw = dict(SMALL, seed=0)
    kw.update(overrides)
    return RunConfig(**kw)


@pytest.fixture(scope="module")
def splits():
    eps = generate_synthetic(GenConfig(n_episodes=90, task="ts_only", seed=41))
    return eps[:60], eps[60:75], eps[75:]


# ------------------------------------------------------------------ training

def test_epochs_zero_returns_scored_initialization(splits):
    tr, va, _ = splits
    config = small_config(epochs=0)
    ckpt = train(config, tr, va)
    assert ckpt.epoch == 0
    init_arrays = snapshot_arrays(init_model(config))
    assert set(ckpt.arrays) == set(init_arrays)
    for name in init_arrays:
        np.testing.assert_array_equal(ckpt.arrays[name], init_arrays[name])
    # the stored metric really is the validation score of the initialization
    assert ckpt.metric_name == "f1"
    assert evaluate(ckpt, va).f1 == ckpt.metric_value


def test_identical_runs_are_bit_identical(splits):
    tr, va, te = splits
    traces = []
    reports = []
    for _ in range(2):
        losses, vals = [], []
        ckpt = train(small_config(), tr, va, loss_trace=losses, val_trace=vals)
        traces.append((losses, vals))
        reports.append(evaluate(ckpt, te))
    assert traces[0][0] == traces[1][0]  # per-batch losses, exact
    assert traces[0][1] == traces[1][1]  # per-epoch validation metric, exact
    a, b = reports
    assert (a.f1, a.aupr, a.auroc) == (b.f1, b.aupr, b.auroc)


def test_seed_changes_the_run(splits):
    tr, va, _ = splits
    l0, l1 = [], []
    train(small_config(seed=0), tr, va, loss_trace=l0)
    train(small_config(seed=1), tr, va, loss_trace=l1)
    assert l0 != l1


def test_best_checkpoint_is_earliest_maximum(splits):
    tr, va, _ = splits
    vals = []
    ckpt = train(small_config(epochs=4), tr, va, val_trace=vals)
    assert ckpt.metric_value == max(vals)
    assert ckpt.epoch == int(np.argmax(vals))  # first index attaining the max
    # running best never decreases
    best = np.maximum.accumulate(vals)
    assert list(best) == sorted(best)


def test_stored_metric_reproduced_bit_exactly(splits):
    tr, va, _ = splits
    ckpt = train(small_config(), tr, va)
    assert evaluate(ckpt, va).f1 == ckpt.metric_value


def test_empty_splits_rejected(splits):
    tr, va, _ = splits
    with pytest.raises(DataError, match="non-empty"):
        train(small_config(), [], va)
    with pytest.raises(DataError, match="non-empty"):
        train(small_config(), tr, [])


def test_nan_loss_aborts_with_diagnostic(splits):
    tr, va, _ = splits
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalError, match=r"epoch \d+, batch \d+ .*lr="):
            train(small_config(lr=1e200, epochs=3), tr, va)


def test_aggressive_clipping_freezes_the_loss(splits):
    tr, va, _ = splits
    # one full batch per epoch: the loss moves only as far as the update allows
    losses_clipped, losses_free = [], []
    train(small_config(batch_size=64, epochs=2, grad_clip=1e-12), tr, va, loss_trace=losses_clipped)
    train(small_config(batch_size=64, epochs=2), tr, va, loss_trace=losses_free)
    assert losses_clipped[0] == losses_free[0]  # loss precedes the first update
    assert abs(losses_clipped[1] - losses_clipped[0]) < 1e-5
    assert abs(losses_free[1] - losses_free[0]) > 1e-3


def test_multilabel_training_path(splits):
    tr, va, te = splits
    two_class = [
        dataclasses.replace(ep, label=np.array([ep.label[0], 1.0 - ep.label[0]]))
        for ep in tr + va + te
    ]
    tr2, va2, te2 = two_class[:60], two_class[60:75], two_class[75:]
    config = small_config(task="multilabel", n_classes=2, epochs=1)
    ckpt = train(config, tr2, va2)
    assert ckpt.metric_name == "macro_f1"
    rep = evaluate(ckpt, te2)
    assert rep.macro_f1 is not None
    assert len(rep.per_class) == 2


# ------------------------------------------------------------------ checkpoints

def test_checkpoint_save_load_round_trip(tmp_path, splits):
    tr, va, te = splits
    ckpt = train(small_config(), tr, va)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)

    assert set(loaded.arrays) == set(ckpt.arrays)
    for name in ckpt.arrays:
        np.testing.assert_array_equal(loaded.arrays[name], ckpt.arrays[name])
    assert loaded.config == ckpt.config
    assert loaded.epoch == ckpt.epoch
    assert loaded.metric_name == ckpt.metric_name
    assert loaded.metric_value == ckpt.metric_value
    np.testing.assert_array_equal(loaded.stats.feature_min, ckpt.stats.feature_min)
    np.testing.assert_array_equal(loaded.stats.feature_max, ckpt.stats.feature_max)
    np.testing.assert_array_equal(loaded.stats.global_mean, ckpt.stats.global_mean)
    assert loaded.stats.alpha_hours == ckpt.stats.alpha_hours

    before = evaluate(ckpt, te)
    after = evaluate(loaded, te)
    assert (before.f1, before.aupr, before.auroc) == (after.f1, after.aupr, after.auroc)


def test_corrupt_checkpoint_raises_data_error(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError, match="unreadable checkpoint"):
        load_checkpoint(path)


# ------------------------------------------------------------------ inference

def test_evaluate_rejects_empty_and_mismatched(splits):
    tr, va, _ = splits
    ckpt = train(small_config(epochs=0), tr, va)
    with pytest.raises(DataError, match="empty"):
        evaluate(ckpt, [])
    wrong = [dataclasses.replace(va[0], label=np.array([1.0, 0.0]))]
    with pytest.raises(DataError):
        evaluate(ckpt, wrong)


def test_predict_matches_evaluate_scores(splits):
    tr, va, te = splits
    ckpt = train(small_config(), tr, va)
    rows = predict(ckpt, te)
    assert [episode_id for episode_id, _ in rows] == [ep.episode_id for ep in te]
    scores = np.stack([s for _, s in rows])
    assert scores.shape == (len(te), 1)
    labels = np.stack([ep.label for ep in te])
    rebuilt = evaluate_scores(scores, labels, task="binary")
    direct = evaluate(ckpt, te)
    assert (rebuilt.f1, rebuilt.aupr, rebuilt.auroc) == (direct.f1, direct.aupr, direct.auroc)


def test_zero_logits_predict_half(splits):
    tr, va, te = splits
    config = small_config(epochs=0)
    ckpt = train(config, tr, va)
    # zero the classifier head: logit 0 -> probability exactly 0.5
    for name in ("ts_head.w_hidden", "ts_head.b_hidden", "ts_head.w_out", "ts_head.b_out"):
        ckpt.arrays[name][...] = 0.0
    for _, scores in predict(ckpt, te):
        assert scores.tolist() == [0.5]


def test_gate_summary_reports_initial_half(splits):
    tr, va, te = splits
    ckpt = train(small_config(epochs=0), tr, va)
    rows = gate_summary(ckpt, te)
    assert [episode_id for episode_id, _ in rows] == [ep.episode_id for ep in te]
    for _, g in rows:
        assert g == 0.5  # zero-initialized gate output layer
    trained = train(small_config(), tr, va)
    for _, g in gate_summary(trained, te):
        assert 0.0 < g < 1.0


def test_gate_summary_requires_gated_embedding(splits):
    tr, va, te = splits
    ckpt = train(small_config(ts_embed="imputation", epochs=0), tr, va)
    with pytest.raises(ConfigError, match="utde"):
        gate_summary(ckpt, te)


# ------------------------------------------------------------------ aggregation

def test_aggregate_matches_hand_computation():
    reports = [
        EvalReport(f1=0.5, aupr=0.6, auroc=0.7, threshold=0.5, n_examples=10),
        EvalReport(f1=0.7, aupr=0.5, auroc=0.9, threshold=0.5, n_examples=10),
        EvalReport(f1=0.6, aupr=0.7, auroc=0.8, threshold=0.5, n_examples=10),
    ]
    agg = aggregate_reports(reports)
    assert agg["f1"][0] == pytest.approx(0.6)
    assert agg["f1"][1] == pytest.approx(np.std([0.5, 0.7, 0.6]))
    assert agg["auroc"][0] == pytest.approx(0.8)
    assert "macro_f1" not in agg
    with pytest.raises(ValueError):
        aggregate_reports([])


def test_run_seeds_is_deterministic(splits):
    tr, va, te = splits
    config = small_config(epochs=1)
    _, first = run_seeds(config, [0, 1], tr, va, te)
    _, second = run_seeds(config, [0, 1], tr, va, te)
    assert [r.auroc for r in first] == [r.auroc for r in second]
    assert len(first) == 2
