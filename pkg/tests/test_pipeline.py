"""Training-loop tests: warm-up behavior, identification, epoch mechanics,
checkpoint resumability, and run-level determinism."""

import copy
import json

import numpy as np
import pytest

import rematch.encoder as enc
import rematch.pipeline as pl
from rematch.data import identification_score, make_benchmark
from rematch.losses import warmup_loss
from rematch.pipeline import (
    TrainConfig,
    evaluate,
    init_state,
    load_state,
    per_sample_losses,
    random_ranking_rsum,
    run_experiment,
    save_state,
    split_indices,
    train_epoch,
    warmup,
)

SMALL = dict(warmup_epochs=2, train_epochs=2, lr_decay_epoch=3, batch_size=32)


@pytest.fixture(scope="module")
def clean_ds():
    return make_benchmark(n=300, classes=10, noise=0.1, mrate=0.0, rng_seed=0)


@pytest.fixture(scope="module")
def noisy_ds():
    return make_benchmark(n=500, classes=10, noise=0.1, mrate=0.4, rng_seed=0)


class TestConfig:
    def test_pinned_defaults(self):
        cfg = TrainConfig()
        assert cfg.threshold == 0.5
        assert cfg.eps == 1e-7
        assert cfg.rho == 0.1
        assert cfg.tau == 0.05
        assert cfg.alpha == 0.2
        assert cfg.batch_size == 128
        assert cfg.lr_model == 2e-4
        assert cfg.lr_cost == 2e-6

    def test_every_field_overridable(self):
        cfg = TrainConfig(rho=0.25, tau=0.1, mode="discard", optimizer="adam")
        assert cfg.rho == 0.25 and cfg.mode == "discard"

    def test_invalid_choices_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(mode="other")
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")


class TestWarmup:
    def test_zero_epochs_only_touch_the_counter(self, clean_ds):
        cfg = TrainConfig(seed=0, warmup_epochs=0)
        train_idx, _, _ = split_indices(cfg, clean_ds)
        state = init_state(cfg, clean_ds)
        before_v = state.params.w_v.copy()
        warmup(state, clean_ds, cfg, train_idx)
        assert state.epoch == 0
        np.testing.assert_array_equal(state.params.w_v, before_v)

    def test_beats_random_ranking_on_clean_data(self, clean_ds):
        cfg = TrainConfig(seed=0, warmup_epochs=5)
        train_idx, val_idx, _ = split_indices(cfg, clean_ds)
        state = init_state(cfg, clean_ds)
        warmup(state, clean_ds, cfg, train_idx)
        metrics = evaluate(state.params, clean_ds, val_idx)
        baseline = random_ranking_rsum(val_idx.size)
        assert metrics["r1_i2t"] > 100.0 / val_idx.size
        assert metrics["rsum"] > baseline

    def test_fixed_batch_loss_non_increasing(self, clean_ds):
        # evaluated on frozen batches so the trace reflects optimization,
        # not epoch-to-epoch batch composition
        cfg = TrainConfig(seed=0, warmup_epochs=1)
        train_idx, _, _ = split_indices(cfg, clean_ds)
        state = init_state(cfg, clean_ds)
        batches = pl._batches(train_idx, cfg.batch_size, np.random.default_rng(123))

        def frozen_loss():
            total = 0.0
            for batch in batches:
                s, _ = enc.similarity(state.params, clean_ds.v_feats[batch],
                                      clean_ds.t_feats[batch])
                total += warmup_loss(s, cfg.tau, cfg.eps)[0]
            return total / len(batches)

        trace = [frozen_loss()]
        for _ in range(6):
            warmup(state, clean_ds, cfg, train_idx)
            trace.append(frozen_loss())
        assert all(later <= earlier + 1e-9
                   for earlier, later in zip(trace, trace[1:]))


class TestPerSampleLosses:
    def test_reproducible_given_seeds(self, noisy_ds):
        cfg = TrainConfig(seed=0, warmup_epochs=2)
        train_idx, _, _ = split_indices(cfg, noisy_ds)
        state = init_state(cfg, noisy_ds)
        warmup(state, noisy_ds, cfg, train_idx)
        first = per_sample_losses(state, noisy_ds, cfg, train_idx)
        second = per_sample_losses(state, noisy_ds, cfg, train_idx)
        np.testing.assert_array_equal(first, second)

    def test_mismatched_pairs_have_higher_losses_after_warmup(self, noisy_ds):
        cfg = TrainConfig(seed=0)
        train_idx, _, _ = split_indices(cfg, noisy_ds)
        state = init_state(cfg, noisy_ds)
        warmup(state, noisy_ds, cfg, train_idx)
        losses = per_sample_losses(state, noisy_ds, cfg, train_idx)
        flags = noisy_ds.matched[train_idx]
        assert losses[flags == 0].mean() > losses[flags == 1].mean()

    def test_dominant_diagonal_gives_zero_loss(self):
        # identical towers over near-orthogonal rows: every pair scores 1
        # with itself while negatives stay far below 1 - margin
        rng = np.random.default_rng(11)
        feats = rng.normal(size=(48, 32))
        from rematch.data import PairDataset
        ds = PairDataset(v_feats=feats, t_feats=feats.copy(),
                         matched=np.ones(48, dtype=np.int8),
                         v_class=np.zeros(48, dtype=np.int64),
                         t_class=np.zeros(48, dtype=np.int64))
        cfg = TrainConfig(seed=0, warmup_epochs=0, batch_size=16, alpha=0.2,
                          embed_dim=32)
        state = init_state(cfg, ds)
        state.params = enc.EncoderParams(np.eye(32), np.eye(32))
        losses = per_sample_losses(state, ds, cfg, np.arange(48))
        assert np.all(losses == 0.0)


class TestIdentification:
    def test_f1_after_default_warmup(self, noisy_ds):
        # regression constant, frozen at first measurement
        cfg = TrainConfig(seed=0)
        train_idx, _, _ = split_indices(cfg, noisy_ds)
        state = init_state(cfg, noisy_ds)
        warmup(state, noisy_ds, cfg, train_idx)
        _, mismatched, _ = pl._identify(state, noisy_ds, cfg, train_idx)
        score = identification_score(pl._positions(train_idx, mismatched),
                                     noisy_ds.matched[train_idx])
        assert score["f1"] >= 0.8
        assert score["f1"] == pytest.approx(0.9198606271777003, abs=1e-9)


class TestTrainEpoch:
    def test_perfect_split_reduces_to_triplet_training(self):
        # with zero feature noise every pair's hinge loss is identical, the
        # mixture fit falls back, and the mismatched subset comes out empty,
        # so the epoch runs on the ranking term alone
        ds = make_benchmark(n=120, classes=2, noise=0.0, mrate=0.0, rng_seed=1)
        cfg = TrainConfig(seed=0, warmup_epochs=0, batch_size=24)
        train_idx, _, _ = split_indices(cfg, ds)
        state = init_state(cfg, ds)
        train_epoch(state, ds, cfg, train_idx)
        record = state.history[-1]
        assert record["partition"]["mismatched"] == 0
        assert record["partition"]["matched"] == train_idx.size
        assert record["bmm"] is None

    def test_epoch_records_required_blocks(self, noisy_ds):
        cfg = TrainConfig(seed=0, warmup_epochs=2, batch_size=64)
        train_idx, _, _ = split_indices(cfg, noisy_ds)
        state = init_state(cfg, noisy_ds)
        warmup(state, noisy_ds, cfg, train_idx)
        train_epoch(state, noisy_ds, cfg, train_idx)
        record = state.history[-1]
        for key in ("bmm", "partition", "identification", "cost_gap",
                    "cost_params"):
            assert key in record
        assert record["cost_gap"]["gap"] == pytest.approx(
            record["cost_gap"]["mean_mismatched"]
            - record["cost_gap"]["mean_matched"])

    def test_cost_update_precedes_model_update(self, noisy_ds):
        # the cost parameters recorded at epoch end must differ from their
        # initial values even though the encoder also moved
        cfg = TrainConfig(seed=0, warmup_epochs=2, batch_size=64,
                          lr_cost=1e-3)
        train_idx, _, _ = split_indices(cfg, noisy_ds)
        state = init_state(cfg, noisy_ds)
        warmup(state, noisy_ds, cfg, train_idx)
        theta_before = state.theta
        train_epoch(state, noisy_ds, cfg, train_idx)
        assert state.theta != theta_before


class TestRunExperiment:
    def test_smoke_run_completes_quickly(self):
        import time
        ds = make_benchmark(n=200, classes=5, noise=0.1, mrate=0.4, rng_seed=0)
        started = time.time()
        payload = run_experiment(TrainConfig(seed=0, **SMALL), ds)
        assert time.time() - started < 30
        assert payload["schema"] == "run-metrics/1"
        for key in ("config", "dataset", "splits", "epochs", "best", "test",
                    "random_baseline_rsum"):
            assert key in payload
        assert len(payload["epochs"]) == 4
        assert json.dumps(payload, sort_keys=True)  # JSON-serializable

    def test_identical_runs_produce_identical_payloads(self):
        ds = make_benchmark(n=150, classes=5, noise=0.1, mrate=0.3, rng_seed=1)
        a = run_experiment(TrainConfig(seed=3, **SMALL), ds)
        b = run_experiment(TrainConfig(seed=3, **SMALL), ds)
        a.pop("timing")
        b.pop("timing")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_modes_share_the_epoch_budget(self):
        ds = make_benchmark(n=150, classes=5, noise=0.1, mrate=0.3, rng_seed=1)
        for mode in ("rematch", "naive", "discard"):
            payload = run_experiment(TrainConfig(seed=0, mode=mode, **SMALL), ds)
            assert len(payload["epochs"]) == 4, mode

    def test_ablation_toggles_reach_the_loop(self):
        ds = make_benchmark(n=150, classes=5, noise=0.1, mrate=0.3, rng_seed=1)
        payload = run_experiment(
            TrainConfig(seed=0, cost_mode="cosine", mask_positives=False,
                        partial=False, rematch_variant="kl", **SMALL), ds)
        assert payload["config"]["cost_mode"] == "cosine"
        assert payload["config"]["mask_positives"] is False
        assert payload["config"]["partial"] is False

    def test_too_small_splits_rejected(self):
        ds = make_benchmark(n=60, classes=3, noise=0.1, mrate=0.3, rng_seed=0)
        with pytest.raises(ValueError, match="splits"):
            run_experiment(TrainConfig(seed=0, **SMALL), ds)


class TestCheckpointing:
    def test_resume_reproduces_training(self, tmp_path, noisy_ds):
        cfg = TrainConfig(seed=1, warmup_epochs=1, train_epochs=3,
                          lr_decay_epoch=2, batch_size=32)
        train_idx, _, _ = split_indices(cfg, noisy_ds)

        straight = init_state(cfg, noisy_ds)
        warmup(straight, noisy_ds, cfg, train_idx)
        for _ in range(3):
            train_epoch(straight, noisy_ds, cfg, train_idx)

        stopped = init_state(cfg, noisy_ds)
        warmup(stopped, noisy_ds, cfg, train_idx)
        for _ in range(2):
            train_epoch(stopped, noisy_ds, cfg, train_idx)
        path = tmp_path / "checkpoint.npz"
        save_state(stopped, cfg, str(path))
        resumed, cfg_back = load_state(str(path))
        assert cfg_back == cfg
        train_epoch(resumed, noisy_ds, cfg, train_idx)

        np.testing.assert_array_equal(straight.params.w_v, resumed.params.w_v)
        np.testing.assert_array_equal(straight.params.w_t, resumed.params.w_t)
        assert straight.theta == resumed.theta
        assert straight.epoch == resumed.epoch

    def test_adam_state_round_trips(self, tmp_path, noisy_ds):
        cfg = TrainConfig(seed=2, optimizer="adam", warmup_epochs=1,
                          train_epochs=1, batch_size=32)
        train_idx, _, _ = split_indices(cfg, noisy_ds)
        state = init_state(cfg, noisy_ds)
        warmup(state, noisy_ds, cfg, train_idx)
        path = tmp_path / "adam.npz"
        save_state(state, cfg, str(path))
        back, _ = load_state(str(path))
        assert back.adam is not None
        np.testing.assert_array_equal(back.adam.m_v, state.adam.m_v)
        assert back.adam.step == state.adam.step

    def test_rejects_unknown_version(self, tmp_path, noisy_ds):
        cfg = TrainConfig(seed=0)
        state = init_state(cfg, noisy_ds)
        path = tmp_path / "bad.npz"
        save_state(state, cfg, str(path))
        data = dict(np.load(str(path), allow_pickle=False))
        data["version"] = np.int64(99)
        np.savez(str(path), **data)
        with pytest.raises(ValueError, match="version"):
            load_state(str(path))
