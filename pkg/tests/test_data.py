"""Dataset generation, corruption bookkeeping, serialization, and scoring."""

import numpy as np
import pytest

from rematch.data import (
    SPLIT_TEST,
    corrupt,
    generate,
    identification_score,
    load_dataset,
    make_benchmark,
    recall_at_k,
    save_dataset,
)


class TestGenerate:
    def test_same_class_shares_latent_at_zero_noise(self):
        ds = generate(n=50, classes=5, noise=0.0, rng_seed=0)
        for cls in range(5):
            rows = np.flatnonzero(ds.v_class == cls)
            if rows.size < 2:
                continue
            np.testing.assert_allclose(ds.v_feats[rows[0]], ds.v_feats[rows[1]])
            np.testing.assert_allclose(ds.t_feats[rows[0]], ds.t_feats[rows[1]])

    def test_deterministic_per_seed(self):
        a = generate(n=40, classes=4, noise=0.3, rng_seed=7)
        b = generate(n=40, classes=4, noise=0.3, rng_seed=7)
        np.testing.assert_array_equal(a.v_feats, b.v_feats)
        np.testing.assert_array_equal(a.t_feats, b.t_feats)
        np.testing.assert_array_equal(a.v_class, b.v_class)

    def test_all_pairs_start_matched(self):
        ds = generate(n=30, classes=3, noise=0.1, rng_seed=1)
        assert np.all(ds.matched == 1)

    def test_class_separability(self):
        # nearest-prototype classification of the visual features against
        # the noiseless class images must be nearly perfect
        ds = generate(n=400, classes=10, noise=0.1, rng_seed=0)
        clean = generate(n=400, classes=10, noise=0.0, rng_seed=0)
        prototypes = np.stack([clean.v_feats[clean.v_class == c][0]
                               for c in range(10)])
        distances = ((ds.v_feats[:, None, :] - prototypes[None]) ** 2).sum(axis=2)
        predicted = distances.argmin(axis=1)
        assert (predicted == ds.v_class).mean() > 0.95

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            generate(n=3, classes=5, noise=0.1, rng_seed=0)
        with pytest.raises(ValueError):
            generate(n=10, classes=2, noise=-0.1, rng_seed=0)


class TestCorrupt:
    def test_zero_rate_is_identity(self):
        ds = generate(n=30, classes=3, noise=0.1, rng_seed=2)
        out = corrupt(ds, mrate=0.0, rng_seed=0)
        np.testing.assert_array_equal(out.t_feats, ds.t_feats)
        assert np.all(out.matched == 1)

    def test_exact_count_permuted_by_derangement(self):
        ds = generate(n=100, classes=10, noise=0.1, rng_seed=3)
        out = corrupt(ds, mrate=0.5, rng_seed=0)
        moved = np.flatnonzero((out.t_feats != ds.t_feats).any(axis=1))
        assert moved.size == 50

    def test_caption_rows_are_permuted_not_resampled(self):
        ds = generate(n=60, classes=6, noise=0.2, rng_seed=4)
        out = corrupt(ds, mrate=0.4, rng_seed=1)
        original = {tuple(row) for row in ds.t_feats}
        permuted = {tuple(row) for row in out.t_feats}
        assert original == permuted

    def test_mismatch_flags_track_class_changes(self):
        ds = generate(n=200, classes=10, noise=0.1, rng_seed=5)
        out = corrupt(ds, mrate=0.4, rng_seed=2)
        np.testing.assert_array_equal(out.matched,
                                      (out.v_class == out.t_class).astype(np.int8))
        # fraction of broken pairs tracks the rate up to same-class collisions
        collisions = 80 - (out.matched == 0).sum()
        assert 0 <= collisions < 80
        assert abs((out.matched == 0).mean() - 0.4) <= collisions / 200 + 1e-12

    def test_subset_of_one_is_widened(self):
        ds = generate(n=10, classes=2, noise=0.1, rng_seed=6)
        out = corrupt(ds, mrate=0.1, rng_seed=0)
        moved = np.flatnonzero((out.t_feats != ds.t_feats).any(axis=1))
        assert moved.size == 2

    def test_invalid_rate_rejected(self):
        ds = generate(n=10, classes=2, noise=0.1, rng_seed=0)
        with pytest.raises(ValueError):
            corrupt(ds, mrate=1.0, rng_seed=0)


class TestMakeBenchmark:
    def test_test_split_is_clean(self):
        ds = make_benchmark(n=200, classes=10, noise=0.1, mrate=0.6, rng_seed=0)
        assert ds.test_indices.size == 40
        assert np.all(ds.matched[ds.test_indices] == 1)
        assert np.all(ds.v_class[ds.test_indices] == ds.t_class[ds.test_indices])

    def test_pool_is_corrupted_at_rate(self):
        ds = make_benchmark(n=500, classes=10, noise=0.1, mrate=0.4, rng_seed=0)
        pool = ds.pool_indices
        broken = (ds.matched[pool] == 0).mean()
        assert 0.3 < broken <= 0.4

    def test_deterministic(self):
        a = make_benchmark(n=100, classes=5, noise=0.1, mrate=0.3, rng_seed=9)
        b = make_benchmark(n=100, classes=5, noise=0.1, mrate=0.3, rng_seed=9)
        np.testing.assert_array_equal(a.t_feats, b.t_feats)
        np.testing.assert_array_equal(a.split, b.split)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds = make_benchmark(n=50, classes=5, noise=0.2, mrate=0.4, rng_seed=11)
        path = tmp_path / "pairs.jsonl"
        save_dataset(ds, str(path))
        back = load_dataset(str(path))
        np.testing.assert_allclose(back.v_feats, ds.v_feats)
        np.testing.assert_allclose(back.t_feats, ds.t_feats)
        np.testing.assert_array_equal(back.matched, ds.matched)
        np.testing.assert_array_equal(back.split, ds.split)
        assert back.mrate == ds.mrate and back.seed == ds.seed

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "other.jsonl"
        path.write_text('{"kind": "something-else"}\n')
        with pytest.raises(ValueError, match="paired-features"):
            load_dataset(str(path))


def brute_force_recall(s, ks):
    n = s.shape[0]
    out = {}
    for k in ks:
        hits_i2t = hits_t2i = 0
        for i in range(n):
            better = sum(1 for j in range(n)
                         if s[i, j] > s[i, i] or (s[i, j] == s[i, i] and j < i))
            hits_i2t += better < k
            better = sum(1 for j in range(n)
                         if s[j, i] > s[i, i] or (s[j, i] == s[i, i] and j < i))
            hits_t2i += better < k
        out[f"r{k}_i2t"] = 100.0 * hits_i2t / n
        out[f"r{k}_t2i"] = 100.0 * hits_t2i / n
    return out


class TestRecallAtK:
    def test_dominant_diagonal_is_perfect(self):
        s = np.full((20, 20), 0.1)
        np.fill_diagonal(s, 0.9)
        metrics = recall_at_k(s)
        assert metrics["r1_i2t"] == 100.0
        assert metrics["rsum"] == 600.0

    def test_constant_matrix_matches_tie_break_oracle(self):
        s = np.zeros((10, 10))
        metrics = recall_at_k(s)
        expected = brute_force_recall(s, (1, 5, 10))
        for key, value in expected.items():
            assert metrics[key] == pytest.approx(value)

    def test_random_matrix_matches_naive_oracle(self):
        rng = np.random.default_rng(13)
        s = rng.uniform(-1, 1, (50, 50))
        metrics = recall_at_k(s)
        expected = brute_force_recall(s, (1, 5, 10))
        for key, value in expected.items():
            assert metrics[key] == pytest.approx(value)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(14)
        s = rng.uniform(-1, 1, (30, 30))
        a = recall_at_k(s)
        b = recall_at_k(np.tanh(3 * s) + 2)
        assert a == b

    def test_oversized_k_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k(np.zeros((4, 4)), k_list=(1, 5))


class TestIdentificationScore:
    def test_exact_prediction(self):
        flags = np.array([1, 0, 1, 0])
        score = identification_score([1, 3], flags)
        assert score["f1"] == 1.0

    def test_empty_prediction_has_zero_recall(self):
        flags = np.array([1, 0, 1])
        score = identification_score([], flags)
        assert score["recall"] == 0.0
        assert score["f1"] == 0.0

    def test_half_overlap_matches_enumeration(self):
        flags = np.array([0, 0, 1, 1])
        score = identification_score([0, 2], flags)
        # tp=1 fp=1 fn=1 -> precision=recall=f1=0.5
        assert score["precision"] == 0.5
        assert score["recall"] == 0.5
        assert score["f1"] == pytest.approx(0.5)
