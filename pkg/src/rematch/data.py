"""Synthetic paired-feature datasets with controlled caption corruption,
plus retrieval and identification scoring.

Each item carries a visual and a text feature row generated from a shared
class prototype, so genuinely paired rows agree semantically while rows of
different classes do not. Corruption permutes the captions of a selected
subset, mimicking harvested datasets whose pairings are partially wrong.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "PairDataset",
    "generate",
    "corrupt",
    "make_benchmark",
    "save_dataset",
    "load_dataset",
    "recall_at_k",
    "identification_score",
]

SPLIT_POOL = 0
SPLIT_TEST = 1

_FORMAT_KIND = "paired-features"
_FORMAT_VERSION = 1


@dataclass
class PairDataset:
    """Indexed visual/text pairs with hidden ground-truth match flags.

    ``matched`` is 1 where image and caption share a semantic class and 0
    where corruption broke the pair. ``v_class``/``t_class`` are generator
    bookkeeping (the caption class travels with the caption when captions
    are permuted). ``split`` marks evaluation rows held out before
    corruption.
    """

    v_feats: np.ndarray
    t_feats: np.ndarray
    matched: np.ndarray
    v_class: np.ndarray
    t_class: np.ndarray
    mrate: float = 0.0
    seed: int = 0
    noise: float = 0.0
    classes: int = 0
    latent_dim: int = 0
    split: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.split is None:
            self.split = np.zeros(len(self), dtype=np.int8)

    def __len__(self) -> int:
        return self.v_feats.shape[0]

    def subset(self, indices) -> "PairDataset":
        indices = np.asarray(indices)
        return replace(
            self,
            v_feats=self.v_feats[indices],
            t_feats=self.t_feats[indices],
            matched=self.matched[indices],
            v_class=self.v_class[indices],
            t_class=self.t_class[indices],
            split=self.split[indices],
        )

    @property
    def pool_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_POOL)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_TEST)


def generate(n: int, classes: int, noise: float, rng_seed: int,
             d_in_v: int = 32, d_in_t: int = 32, latent_dim: int = 8) -> PairDataset:
    """Draw ``n`` clean pairs from ``classes`` latent prototypes.

    Both modalities are fixed random linear images of the item's class
    prototype plus isotropic Gaussian noise; all pairs start matched.
    Deterministic per seed.
    """
    if not n >= classes >= 2:
        raise ValueError("need n >= classes >= 2")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    prototypes = rng.normal(size=(classes, latent_dim))
    map_v = rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(latent_dim, d_in_v))
    map_t = rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(latent_dim, d_in_t))
    labels = rng.integers(0, classes, size=n)
    latent = prototypes[labels]
    v_feats = latent @ map_v + noise * rng.normal(size=(n, d_in_v))
    t_feats = latent @ map_t + noise * rng.normal(size=(n, d_in_t))
    return PairDataset(
        v_feats=v_feats,
        t_feats=t_feats,
        matched=np.ones(n, dtype=np.int8),
        v_class=labels.astype(np.int64),
        t_class=labels.astype(np.int64),
        mrate=0.0,
        seed=rng_seed,
        noise=noise,
        classes=classes,
        latent_dim=latent_dim,
    )


def _derangement(size: int, rng) -> np.ndarray:
    """Uniform random permutation without fixed points (rejection sampled)."""
    while True:
        perm = rng.permutation(size)
        if not np.any(perm == np.arange(size)):
            return perm


def corrupt(ds: PairDataset, mrate: float, rng_seed: int) -> PairDataset:
    """Permute the captions of a random ``round(mrate * n)`` subset.

    The permutation is a derangement within the subset, so every selected
    caption actually moves. A pair keeps ``matched = 1`` only if its new
    caption happens to share the image's class; everything else is labeled
    0. A forced subset of one is widened to two, the smallest that admits a
    derangement.
    """
    if not 0 <= mrate < 1:
        raise ValueError("mrate must lie in [0, 1)")
    if mrate == 0:
        return replace(ds, mrate=0.0)
    n = len(ds)
    rng = np.random.default_rng(rng_seed)
    count = int(round(mrate * n))
    if count == 1:
        count = 2
    if count == 0:
        return replace(ds, mrate=mrate)
    selected = np.sort(rng.choice(n, size=count, replace=False))
    perm = _derangement(count, rng)
    t_feats = ds.t_feats.copy()
    t_class = ds.t_class.copy()
    t_feats[selected] = ds.t_feats[selected[perm]]
    t_class[selected] = ds.t_class[selected[perm]]
    matched = (ds.v_class == t_class).astype(np.int8)
    return replace(ds, t_feats=t_feats, t_class=t_class, matched=matched,
                   mrate=mrate)


def make_benchmark(n: int, classes: int, noise: float, mrate: float,
                   rng_seed: int, test_frac: float = 0.2, **gen_kwargs) -> PairDataset:
    """Generate, hold out a clean test split, and corrupt the rest.

    The test split (``test_frac`` of items) is selected before corruption
    and never touched, so evaluation always runs on clean pairs.
    """
    if not 0 <= test_frac < 1:
        raise ValueError("test_frac must lie in [0, 1)")
    ds = generate(n, classes, noise, rng_seed, **gen_kwargs)
    rng = np.random.default_rng((rng_seed, 0x7e57))
    n_test = int(round(test_frac * n))
    test_idx = rng.choice(n, size=n_test, replace=False)
    split = np.zeros(n, dtype=np.int8)
    split[test_idx] = SPLIT_TEST
    ds = replace(ds, split=split)

    pool_idx = np.flatnonzero(split == SPLIT_POOL)
    corrupted_pool = corrupt(ds.subset(pool_idx), mrate, rng_seed=rng_seed + 1)
    t_feats = ds.t_feats.copy()
    t_class = ds.t_class.copy()
    matched = ds.matched.copy()
    t_feats[pool_idx] = corrupted_pool.t_feats
    t_class[pool_idx] = corrupted_pool.t_class
    matched[pool_idx] = corrupted_pool.matched
    return replace(ds, t_feats=t_feats, t_class=t_class, matched=matched,
                   mrate=mrate)


def save_dataset(ds: PairDataset, path: str) -> None:
    """Write the dataset as JSON lines: one header record, one record per pair.

    Record fields: ``index, v_feat, t_feat, m, class, t_class, split``.
    The write is atomic (temp file then rename).
    """
    header = {
        "kind": _FORMAT_KIND,
        "version": _FORMAT_VERSION,
        "n": len(ds),
        "d_in_v": int(ds.v_feats.shape[1]),
        "d_in_t": int(ds.t_feats.shape[1]),
        "classes": int(ds.classes),
        "noise": float(ds.noise),
        "mrate": float(ds.mrate),
        "seed": int(ds.seed),
        "latent_dim": int(ds.latent_dim),
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(json.dumps(header) + "\n")
            for i in range(len(ds)):
                record = {
                    "index": i,
                    "v_feat": ds.v_feats[i].tolist(),
                    "t_feat": ds.t_feats[i].tolist(),
                    "m": int(ds.matched[i]),
                    "class": int(ds.v_class[i]),
                    "t_class": int(ds.t_class[i]),
                    "split": int(ds.split[i]),
                }
                handle.write(json.dumps(record) + "\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_dataset(path: str) -> PairDataset:
    """Read a dataset written by :func:`save_dataset`."""
    with open(path) as handle:
        header = json.loads(handle.readline())
        if header.get("kind") != _FORMAT_KIND:
            raise ValueError(f"{path}: not a {_FORMAT_KIND} file")
        if header.get("version") != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version "
                             f"{header.get('version')}")
        n = header["n"]
        v_feats = np.empty((n, header["d_in_v"]))
        t_feats = np.empty((n, header["d_in_t"]))
        matched = np.empty(n, dtype=np.int8)
        v_class = np.empty(n, dtype=np.int64)
        t_class = np.empty(n, dtype=np.int64)
        split = np.empty(n, dtype=np.int8)
        for line in handle:
            record = json.loads(line)
            i = record["index"]
            v_feats[i] = record["v_feat"]
            t_feats[i] = record["t_feat"]
            matched[i] = record["m"]
            v_class[i] = record["class"]
            t_class[i] = record["t_class"]
            split[i] = record["split"]
    return PairDataset(
        v_feats=v_feats, t_feats=t_feats, matched=matched,
        v_class=v_class, t_class=t_class, mrate=header["mrate"],
        seed=header["seed"], noise=header["noise"], classes=header["classes"],
        latent_dim=header["latent_dim"], split=split,
    )


def recall_at_k(s, k_list=(1, 5, 10), ground_truth=None) -> dict:
    """Recall@K in both directions over a one-to-one square similarity.

    Ties rank the lower index first. Values are percentages; ``rsum`` adds
    all six direction/cutoff combinations.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("expected a square similarity matrix")
    n = s.shape[0]
    if max(k_list) > n:
        raise ValueError(f"k={max(k_list)} exceeds split size {n}")
    if ground_truth is None:
        ground_truth = np.arange(n)
    ground_truth = np.asarray(ground_truth)

    def ranks(matrix, truth):
        order = np.argsort(-matrix, axis=1, kind="stable")
        hit = order == truth[:, None]
        return hit.argmax(axis=1)

    rank_i2t = ranks(s, ground_truth)
    inverse = np.empty(n, dtype=np.int64)
    inverse[ground_truth] = np.arange(n)
    rank_t2i = ranks(s.T, inverse)

    metrics = {}
    for k in k_list:
        metrics[f"r{k}_i2t"] = float(100.0 * (rank_i2t < k).mean())
        metrics[f"r{k}_t2i"] = float(100.0 * (rank_t2i < k).mean())
    metrics["rsum"] = float(sum(metrics[f"r{k}_{d}"] for k in k_list
                                for d in ("i2t", "t2i")))
    return metrics


def identification_score(predicted_mismatched, matched_flags) -> dict:
    """Precision/recall/F1 of a mismatch prediction, mismatched = positive."""
    matched_flags = np.asarray(matched_flags)
    predicted = np.zeros(matched_flags.shape[0], dtype=bool)
    predicted[np.asarray(predicted_mismatched, dtype=np.int64)] = True
    actual = matched_flags == 0
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "true_positive": tp, "false_positive": fp, "false_negative": fn}
