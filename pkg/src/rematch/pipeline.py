"""End-to-end training loop for retrieval under partially mismatched pairs.

One run: warm up the encoders on all data with an overconfidence-resistant
loss, then per epoch (a) split the data into matched/mismatched subsets by
mixture-modeling per-pair losses, (b) per step teach the cost map on rebuilt
batches, rematch a mismatched batch through masked partial transport, and
update the encoders on the combined objective, (c) track validation recall
and keep the best checkpoint.

Three modes share the machinery:

* ``rematch`` - the full loop above;
* ``naive``   - plain triplet training on all data, no identification;
* ``discard`` - identification as above, triplet training on the matched
  subset only.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import costs as costs_mod
from . import encoder as enc
from .data import PairDataset, identification_score, recall_at_k
from .losses import (
    per_pair_triplet_losses,
    rematch_loss,
    triplet_loss_batch,
    warmup_loss,
)
from .mixture import BetaMixture, fit_bmm, mismatch_probabilities, partition
from .transport import SinkhornConfig, normalize_plan, partial_ot

__all__ = ["TrainConfig", "RunState", "init_state", "warmup", "per_sample_losses",
           "train_epoch", "train_naive_epoch", "evaluate", "run_experiment",
           "save_state", "load_state", "random_ranking_rsum"]

_STATE_VERSION = 1

MODES = ("rematch", "naive", "discard")
COST_MODES = ("learned", "cosine")
REMATCH_VARIANTS = ("sym_kl", "kl", "ce")
OPTIMIZERS = ("sgd", "adam")

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run. Every field is overridable."""

    warmup_epochs: int = 5
    train_epochs: int = 35
    lr_decay_epoch: int = 15
    batch_size: int = 128
    alpha: float = 0.2            # triplet margin
    tau: float = 0.05             # softmax temperature
    eps: float = 1e-7             # label bound in the reversed cross-entropy
    rho: float = 0.1              # transported mass budget
    lam: float = 0.01             # entropic regularization of the transport solve
    gamma: float = 0.1            # label-smoothing weight (analysis only)
    reserve_ratio: float = 0.5    # kept-match fraction in rebuilt batches
    threshold: float = 0.5        # mismatch posterior split point
    lr_model: float = 2e-4
    lr_cost: float = 2e-6
    seed: int = 0
    embed_dim: int = 16
    rce_weight: float = 1.0       # weight of the reversed term during warm-up
    mode: str = "rematch"
    cost_mode: str = "learned"    # "cosine" swaps in 1 - s
    mask_positives: bool = True
    partial: bool = True          # False transports the full mass budget
    rematch_variant: str = "sym_kl"
    em_iters: int = 30
    em_tol: float = 1e-6
    ot_tol: float = 1e-6
    ot_max_iter: int = 3000
    val_frac: float = 0.1
    cost_bound: float = 50.0
    optimizer: str = "sgd"        # "adam" normalizes the per-term gradient scales

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cost_mode not in COST_MODES:
            raise ValueError(f"cost_mode must be one of {COST_MODES}")
        if self.rematch_variant not in REMATCH_VARIANTS:
            raise ValueError(f"rematch_variant must be one of {REMATCH_VARIANTS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + self.train_epochs


@dataclass
class AdamState:
    """First/second moment accumulators for both projection matrices."""

    m_v: np.ndarray
    v_v: np.ndarray
    m_t: np.ndarray
    v_t: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, params: enc.EncoderParams) -> "AdamState":
        return cls(np.zeros_like(params.w_v), np.zeros_like(params.w_v),
                   np.zeros_like(params.w_t), np.zeros_like(params.w_t))


@dataclass
class RunState:
    """Everything the loop owns: parameters, counters, and the RNG stream."""

    params: enc.EncoderParams
    theta: costs_mod.CostNetParams
    epoch: int
    rng: np.random.Generator
    bmm: BetaMixture | None = None
    history: list = field(default_factory=list)
    best_rsum: float = -1.0
    best_epoch: int = -1
    best_params: enc.EncoderParams | None = None
    clip_events: int = 0
    adam: AdamState | None = None


def init_state(cfg: TrainConfig, ds: PairDataset) -> RunState:
    rng = np.random.default_rng(cfg.seed)
    params = enc.init_params(ds.v_feats.shape[1], ds.t_feats.shape[1],
                             cfg.embed_dim, rng)
    state = RunState(params=params, theta=costs_mod.CostNetParams(),
                     epoch=0, rng=rng)
    if cfg.optimizer == "adam":
        state.adam = AdamState.like(params)
    return state


def _adam_update(moment, second, grad, step):
    moment *= _ADAM_BETA1
    moment += (1 - _ADAM_BETA1) * grad
    second *= _ADAM_BETA2
    second += (1 - _ADAM_BETA2) * grad * grad
    m_hat = moment / (1 - _ADAM_BETA1 ** step)
    v_hat = second / (1 - _ADAM_BETA2 ** step)
    return m_hat / (np.sqrt(v_hat) + _ADAM_EPS)


def _apply_update(state: RunState, cfg: TrainConfig, grad_w_v, grad_w_t,
                  lr: float) -> None:
    """One optimizer step on the encoder parameters."""
    if cfg.optimizer == "sgd":
        state.params = enc.sgd_step(state.params, grad_w_v, grad_w_t, lr)
        return
    if not (np.all(np.isfinite(grad_w_v)) and np.all(np.isfinite(grad_w_t))):
        raise FloatingPointError("non-finite gradient in the encoder update")
    adam = state.adam
    adam.step += 1
    delta_v = _adam_update(adam.m_v, adam.v_v, grad_w_v, adam.step)
    delta_t = _adam_update(adam.m_t, adam.v_t, grad_w_t, adam.step)
    state.params = enc.EncoderParams(state.params.w_v - lr * delta_v,
                                     state.params.w_t - lr * delta_t)


def split_indices(cfg: TrainConfig, ds: PairDataset):
    """Carve validation rows out of the corrupted pool, deterministically."""
    pool = ds.pool_indices
    val_rng = np.random.default_rng((cfg.seed, 0x5A11))
    n_val = int(round(cfg.val_frac * pool.size))
    val = np.sort(val_rng.choice(pool, size=n_val, replace=False))
    train = np.setdiff1d(pool, val)
    return train, val, ds.test_indices


def current_lr(cfg: TrainConfig, epoch_number: int) -> float:
    """Model learning rate for a 1-based epoch number."""
    return cfg.lr_model * (0.1 if epoch_number >= cfg.lr_decay_epoch else 1.0)


def _batches(indices: np.ndarray, batch_size: int, rng) -> list:
    """Shuffled batches; a trailing singleton is folded into its neighbor."""
    order = rng.permutation(indices)
    chunks = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def warmup(state: RunState, ds: PairDataset, cfg: TrainConfig,
           train_idx: np.ndarray) -> RunState:
    """Full-data epochs on the InfoNCE + reversed-cross-entropy objective."""
    for _ in range(cfg.warmup_epochs):
        epoch_number = state.epoch + 1
        lr = current_lr(cfg, epoch_number)
        total, count = 0.0, 0
        for batch in _batches(train_idx, cfg.batch_size, state.rng):
            if batch.size < 2:
                continue
            s, cache = enc.similarity(state.params, ds.v_feats[batch],
                                      ds.t_feats[batch])
            value, grad_s = warmup_loss(s, cfg.tau, cfg.eps, cfg.rce_weight)
            grads = enc.similarity_backward(cache, grad_s)
            _apply_update(state, cfg, *grads, lr=lr)
            total += value
            count += 1
        state.epoch = epoch_number
        state.history.append({
            "epoch": state.epoch,
            "phase": "warmup",
            "train_loss": total / max(count, 1),
            "lr": lr,
        })
    return state


def per_sample_losses(state: RunState, ds: PairDataset, cfg: TrainConfig,
                      train_idx: np.ndarray) -> np.ndarray:
    """Triplet loss of every training pair, mined within fixed-seed batches.

    Returned in the order of ``train_idx``. The batching seed depends only
    on the run seed and the current epoch, so identification is reproducible
    no matter how the caller shuffled the data.
    """
    eval_rng = np.random.default_rng((cfg.seed, state.epoch, 0xE7A1))
    losses = np.zeros(train_idx.size)
    position = {int(idx): i for i, idx in enumerate(train_idx)}
    for batch in _batches(train_idx, cfg.batch_size, eval_rng):
        if batch.size < 2:
            continue
        s, _ = enc.similarity(state.params, ds.v_feats[batch], ds.t_feats[batch])
        batch_losses = per_pair_triplet_losses(s, cfg.alpha)
        for idx, value in zip(batch, batch_losses):
            losses[position[int(idx)]] = value
    return losses


def _identify(state: RunState, ds: PairDataset, cfg: TrainConfig,
              train_idx: np.ndarray):
    """Fit the loss mixture and split training rows by mismatch posterior."""
    losses = per_sample_losses(state, ds, cfg, train_idx)
    bmm = fit_bmm(losses, em_iters=cfg.em_iters, tol=cfg.em_tol,
                  rng_seed=cfg.seed)
    posteriors = mismatch_probabilities(bmm, losses)
    matched_pos, mismatched_pos = partition(posteriors, cfg.threshold)
    state.bmm = bmm
    return train_idx[matched_pos], train_idx[mismatched_pos], bmm


def _sample(rng, indices: np.ndarray, size: int) -> np.ndarray:
    take = min(size, indices.size)
    return rng.choice(indices, size=take, replace=False)


def _pair_costs(state: RunState, ds: PairDataset, cfg: TrainConfig,
                indices: np.ndarray) -> np.ndarray:
    """Learned transport cost of each pair with itself (diagonal cells)."""
    s_diag = _diagonal_similarities(state.params, ds, indices)
    if cfg.cost_mode == "cosine":
        return 1.0 - s_diag
    return costs_mod.cost_forward(s_diag, state.theta)


def _diagonal_similarities(params, ds, indices):
    s, _ = enc.similarity(params, ds.v_feats[indices], ds.t_feats[indices])
    return np.diag(s).copy()


def _cost_gap(state: RunState, ds: PairDataset, cfg: TrainConfig,
              train_idx: np.ndarray) -> dict:
    pair_costs = _pair_costs(state, ds, cfg, train_idx)
    flags = ds.matched[train_idx]
    mean_matched = float(pair_costs[flags == 1].mean()) if (flags == 1).any() else 0.0
    mean_mismatched = float(pair_costs[flags == 0].mean()) if (flags == 0).any() else 0.0
    return {
        "mean_matched": mean_matched,
        "mean_mismatched": mean_mismatched,
        "gap": mean_mismatched - mean_matched,
    }


def _transport_mask(n: int, cfg: TrainConfig) -> np.ndarray:
    mask = np.ones((n, n), dtype=int)
    if cfg.mask_positives:
        np.fill_diagonal(mask, 0)
    return mask


def refine_batch(state: RunState, s_mis: np.ndarray, cfg: TrainConfig):
    """Masked partial transport over a mismatched batch's learned costs.

    Returns row- and column-normalized refined alignments.
    """
    n = s_mis.shape[0]
    if cfg.cost_mode == "cosine":
        cost = 1.0 - s_mis
    else:
        cost = costs_mod.cost_forward(s_mis, state.theta)
    mask = _transport_mask(n, cfg)
    marginal = np.full(n, 1.0 / n)
    rho = cfg.rho if cfg.partial else 1.0
    plan = partial_ot(cost, marginal, marginal, mask, rho=rho,
                      cfg=SinkhornConfig(lam=cfg.lam, max_iter=cfg.ot_max_iter,
                                         tol=cfg.ot_tol))
    refined_v2t = normalize_plan(plan.plan, "row", mask=mask)
    refined_t2v = normalize_plan(plan.plan, "column", mask=mask)
    return refined_v2t, refined_t2v, plan


def train_epoch(state: RunState, ds: PairDataset, cfg: TrainConfig,
                train_idx: np.ndarray) -> RunState:
    """One identification + rematching epoch (modes ``rematch``/``discard``)."""
    epoch_number = state.epoch + 1
    lr = current_lr(cfg, epoch_number)
    matched_idx, mismatched_idx, bmm = _identify(state, ds, cfg, train_idx)
    ident = identification_score(_positions(train_idx, mismatched_idx),
                                 ds.matched[train_idx])

    driver = matched_idx if matched_idx.size else train_idx
    steps = int(np.ceil(driver.size / cfg.batch_size))
    do_rematch = cfg.mode == "rematch" and mismatched_idx.size >= 2
    total, count = 0.0, 0
    for _ in range(steps):
        if cfg.mode == "rematch" and cfg.cost_mode == "learned":
            batch = _sample(state.rng, matched_idx, cfg.batch_size)
            if batch.size >= 2:
                state.theta, clipped = _cost_update(state, ds, cfg, batch,
                                                    mismatched_idx)
                state.clip_events += int(clipped)

        rematch_grads = None
        rematch_value = 0.0
        if do_rematch:
            mis_batch = _sample(state.rng, mismatched_idx, cfg.batch_size)
            s_mis, cache_mis = enc.similarity(state.params, ds.v_feats[mis_batch],
                                              ds.t_feats[mis_batch])
            refined_v2t, refined_t2v, _ = refine_batch(state, s_mis, cfg)
            rematch_value, grad_s = rematch_loss(refined_v2t, refined_t2v, s_mis,
                                                 cfg.tau, cfg.rematch_variant)
            rematch_grads = enc.similarity_backward(cache_mis, grad_s)

        triplet_value = 0.0
        triplet_grads = None
        if matched_idx.size >= 2:
            main_batch = _sample(state.rng, matched_idx, cfg.batch_size)
            if main_batch.size >= 2:
                s_m, cache_m = enc.similarity(state.params, ds.v_feats[main_batch],
                                              ds.t_feats[main_batch])
                triplet_value, grad_s = triplet_loss_batch(s_m, cfg.alpha)
                triplet_grads = enc.similarity_backward(cache_m, grad_s)

        grad_w_v = np.zeros_like(state.params.w_v)
        grad_w_t = np.zeros_like(state.params.w_t)
        for grads in (triplet_grads, rematch_grads):
            if grads is not None:
                grad_w_v += grads[0]
                grad_w_t += grads[1]
        _apply_update(state, cfg, grad_w_v, grad_w_t, lr=lr)
        total += triplet_value + rematch_value
        count += 1

    state.epoch = epoch_number
    record = {
        "epoch": state.epoch,
        "phase": "train",
        "train_loss": total / max(count, 1),
        "lr": lr,
        "bmm": None if bmm.degenerate else {
            "alpha_lo": bmm.alpha_lo, "beta_lo": bmm.beta_lo,
            "alpha_hi": bmm.alpha_hi, "beta_hi": bmm.beta_hi,
            "weight_hi": bmm.weight_hi, "mean_lo": bmm.mean_lo,
            "mean_hi": bmm.mean_hi, "em_iterations": len(bmm.loglik_trace),
        },
        "partition": {"matched": int(matched_idx.size),
                      "mismatched": int(mismatched_idx.size)},
        "identification": ident,
        "cost_gap": _cost_gap(state, ds, cfg, train_idx),
        "cost_params": {"w": state.theta.w, "b": state.theta.b},
    }
    state.history.append(record)
    return state


def _positions(universe: np.ndarray, subset: np.ndarray) -> np.ndarray:
    lookup = {int(idx): i for i, idx in enumerate(universe)}
    return np.array([lookup[int(i)] for i in subset], dtype=np.int64)


def _cost_update(state: RunState, ds: PairDataset, cfg: TrainConfig,
                 matched_batch: np.ndarray, mismatched_idx: np.ndarray):
    """One supervised descent step on the cost map from a rebuilt batch."""
    n = matched_batch.size
    pool_size = mismatched_idx.size
    reserve_ratio = cfg.reserve_ratio
    needed = n - int(np.floor(reserve_ratio * n + 0.5))
    if needed > pool_size:
        # not enough mismatched images to substitute; reserve more slots
        reserve_ratio = (n - pool_size) / n
    pool = (ds.v_feats[mismatched_idx] if pool_size
            else np.empty((0, ds.v_feats.shape[1])))
    rebuilt = costs_mod.reconstruct_pairs(
        ds.v_feats[matched_batch], ds.t_feats[matched_batch], pool,
        reserve_ratio, state.rng)
    sims, _ = enc.similarity(state.params, rebuilt.v_feats, rebuilt.t_feats)
    return costs_mod.cost_net_step(state.theta, sims, rebuilt.pi_sup,
                                   cfg.lr_cost, cfg.cost_bound)


def train_naive_epoch(state: RunState, ds: PairDataset, cfg: TrainConfig,
                      train_idx: np.ndarray) -> RunState:
    """Triplet training over all data, ignoring corruption (mode ``naive``)."""
    epoch_number = state.epoch + 1
    lr = current_lr(cfg, epoch_number)
    total, count = 0.0, 0
    for batch in _batches(train_idx, cfg.batch_size, state.rng):
        if batch.size < 2:
            continue
        s, cache = enc.similarity(state.params, ds.v_feats[batch],
                                  ds.t_feats[batch])
        value, grad_s = triplet_loss_batch(s, cfg.alpha)
        grads = enc.similarity_backward(cache, grad_s)
        _apply_update(state, cfg, *grads, lr=lr)
        total += value
        count += 1
    state.epoch = epoch_number
    state.history.append({
        "epoch": state.epoch,
        "phase": "train",
        "train_loss": total / max(count, 1),
        "lr": lr,
    })
    return state


def evaluate(params: enc.EncoderParams, ds: PairDataset,
             indices: np.ndarray) -> dict:
    """Retrieval metrics over a one-to-one split."""
    s, _ = enc.similarity(params, ds.v_feats[indices], ds.t_feats[indices])
    return recall_at_k(s)


def random_ranking_rsum(n: int) -> float:
    """Expected recall sum of a uniformly random ranking."""
    return float(sum(2 * 100.0 * k / n for k in (1, 5, 10)))


def _track_best(state: RunState, val_metrics: dict):
    if val_metrics["rsum"] > state.best_rsum:
        state.best_rsum = val_metrics["rsum"]
        state.best_epoch = state.epoch
        state.best_params = state.params.copy()


def run_experiment(cfg: TrainConfig, ds: PairDataset,
                   return_state: bool = False):
    """Train per the configured mode and return the metrics payload.

    The payload echoes the config and the dataset header, carries one
    record per epoch, and reports final test metrics from the checkpoint
    with the highest validation recall sum. Wall-clock timing lives under
    the separate ``timing`` key so payloads stay comparable across runs.
    With ``return_state`` the final :class:`RunState` is returned alongside
    the payload.
    """
    started = time.time()
    train_idx, val_idx, test_idx = split_indices(cfg, ds)
    if min(train_idx.size, val_idx.size, test_idx.size) < 10:
        raise ValueError("splits too small; need at least 10 rows in each")
    state = init_state(cfg, ds)

    if cfg.mode == "naive":
        for _ in range(cfg.total_epochs):
            train_naive_epoch(state, ds, cfg, train_idx)
            state.history[-1]["val"] = evaluate(state.params, ds, val_idx)
            _track_best(state, state.history[-1]["val"])
    else:
        warmup(state, ds, cfg, train_idx)
        for record in state.history:
            record.setdefault("val", evaluate(state.params, ds, val_idx))
        if state.history:
            _track_best(state, state.history[-1]["val"])
        for _ in range(cfg.train_epochs):
            if cfg.mode == "discard":
                _discard_epoch(state, ds, cfg, train_idx)
            else:
                train_epoch(state, ds, cfg, train_idx)
            state.history[-1]["val"] = evaluate(state.params, ds, val_idx)
            _track_best(state, state.history[-1]["val"])

    best_params = state.best_params if state.best_params is not None else state.params
    payload = {
        "schema": "run-metrics/1",
        "mode": cfg.mode,
        "config": asdict(cfg),
        "dataset": {
            "n": len(ds), "classes": int(ds.classes), "noise": float(ds.noise),
            "mrate": float(ds.mrate), "seed": int(ds.seed),
            "d_in_v": int(ds.v_feats.shape[1]), "d_in_t": int(ds.t_feats.shape[1]),
            "latent_dim": int(ds.latent_dim),
        },
        "splits": {"train": int(train_idx.size), "val": int(val_idx.size),
                   "test": int(test_idx.size)},
        "epochs": state.history,
        "best": {"epoch": state.best_epoch, "val_rsum": state.best_rsum},
        "test": evaluate(best_params, ds, test_idx),
        "random_baseline_rsum": random_ranking_rsum(test_idx.size),
        "cost_clip_events": state.clip_events,
        "timing": {"seconds": time.time() - started},
    }
    if return_state:
        return payload, state
    return payload


def _discard_epoch(state: RunState, ds: PairDataset, cfg: TrainConfig,
                   train_idx: np.ndarray) -> RunState:
    """Identification followed by triplet training on the matched subset only."""
    epoch_number = state.epoch + 1
    lr = current_lr(cfg, epoch_number)
    matched_idx, mismatched_idx, bmm = _identify(state, ds, cfg, train_idx)
    ident = identification_score(_positions(train_idx, mismatched_idx),
                                 ds.matched[train_idx])
    total, count = 0.0, 0
    if matched_idx.size >= 2:
        for batch in _batches(matched_idx, cfg.batch_size, state.rng):
            if batch.size < 2:
                continue
            s, cache = enc.similarity(state.params, ds.v_feats[batch],
                                      ds.t_feats[batch])
            value, grad_s = triplet_loss_batch(s, cfg.alpha)
            grads = enc.similarity_backward(cache, grad_s)
            _apply_update(state, cfg, *grads, lr=lr)
            total += value
            count += 1
    state.epoch = epoch_number
    state.history.append({
        "epoch": state.epoch,
        "phase": "train",
        "train_loss": total / max(count, 1),
        "lr": lr,
        "partition": {"matched": int(matched_idx.size),
                      "mismatched": int(mismatched_idx.size)},
        "identification": ident,
    })
    return state


def save_state(state: RunState, cfg: TrainConfig, path: str) -> None:
    """Checkpoint the run as a compressed array archive (atomic write)."""
    payload = {
        "version": np.int64(_STATE_VERSION),
        "w_v": state.params.w_v,
        "w_t": state.params.w_t,
        "cost_w": np.float64(state.theta.w),
        "cost_b": np.float64(state.theta.b),
        "epoch": np.int64(state.epoch),
        "best_rsum": np.float64(state.best_rsum),
        "best_epoch": np.int64(state.best_epoch),
        "clip_events": np.int64(state.clip_events),
        "rng_state": np.array(json.dumps(state.rng.bit_generator.state)),
        "history": np.array(json.dumps(state.history)),
        "config": np.array(json.dumps(asdict(cfg))),
    }
    if state.best_params is not None:
        payload["best_w_v"] = state.best_params.w_v
        payload["best_w_t"] = state.best_params.w_t
    if state.adam is not None:
        payload["adam_m_v"] = state.adam.m_v
        payload["adam_v_v"] = state.adam.v_v
        payload["adam_m_t"] = state.adam.m_t
        payload["adam_v_t"] = state.adam.v_t
        payload["adam_step"] = np.int64(state.adam.step)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            np.savez_compressed(handle, **payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_state(path: str):
    """Restore a checkpoint saved by :func:`save_state`.

    Returns ``(state, config)``; resuming training from the restored state
    reproduces the original run exactly.
    """
    with np.load(path, allow_pickle=False) as archive:
        if int(archive["version"]) != _STATE_VERSION:
            raise ValueError(f"unsupported checkpoint version {archive['version']}")
        cfg = TrainConfig(**json.loads(str(archive["config"][()])))
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(str(archive["rng_state"][()]))
        state = RunState(
            params=enc.EncoderParams(archive["w_v"].copy(), archive["w_t"].copy()),
            theta=costs_mod.CostNetParams(float(archive["cost_w"]),
                                          float(archive["cost_b"])),
            epoch=int(archive["epoch"]),
            rng=rng,
            history=json.loads(str(archive["history"][()])),
            best_rsum=float(archive["best_rsum"]),
            best_epoch=int(archive["best_epoch"]),
            clip_events=int(archive["clip_events"]),
        )
        if "best_w_v" in archive:
            state.best_params = enc.EncoderParams(archive["best_w_v"].copy(),
                                                  archive["best_w_t"].copy())
        if "adam_m_v" in archive:
            state.adam = AdamState(archive["adam_m_v"].copy(),
                                   archive["adam_v_v"].copy(),
                                   archive["adam_m_t"].copy(),
                                   archive["adam_v_t"].copy(),
                                   int(archive["adam_step"]))
    return state, cfg
