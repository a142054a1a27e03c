"""Self-supervised transport-cost learner.

An elementwise affine-plus-softplus map turns a similarity matrix into a
positive cost matrix. Supervision comes from deliberately rebuilt batches
in which the genuinely matching image positions are known, so minimizing
the total cost charged at those positions teaches the map that high
similarity should mean cheap transport.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CostNetParams",
    "ReconstructedBatch",
    "cost_forward",
    "cost_forward_with_grads",
    "reconstruct_pairs",
    "cost_net_step",
]

_PARAM_BOUND = 50.0


@dataclass(frozen=True)
class CostNetParams:
    """Slope and offset of the elementwise similarity-to-cost map."""

    w: float = -1.0
    b: float = 1.0


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cost_forward(s, theta: CostNetParams) -> np.ndarray:
    """Elementwise positive cost ``softplus(w * s + b)``."""
    s = np.asarray(s, dtype=np.float64)
    return _softplus(theta.w * s + theta.b)


def cost_forward_with_grads(s, theta: CostNetParams):
    """Cost matrix plus its elementwise parameter derivatives."""
    s = np.asarray(s, dtype=np.float64)
    pre = theta.w * s + theta.b
    sig = _sigmoid(pre)
    return _softplus(pre), sig * s, sig


@dataclass(frozen=True)
class ReconstructedBatch:
    """A rebuilt supervision batch.

    ``v_feats`` rows are a mix of reserved matching images (shuffled over
    batch positions) and substitutes drawn from the mismatched pool;
    ``t_feats`` keeps the original captions in place. ``pi_sup[i, j] = 1``
    iff the image now in row ``i`` is the true match of caption ``j``.
    """

    v_feats: np.ndarray
    t_feats: np.ndarray
    pi_sup: np.ndarray
    reserved: np.ndarray  # caption slots whose true image stayed in the batch


def reconstruct_pairs(v_matched, t_matched, v_pool, reserve_ratio: float,
                      rng) -> ReconstructedBatch:
    """Rebuild a matched batch with known supervision.

    A ``reserve_ratio`` fraction of caption slots (rounded half-up) keeps
    its true image; the rest get images sampled without replacement from
    ``v_pool``. All images are then dealt to random row positions, so the
    supervised cells land anywhere in the matrix, not just the diagonal.
    """
    v_matched = np.asarray(v_matched, dtype=np.float64)
    t_matched = np.asarray(t_matched, dtype=np.float64)
    v_pool = np.asarray(v_pool, dtype=np.float64)
    n = v_matched.shape[0]
    if t_matched.shape[0] != n:
        raise ValueError("visual and text batches must have equal length")
    if not 0 < reserve_ratio <= 1:
        raise ValueError("reserve_ratio must lie in (0, 1]")
    rng = np.random.default_rng(rng)

    n_reserved = int(np.floor(reserve_ratio * n + 0.5))
    n_substituted = n - n_reserved
    if v_pool.shape[0] < n_substituted:
        raise ValueError(
            f"mismatch pool has {v_pool.shape[0]} images but "
            f"{n_substituted} substitutions are needed"
        )

    slots = rng.permutation(n)
    reserved = np.sort(slots[:n_reserved])
    substituted = slots[n_reserved:]
    images = np.empty_like(v_matched)
    owners = np.full(n, -1, dtype=np.int64)  # caption slot each image row matches
    positions = rng.permutation(n)
    for pos, slot in zip(positions[:n_reserved], reserved):
        images[pos] = v_matched[slot]
        owners[pos] = slot
    pool_pick = rng.choice(v_pool.shape[0], size=n_substituted, replace=False)
    for pos, pick in zip(positions[n_reserved:], pool_pick):
        images[pos] = v_pool[pick]

    pi_sup = np.zeros((n, n))
    rows = np.flatnonzero(owners >= 0)
    pi_sup[rows, owners[rows]] = 1.0
    return ReconstructedBatch(images, t_matched.copy(), pi_sup, reserved)


def cost_net_step(theta: CostNetParams, sims, pi_sup, lr: float,
                  bound: float = _PARAM_BOUND):
    """One descent step on the supervised transport cost.

    Gradient flows only through cells where ``pi_sup`` is 1; with no
    supervised cells the parameters are returned unchanged. Parameters are
    clamped into ``[-bound, bound]``; the returned flag reports whether the
    clamp engaged.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    sims = np.asarray(sims, dtype=np.float64)
    pi_sup = np.asarray(pi_sup, dtype=np.float64)
    if sims.shape != pi_sup.shape:
        raise ValueError("similarity and supervision shapes disagree")
    _, dw_cells, db_cells = cost_forward_with_grads(sims, theta)
    grad_w = float((pi_sup * dw_cells).sum())
    grad_b = float((pi_sup * db_cells).sum())
    new_w = theta.w - lr * grad_w
    new_b = theta.b - lr * grad_b
    clipped = abs(new_w) > bound or abs(new_b) > bound
    new_w = float(np.clip(new_w, -bound, bound))
    new_b = float(np.clip(new_b, -bound, bound))
    return CostNetParams(new_w, new_b), clipped
