"""Scalar training losses over a batch similarity matrix, with gradients.

All functions take an ``(n, n)`` similarity matrix ``s`` with the matched
pair of slot ``i`` on the diagonal, and return ``(value, grad)`` where
``grad`` has the shape of ``s``. Row direction reads captions for a given
image; the column direction reads images for a given caption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "matching_probs",
    "triplet_loss",
    "per_pair_triplet_losses",
    "triplet_loss_batch",
    "infonce_loss",
    "rce_loss",
    "warmup_loss",
    "ot_supervision_loss",
    "sym_kl",
    "rematch_loss",
    "final_loss",
    "label_smooth",
]

_KL_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Shared loss hyperparameters."""

    alpha: float = 0.2      # triplet margin
    tau: float = 0.05       # softmax temperature
    eps: float = 1e-7       # label bound for the reversed cross-entropy
    gamma: float = 0.1      # smoothing weight for label_smooth

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")


def _as_square(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {s.shape}")
    return s


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _rows_backward(probs: np.ndarray, dloss_dprobs: np.ndarray, tau: float) -> np.ndarray:
    """Chain a per-row gradient in probability space through the row softmax."""
    inner = (dloss_dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dloss_dprobs - inner) / tau


def matching_probs(s, tau: float):
    """Row- and column-normalized matching probabilities.

    Returns ``(p_v2t, p_t2v)``: rows of ``p_v2t`` sum to one (captions
    scored per image), columns of ``p_t2v`` sum to one (images scored per
    caption). Computed with max-subtraction for stability.
    """
    s = _as_square(s)
    if tau <= 0:
        raise ValueError("tau must be positive")
    p_v2t = _softmax_rows(s / tau)
    p_t2v = _softmax_rows(s.T / tau).T
    return p_v2t, p_t2v


def triplet_loss(s, i: int, alpha: float):
    """Hinge loss of pair ``i`` against its hardest in-batch negatives.

    Value: ``[alpha - s_ii + max_{j!=i} s_ij]_+ + [alpha - s_ii + max_{j!=i} s_ji]_+``.
    The gradient touches only the diagonal cell and the two argmax cells;
    ties pick the first index.
    """
    s = _as_square(s)
    n = s.shape[0]
    if n < 2:
        raise ValueError("need at least two pairs for in-batch negatives")
    if not 0 <= i < n:
        raise IndexError(f"pair index {i} out of range for batch of {n}")
    row = s[i].copy()
    col = s[:, i].copy()
    row[i] = -np.inf
    col[i] = -np.inf
    j_star = int(np.argmax(row))
    h_star = int(np.argmax(col))
    term_row = alpha - s[i, i] + row[j_star]
    term_col = alpha - s[i, i] + col[h_star]
    value = max(term_row, 0.0) + max(term_col, 0.0)
    grad = np.zeros_like(s)
    if term_row > 0:
        grad[i, i] -= 1.0
        grad[i, j_star] += 1.0
    if term_col > 0:
        grad[i, i] -= 1.0
        grad[h_star, i] += 1.0
    return float(value), grad


def per_pair_triplet_losses(s, alpha: float) -> np.ndarray:
    """Vector of hinge losses, one per diagonal pair."""
    s = _as_square(s)
    n = s.shape[0]
    if n < 2:
        raise ValueError("need at least two pairs for in-batch negatives")
    off = s + np.where(np.eye(n, dtype=bool), -np.inf, 0.0)
    hardest_row = off.max(axis=1)
    hardest_col = off.max(axis=0)
    diag = np.diag(s)
    return (np.maximum(alpha - diag + hardest_row, 0.0)
            + np.maximum(alpha - diag + hardest_col, 0.0))


def triplet_loss_batch(s, alpha: float):
    """Sum of per-pair hinge losses with its gradient."""
    s = _as_square(s)
    n = s.shape[0]
    if n < 2:
        raise ValueError("need at least two pairs for in-batch negatives")
    off = s + np.where(np.eye(n, dtype=bool), -np.inf, 0.0)
    j_star = off.argmax(axis=1)
    h_star = off.argmax(axis=0)
    diag = np.diag(s)
    term_row = alpha - diag + off[np.arange(n), j_star]
    term_col = alpha - diag + off[h_star, np.arange(n)]
    value = np.maximum(term_row, 0.0).sum() + np.maximum(term_col, 0.0).sum()
    grad = np.zeros_like(s)
    active_row = term_row > 0
    active_col = term_col > 0
    idx = np.arange(n)
    np.subtract.at(grad, (idx[active_row], idx[active_row]), 1.0)
    np.add.at(grad, (idx[active_row], j_star[active_row]), 1.0)
    np.subtract.at(grad, (idx[active_col], idx[active_col]), 1.0)
    np.add.at(grad, (h_star[active_col], idx[active_col]), 1.0)
    return float(value), grad


def infonce_loss(s, tau: float):
    """Mean cross-entropy against one-hot targets, both directions."""
    s = _as_square(s)
    n = s.shape[0]
    p_v2t, p_t2v = matching_probs(s, tau)
    diag_v2t = np.clip(np.diag(p_v2t), 1e-300, None)
    diag_t2v = np.clip(np.diag(p_t2v), 1e-300, None)
    value = float(-(np.log(diag_v2t) + np.log(diag_t2v)).mean())
    eye = np.eye(n)
    grad = ((p_v2t - eye) + (p_t2v - eye)) / (n * tau)
    return value, grad


def _bounded_onehot_logs(n: int, eps: float) -> np.ndarray:
    logs = np.full((n, n), np.log(eps))
    np.fill_diagonal(logs, np.log1p(-eps))
    return logs


def rce_loss(s, tau: float, eps: float = 1e-7):
    """Cross-entropy with prediction and label roles swapped.

    The one-hot labels are bounded into ``[eps, 1 - eps]`` so every
    logarithm stays finite; predictions are the matching probabilities.
    """
    s = _as_square(s)
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    n = s.shape[0]
    p_v2t, p_t2v = matching_probs(s, tau)
    log_y = _bounded_onehot_logs(n, eps)
    value = float(-((p_v2t * log_y).sum() + (p_t2v * log_y).sum()) / n)
    grad_v2t = _rows_backward(p_v2t, -log_y, tau)
    grad_t2v = _rows_backward(p_t2v.T, -log_y, tau).T
    return value, (grad_v2t + grad_t2v) / n


def warmup_loss(s, tau: float, eps: float = 1e-7, rce_weight: float = 1.0):
    """Overconfidence-resistant warm-up objective: InfoNCE + weighted RCE."""
    v1, g1 = infonce_loss(s, tau)
    v2, g2 = rce_loss(s, tau, eps)
    return v1 + rce_weight * v2, g1 + rce_weight * g2


def ot_supervision_loss(pi_sup, cost):
    """Total transport cost charged at the supervised matching cells."""
    pi_sup = np.asarray(pi_sup, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if pi_sup.shape != cost.shape:
        raise ValueError(f"shape mismatch: {pi_sup.shape} vs {cost.shape}")
    return float((pi_sup * cost).sum()), pi_sup.copy()


def _floor_distribution(dist: np.ndarray) -> np.ndarray:
    floored = np.maximum(dist, _KL_FLOOR)
    return floored / floored.sum(axis=-1, keepdims=True)


def sym_kl(u, v, floor: float = _KL_FLOOR) -> float:
    """Symmetrized Kullback-Leibler divergence of two floored distributions."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = np.maximum(u, floor)
    u = u / u.sum()
    v = np.maximum(v, floor)
    v = v / v.sum()
    forward = float((u * np.log(u / v)).sum())
    backward = float((v * np.log(v / u)).sum())
    return 0.5 * (forward + backward)


def _kl_direction_terms(refined: np.ndarray, probs: np.ndarray, variant: str):
    """Per-row loss and d(loss)/d(probs) for one direction.

    ``refined`` rows are fixed targets; ``probs`` rows are model
    distributions. Both are floored and renormalized; the gradient treats
    the flooring as inactive, which it is away from softmax saturation.
    """
    r = _floor_distribution(refined)
    p = _floor_distribution(probs)
    if variant == "sym_kl":
        forward = (r * np.log(r / p)).sum(axis=1)
        backward = (p * np.log(p / r)).sum(axis=1)
        per_row = 0.5 * (forward + backward)
        dloss_dp = 0.5 * (-r / p + np.log(p / r) + 1.0)
    elif variant == "kl":
        per_row = (r * np.log(r / p)).sum(axis=1)
        dloss_dp = -r / p
    elif variant == "ce":
        per_row = -(r * np.log(p)).sum(axis=1)
        dloss_dp = -r / p
    else:
        raise ValueError(f"unknown rematch variant {variant!r}")
    return per_row, dloss_dp


def rematch_loss(refined_v2t, refined_t2v, s, tau: float, variant: str = "sym_kl"):
    """Divergence between refined alignments and the model's probabilities.

    ``refined_v2t`` rows and ``refined_t2v`` columns must be valid
    distributions (see :func:`rematch.transport.normalize_plan`). The
    default variant symmetrizes the KL divergence; ``"kl"`` keeps only the
    forward term and ``"ce"`` scores cross-entropy against the refined
    targets. Value is the batch mean.
    """
    s = _as_square(s)
    n = s.shape[0]
    refined_v2t = np.asarray(refined_v2t, dtype=np.float64)
    refined_t2v = np.asarray(refined_t2v, dtype=np.float64)
    if refined_v2t.shape != s.shape or refined_t2v.shape != s.shape:
        raise ValueError("refined alignments must match the similarity shape")
    if np.any(refined_v2t < 0) or np.any(refined_t2v < 0):
        raise ValueError("refined alignments must be nonnegative")
    if (np.abs(refined_v2t.sum(axis=1) - 1.0).max() > 1e-6
            or np.abs(refined_t2v.sum(axis=0) - 1.0).max() > 1e-6):
        raise ValueError("refined alignments must be normalized distributions")

    p_v2t, p_t2v = matching_probs(s, tau)
    row_terms, d_rows = _kl_direction_terms(refined_v2t, p_v2t, variant)
    col_terms, d_cols = _kl_direction_terms(refined_t2v.T, p_t2v.T, variant)
    value = float(row_terms.mean() + col_terms.mean())
    grad = (_rows_backward(p_v2t, d_rows, tau)
            + _rows_backward(p_t2v.T, d_cols, tau).T) / n
    return value, grad


def final_loss(s_matched, s_mismatched, refined_v2t, refined_t2v,
               cfg: LossConfig, variant: str = "sym_kl") -> float:
    """Training objective: triplet sum on the matched batch plus the
    rematching term on the mismatched batch.

    Either batch may be ``None``; the corresponding term contributes zero.
    """
    value = 0.0
    if s_matched is not None and np.asarray(s_matched).shape[0] >= 2:
        value += triplet_loss_batch(s_matched, cfg.alpha)[0]
    if s_mismatched is not None:
        value += rematch_loss(refined_v2t, refined_t2v, s_mismatched,
                              cfg.tau, variant)[0]
    return value


def label_smooth(y, gamma: float) -> np.ndarray:
    """Blend a one-hot vector with the uniform distribution over the rest."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("y must be a one-hot vector of length >= 2")
    if not np.isclose(y.sum(), 1.0) or not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be one-hot")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    n = y.size
    return (1.0 - gamma) * y + gamma / (n - 1) * (1.0 - y)
