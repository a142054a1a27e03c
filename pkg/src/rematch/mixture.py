"""Two-component beta mixture over normalized per-pair losses.

Early in training, pairs whose modalities genuinely match accumulate low
loss while mismatched pairs accumulate high loss, so the loss histogram is
bimodal. Fitting a two-component beta mixture by EM and reading the
posterior of the higher-mean component gives each pair a mismatch
probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, logsumexp

__all__ = [
    "BetaMixture",
    "beta_log_pdf",
    "fit_bmm",
    "posterior",
    "mismatch_probabilities",
    "partition",
]

_SHAPE_MIN = 1e-3
_SHAPE_MAX = 1e6


def beta_log_pdf(x, alpha: float, beta: float):
    """Log density of Beta(alpha, beta) at x, for x strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0) or np.any(x >= 1):
        raise ValueError("x must lie strictly inside (0, 1)")
    if alpha <= 0 or beta <= 0:
        raise ValueError("shape parameters must be positive")
    out = (alpha - 1.0) * np.log(x) + (beta - 1.0) * np.log1p(-x) - betaln(alpha, beta)
    return out if out.ndim else float(out)


@dataclass
class BetaMixture:
    """Fitted mixture; the `hi` component models mismatched pairs.

    `norm_lo`/`norm_hi` record the raw-loss range seen at fit time so later
    observations can be mapped into the same (0, 1) domain. A degenerate fit
    (all losses equal) is flagged and assigns mismatch probability 0
    everywhere.
    """

    alpha_lo: float
    beta_lo: float
    alpha_hi: float
    beta_hi: float
    weight_hi: float
    degenerate: bool = False
    norm_lo: float = 0.0
    norm_hi: float = 1.0
    delta: float = 1e-4
    loglik_trace: list = field(default_factory=list)

    @property
    def mean_lo(self) -> float:
        return self.alpha_lo / (self.alpha_lo + self.beta_lo)

    @property
    def mean_hi(self) -> float:
        return self.alpha_hi / (self.alpha_hi + self.beta_hi)

    def normalize(self, losses):
        """Map raw losses into the (0, 1) domain used at fit time."""
        losses = np.asarray(losses, dtype=np.float64)
        span = self.norm_hi - self.norm_lo
        if span <= 0:
            return np.full_like(losses, 0.5)
        unit = np.clip((losses - self.norm_lo) / span, 0.0, 1.0)
        return self.delta + (1.0 - 2.0 * self.delta) * unit


def _moment_match(x, weights):
    """Beta shapes from a weighted mean/variance (method of moments)."""
    total = weights.sum()
    mean = float((weights * x).sum() / total)
    var = float((weights * (x - mean) ** 2).sum() / total)
    mean = min(max(mean, 1e-6), 1.0 - 1e-6)
    var = min(max(var, 1e-10), mean * (1.0 - mean) * (1.0 - 1e-6))
    common = mean * (1.0 - mean) / var - 1.0
    alpha = np.clip(mean * common, _SHAPE_MIN, _SHAPE_MAX)
    beta = np.clip((1.0 - mean) * common, _SHAPE_MIN, _SHAPE_MAX)
    return float(alpha), float(beta)


def _log_joint(x, params):
    (a_lo, b_lo), (a_hi, b_hi), w_hi = params
    w_hi = min(max(w_hi, 1e-12), 1.0 - 1e-12)
    lo = np.log1p(-w_hi) + beta_log_pdf(x, a_lo, b_lo)
    hi = np.log(w_hi) + beta_log_pdf(x, a_hi, b_hi)
    return lo, hi


def fit_bmm(losses, em_iters: int = 50, tol: float = 1e-6,
            rng_seed: int = 0, delta: float = 1e-4) -> BetaMixture:
    """Fit the mixture by EM with moment-matching parameter updates.

    Losses are min-max normalized into [delta, 1 - delta] first.
    Responsibilities start from a median split; EM stops when the
    log-likelihood gain drops below ``tol``, when ``em_iters`` is reached,
    or when a moment update would decrease the log-likelihood (the update
    is then discarded, which keeps the recorded trace non-decreasing).
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size < 10:
        raise ValueError("need a flat vector of at least 10 losses")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")

    lo, hi = float(losses.min()), float(losses.max())
    if hi - lo < 1e-12:
        return BetaMixture(1.0, 1.0, 1.0, 1.0, weight_hi=0.0, degenerate=True,
                           norm_lo=lo, norm_hi=hi, delta=delta)

    x = delta + (1.0 - 2.0 * delta) * (losses - lo) / (hi - lo)

    resp_hi = (x > np.median(x)).astype(np.float64)
    if resp_hi.sum() == 0 or resp_hi.sum() == x.size:
        rng = np.random.default_rng(rng_seed)
        resp_hi = (rng.random(x.size) < 0.5).astype(np.float64)

    params = None
    trace: list[float] = []
    prev_ll = -np.inf
    for _ in range(em_iters):
        resp_lo = 1.0 - resp_hi
        if resp_hi.sum() < 1e-9 or resp_lo.sum() < 1e-9:
            break
        candidate = (
            _moment_match(x, resp_lo),
            _moment_match(x, resp_hi),
            float(resp_hi.mean()),
        )
        log_lo, log_hi = _log_joint(x, candidate)
        ll = float(logsumexp(np.stack([log_lo, log_hi]), axis=0).sum())
        if ll < prev_ll:
            break
        params = candidate
        trace.append(ll)
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
        resp_hi = np.exp(log_hi - np.logaddexp(log_lo, log_hi))

    if params is None:
        return BetaMixture(1.0, 1.0, 1.0, 1.0, weight_hi=0.0, degenerate=True,
                           norm_lo=lo, norm_hi=hi, delta=delta)

    (a_lo, b_lo), (a_hi, b_hi), w_hi = params
    if a_lo / (a_lo + b_lo) > a_hi / (a_hi + b_hi):
        (a_lo, b_lo), (a_hi, b_hi) = (a_hi, b_hi), (a_lo, b_lo)
        w_hi = 1.0 - w_hi
    return BetaMixture(a_lo, b_lo, a_hi, b_hi, weight_hi=w_hi,
                       norm_lo=lo, norm_hi=hi, delta=delta, loglik_trace=trace)


def posterior(bmm: BetaMixture, loss):
    """Probability that a normalized loss came from the higher-mean component."""
    if bmm.degenerate:
        return np.zeros_like(np.asarray(loss, dtype=np.float64)) if np.ndim(loss) else 0.0
    x = np.asarray(loss, dtype=np.float64)
    params = ((bmm.alpha_lo, bmm.beta_lo), (bmm.alpha_hi, bmm.beta_hi), bmm.weight_hi)
    log_lo, log_hi = _log_joint(x, params)
    w = np.exp(log_hi - np.logaddexp(log_lo, log_hi))
    return w if w.ndim else float(w)


def mismatch_probabilities(bmm: BetaMixture, raw_losses) -> np.ndarray:
    """Posterior mismatch probability for raw (unnormalized) losses."""
    if bmm.degenerate:
        return np.zeros(np.asarray(raw_losses).shape)
    return np.asarray(posterior(bmm, bmm.normalize(raw_losses)))


def partition(w, threshold: float = 0.5):
    """Split indices into (matched, mismatched) by thresholding posteriors.

    A pair lands in the mismatched set iff its posterior strictly exceeds
    the threshold; ties go to the matched side.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("w must be a vector")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("posteriors must lie in [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    mismatched = np.flatnonzero(w > threshold)
    matched = np.flatnonzero(w <= threshold)
    return matched, mismatched
