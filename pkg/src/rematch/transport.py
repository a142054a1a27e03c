"""Entropy-regularized optimal transport with plan masking and partial transport.

The solver couples two discrete mass distributions through a cost matrix,
optionally forbidding individual cells via a binary mask, and supports a
partial variant that moves only a fixed mass budget. The partial problem is
reduced to a standard balanced problem by appending one virtual row and one
virtual column that absorb the untransported mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "InfeasibleProblemError",
    "SinkhornConfig",
    "TransportPlan",
    "sinkhorn",
    "extend_partial",
    "partial_ot",
    "normalize_plan",
    "marginal_violation",
]

# Below this regularization strength the plain scaling iteration underflows
# for O(1) costs, so the same fixed point is computed in the log domain.
_LOG_DOMAIN_THRESHOLD = 0.05


class InfeasibleProblemError(ValueError):
    """Raised when the masked transport problem admits no feasible plan."""


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver settings.

    Parameters
    ----------
    lam : float
        Entropic regularization strength. Must be positive.
    max_iter : int
        Iteration cap for the alternating scaling loop.
    tol : float
        Convergence threshold on the worst marginal violation of the
        current plan.
    kernel_floor : float
        Floor applied to unmasked kernel entries before divisions in the
        plain-scaling domain. Masked entries stay exactly zero.
    """

    lam: float
    max_iter: int = 1000
    tol: float = 1e-9
    kernel_floor: float = 1e-300

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.kernel_floor < 0:
            raise ValueError("kernel_floor must be nonnegative")


@dataclass(frozen=True)
class TransportPlan:
    """A (possibly partial) transport plan with convergence metadata."""

    plan: np.ndarray
    converged: bool
    iterations: int

    @property
    def total_mass(self) -> float:
        return float(self.plan.sum())


def _as_measure(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(x < 0):
        raise ValueError(f"{name} contains negative mass")
    if x.sum() <= 0:
        raise ValueError(f"{name} carries no mass")
    return x


def _as_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost contains non-finite entries")
    return cost


def _as_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match cost shape {shape}")
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError("mask must be binary")
    return mask.astype(bool)


def marginal_violation(plan: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """Worst absolute deviation of the plan's marginals from (p, q)."""
    row = np.abs(plan.sum(axis=1) - p).max()
    col = np.abs(plan.sum(axis=0) - q).max()
    return float(max(row, col))


def _check_feasible(active: np.ndarray, p: np.ndarray, q: np.ndarray, tol: float):
    """Every positive-mass row/column needs at least one usable kernel cell."""
    dead_rows = (~active.any(axis=1)) & (p > tol)
    if dead_rows.any():
        raise InfeasibleProblemError(
            f"rows {np.flatnonzero(dead_rows).tolist()} carry mass but have no "
            "unmasked kernel entries"
        )
    dead_cols = (~active.any(axis=0)) & (q > tol)
    if dead_cols.any():
        raise InfeasibleProblemError(
            f"columns {np.flatnonzero(dead_cols).tolist()} carry mass but have no "
            "unmasked kernel entries"
        )


# Alternating scaling stalls at O(1/iteration) on near-degenerate instances
# (permutation-support optima), so after this many sweeps the remaining
# equilibration runs as damped Newton on the same marginal equations. The
# fixed point and the diag(a) K diag(b) output form are unchanged.
_POLISH_AFTER = 60
# Dense Newton systems above this size would dominate runtime; such instances
# stay on pure scaling sweeps.
_POLISH_MAX_DIM = 800


def _newton_polish(log_kernel, p, q, log_a, log_b, budget, tol):
    """Equilibrate marginals of exp(log_a + log_kernel + log_b) by Newton steps.

    Works on the scaling exponents directly; zero-mass rows/columns are
    frozen at -inf. Returns updated exponents, iterations spent, and whether
    the tolerance was reached.
    """
    m, n = log_kernel.shape
    free_r = p > 0
    free_c = q > 0
    idx_r = np.flatnonzero(free_r)
    idx_c = np.flatnonzero(free_c)
    k = idx_r.size + idx_c.size
    spent = 0
    converged = False
    while spent < budget:
        spent += 1
        plan = np.exp(log_a[:, None] + log_kernel + log_b[None, :])
        rows = plan.sum(axis=1)
        cols = plan.sum(axis=0)
        err = max(np.abs(rows - p).max(), np.abs(cols - q).max())
        if err <= tol:
            converged = True
            break
        residual = np.concatenate([rows[idx_r] - p[idx_r], cols[idx_c] - q[idx_c]])
        jac = np.zeros((k, k))
        nr = idx_r.size
        jac[:nr, :nr] = np.diag(rows[idx_r])
        jac[:nr, nr:] = plan[np.ix_(idx_r, idx_c)]
        jac[nr:, :nr] = plan[np.ix_(idx_r, idx_c)].T
        jac[nr:, nr:] = np.diag(cols[idx_c])
        damping = 1e-12 * max(rows.max(), cols.max(), 1e-30)
        try:
            delta = np.linalg.solve(jac + damping * np.eye(k), -residual)
        except np.linalg.LinAlgError:
            break
        step = 1.0
        improved = False
        for _ in range(60):
            cand_a = log_a.copy()
            cand_b = log_b.copy()
            cand_a[idx_r] += step * delta[:nr]
            cand_b[idx_c] += step * delta[nr:]
            with np.errstate(over="ignore"):
                cand_plan = np.exp(cand_a[:, None] + log_kernel + cand_b[None, :])
                cand_err = (marginal_violation(cand_plan, p, q)
                            if np.all(np.isfinite(cand_plan)) else np.inf)
            if np.isfinite(cand_err) and cand_err < err:
                log_a, log_b = cand_a, cand_b
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return log_a, log_b, spent, converged


def _finish(log_kernel, p, q, log_a, log_b, iterations, converged, cfg):
    """Optionally polish a stalled run, then realize the plan.

    If the polish itself stalls (line-search failure), the remaining budget
    is spent on further log-domain scaling sweeps so the iteration cap is
    honored either way.
    """
    small = sum(log_kernel.shape) <= _POLISH_MAX_DIM
    if not converged and iterations < cfg.max_iter and small:
        log_a, log_b, spent, converged = _newton_polish(
            log_kernel, p, q, log_a, log_b, cfg.max_iter - iterations, cfg.tol
        )
        iterations += spent
    if not converged and iterations < cfg.max_iter:
        with np.errstate(divide="ignore"):
            log_p = np.log(p)
            log_q = np.log(q)
        zero_p = np.isneginf(log_p)
        zero_q = np.isneginf(log_q)
        while iterations < cfg.max_iter:
            iterations += 1
            row_lse = logsumexp(log_kernel + log_b[None, :], axis=1)
            log_a = np.where(zero_p, -np.inf, log_p - row_lse)
            col_lse = logsumexp(log_kernel + log_a[:, None], axis=0)
            log_b = np.where(zero_q, -np.inf, log_q - col_lse)
            plan = np.exp(log_a[:, None] + log_kernel + log_b[None, :])
            if marginal_violation(plan, p, q) <= cfg.tol:
                converged = True
                break
    plan = np.exp(log_a[:, None] + log_kernel + log_b[None, :])
    return plan, converged, iterations


def _sinkhorn_plain(cost, p, q, mask, cfg: SinkhornConfig):
    """Multiplicative scaling; used when the kernel cannot underflow."""
    kernel = np.where(mask, np.exp(-cost / cfg.lam), 0.0)
    kernel = np.where(mask, np.maximum(kernel, cfg.kernel_floor), 0.0)
    _check_feasible(kernel > cfg.kernel_floor, p, q, cfg.tol)

    pos_p = p > 0
    pos_q = q > 0
    a = np.zeros(p.shape[0])
    b = np.ones(q.shape[0])
    iterations = 0
    converged = False
    sweeps = min(cfg.max_iter, _POLISH_AFTER if sum(cost.shape) <= _POLISH_MAX_DIM
                 else cfg.max_iter)
    for iterations in range(1, sweeps + 1):
        kb = kernel @ b
        if np.any(pos_p & (kb <= 0)):
            raise InfeasibleProblemError("scaling collapsed: a-update divides by zero")
        a = np.divide(p, kb, out=np.zeros_like(p), where=pos_p)
        ka = kernel.T @ a
        if np.any(pos_q & (ka <= 0)):
            raise InfeasibleProblemError("scaling collapsed: b-update divides by zero")
        b = np.divide(q, ka, out=np.zeros_like(q), where=pos_q)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InfeasibleProblemError("scaling diverged to non-finite values")
        plan = a[:, None] * kernel * b[None, :]
        if marginal_violation(plan, p, q) <= cfg.tol:
            converged = True
            break
    with np.errstate(divide="ignore"):
        log_kernel = np.log(kernel)
        log_a = np.log(a)
        log_b = np.log(b)
    return _finish(log_kernel, p, q, log_a, log_b, iterations, converged, cfg)


def _sinkhorn_log(cost, p, q, mask, cfg: SinkhornConfig):
    """Log-domain scaling; preserves the plain fixed point for small lam."""
    log_kernel = np.where(mask, -cost / cfg.lam, -np.inf)
    _check_feasible(np.isfinite(log_kernel), p, q, cfg.tol)

    with np.errstate(divide="ignore"):
        log_p = np.log(p)
        log_q = np.log(q)
    zero_p = np.isneginf(log_p)
    zero_q = np.isneginf(log_q)
    log_a = np.where(zero_p, -np.inf, 0.0)
    log_b = np.where(zero_q, -np.inf, 0.0)
    iterations = 0
    converged = False
    sweeps = min(cfg.max_iter, _POLISH_AFTER if sum(cost.shape) <= _POLISH_MAX_DIM
                 else cfg.max_iter)
    for iterations in range(1, sweeps + 1):
        row_lse = logsumexp(log_kernel + log_b[None, :], axis=1)
        log_a = np.where(zero_p, -np.inf, log_p - row_lse)
        if np.any(np.isposinf(log_a) | np.isnan(log_a)):
            raise InfeasibleProblemError("scaling collapsed: a-update unbounded")
        col_lse = logsumexp(log_kernel + log_a[:, None], axis=0)
        log_b = np.where(zero_q, -np.inf, log_q - col_lse)
        if np.any(np.isposinf(log_b) | np.isnan(log_b)):
            raise InfeasibleProblemError("scaling collapsed: b-update unbounded")
        plan = np.exp(log_a[:, None] + log_kernel + log_b[None, :])
        if marginal_violation(plan, p, q) <= cfg.tol:
            converged = True
            break
    return _finish(log_kernel, p, q, log_a, log_b, iterations, converged, cfg)


def sinkhorn(cost, p, q, mask=None, cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Solve the entropy-regularized, optionally masked, balanced problem.

    Alternating row/column scaling of the masked Gibbs kernel
    ``K = mask * exp(-cost / lam)``. The returned plan is
    ``diag(a) K diag(b)``; masked cells are exactly zero. Iteration stops at
    the first of convergence (worst marginal violation <= ``cfg.tol``) or
    ``cfg.max_iter``.

    Parameters
    ----------
    cost : (m, n) array_like
        Finite transport costs per unit mass.
    p, q : array_like
        Source and target mass vectors; totals must agree within ``cfg.tol``.
    mask : (m, n) array_like of {0, 1}, optional
        Cells where transport is forbidden (0). Defaults to all-ones.
    cfg : SinkhornConfig

    Returns
    -------
    TransportPlan

    Raises
    ------
    ValueError
        On dimension mismatch or mass imbalance beyond ``cfg.tol``.
    InfeasibleProblemError
        When a positive-mass row/column has no usable kernel entry, or the
        scaling collapses.
    """
    if cfg is None:
        raise ValueError("cfg is required")
    cost = _as_cost(cost)
    p = _as_measure(p, "p")
    q = _as_measure(q, "q")
    m, n = cost.shape
    if p.shape[0] != m or q.shape[0] != n:
        raise ValueError(
            f"dimension mismatch: cost is {m}x{n}, p has {p.shape[0]}, q has {q.shape[0]}"
        )
    mask = _as_mask(mask, cost.shape)
    if abs(p.sum() - q.sum()) > max(cfg.tol, 1e-12 * p.sum()):
        raise ValueError(
            f"mass imbalance: sum(p)={p.sum():.17g} vs sum(q)={q.sum():.17g}"
        )

    if cfg.lam < _LOG_DOMAIN_THRESHOLD:
        plan, converged, iterations = _sinkhorn_log(cost, p, q, mask, cfg)
    else:
        plan, converged, iterations = _sinkhorn_plain(cost, p, q, mask, cfg)
    plan = np.where(mask, plan, 0.0)
    return TransportPlan(plan=plan, converged=converged, iterations=iterations)


def default_xi(cost: np.ndarray) -> float:
    """Virtual-node border cost on the scale of the real costs."""
    cost = np.asarray(cost, dtype=np.float64)
    return 0.1 * (cost.max() - cost.min() + 1.0)


def default_a_big(cost: np.ndarray) -> float:
    """Corner penalty strictly above every real cost."""
    return float(np.asarray(cost).max()) + 1.0


def extend_partial(cost, p, q, mask=None, rho: float = 0.0, xi: float | None = None,
                   a_big: float | None = None):
    """Reduce a partial problem to a balanced one via one virtual node per side.

    The cost matrix gains a border row/column priced at ``xi`` and a corner
    cell priced at ``2 * xi + a_big``; the border and corner are never
    masked. The virtual column absorbs ``|p| - rho`` source mass and the
    virtual row supplies ``|q| - rho`` target mass, so exactly ``rho`` moves
    inside the original block at the optimum.

    Returns
    -------
    (cost_ext, p_ext, q_ext, mask_ext)
        Arrays of shape (m+1, n+1), (m+1,), (n+1,), (m+1, n+1).
    """
    cost = _as_cost(cost)
    p = _as_measure(p, "p")
    q = _as_measure(q, "q")
    m, n = cost.shape
    if p.shape[0] != m or q.shape[0] != n:
        raise ValueError("dimension mismatch between cost and measures")
    mask = _as_mask(mask, cost.shape)

    mass_p = p.sum()
    mass_q = q.sum()
    budget = min(mass_p, mass_q)
    if rho < 0 or rho > budget + 1e-12:
        raise ValueError(f"rho={rho} outside [0, min(|p|, |q|)={budget:.17g}]")
    rho = min(rho, budget)
    if xi is None:
        xi = default_xi(cost)
    if a_big is None:
        a_big = default_a_big(cost)
    if xi <= 0:
        raise ValueError(f"xi must be positive, got {xi}")
    if a_big <= cost.max():
        raise ValueError(f"a_big={a_big} must exceed max cost {cost.max()}")

    cost_ext = np.empty((m + 1, n + 1))
    cost_ext[:m, :n] = cost
    cost_ext[:m, n] = xi
    cost_ext[m, :n] = xi
    cost_ext[m, n] = 2.0 * xi + a_big

    p_ext = np.concatenate([p, [mass_q - rho]])
    q_ext = np.concatenate([q, [mass_p - rho]])

    mask_ext = np.ones((m + 1, n + 1), dtype=bool)
    mask_ext[:m, :n] = mask
    return cost_ext, p_ext, q_ext, mask_ext


def partial_ot(cost, p, q, mask=None, rho: float = 0.0,
               cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Move exactly ``rho`` mass at minimal entropic cost, masked cells closed.

    Solves the virtual-node extension with :func:`sinkhorn` and returns the
    original block of the extended plan. Row sums never exceed ``p`` and
    column sums never exceed ``q``; the block total is ``rho`` up to solver
    tolerance.
    """
    cost = _as_cost(cost)
    p = _as_measure(p, "p")
    q = _as_measure(q, "q")
    mask = _as_mask(mask, cost.shape)
    if rho == 0:
        return TransportPlan(plan=np.zeros(cost.shape), converged=True, iterations=0)
    cost_ext, p_ext, q_ext, mask_ext = extend_partial(cost, p, q, mask, rho)
    solved = sinkhorn(cost_ext, p_ext, q_ext, mask_ext, cfg)
    m, n = cost.shape
    block = np.where(mask_ext, solved.plan, 0.0)[:m, :n]
    block = np.where(mask, block, 0.0)
    return TransportPlan(plan=block, converged=solved.converged,
                         iterations=solved.iterations)


def normalize_plan(plan, direction: str, floor: float = 1e-12, mask=None) -> np.ndarray:
    """Normalize a plan into row- or column-stochastic form.

    Rows (or columns) whose pre-normalization sum is at most
    ``floor * length`` are replaced by the uniform distribution over their
    unmasked cells, so untransported slices still yield valid distributions.

    Parameters
    ----------
    plan : (m, n) array_like of nonnegative reals
    direction : {"row", "column"}
    floor : float
        Per-cell scale below which a slice counts as untransported.
    mask : optional binary matrix restricting the uniform fallback support.
    """
    plan = np.asarray(plan, dtype=np.float64)
    if plan.ndim != 2:
        raise ValueError("plan must be a matrix")
    if np.any(plan < 0):
        raise ValueError("plan entries must be nonnegative")
    if floor < 0:
        raise ValueError("floor must be nonnegative")
    if direction not in ("row", "column"):
        raise ValueError(f"direction must be 'row' or 'column', got {direction!r}")
    mask = _as_mask(mask, plan.shape)

    transposed = direction == "column"
    work = plan.T if transposed else plan
    support = (mask.T if transposed else mask).astype(np.float64)

    sums = work.sum(axis=1)
    length = work.shape[1]
    low = sums <= floor * length
    counts = support.sum(axis=1)
    if np.any(low & (counts == 0)):
        raise ValueError("cannot fall back to uniform: a slice has no unmasked cells")

    safe = np.where(low, 1.0, sums)
    out = work / safe[:, None]
    fallback = support / np.where(counts == 0, 1.0, counts)[:, None]
    out = np.where(low[:, None], fallback, out)
    return out.T if transposed else out
