"""Masked entropic transport, step by step.

Shows how the scaling solver couples two mass vectors through a cost
matrix, how a binary mask closes individual cells, and how closely the
entropic plan tracks the exact linear-programming optimum as the
regularization shrinks.

Run:  python3 demos/01_masked_transport.py
"""

import numpy as np

from rematch.flow_oracle import exact_ot_oracle
from rematch.transport import SinkhornConfig, sinkhorn

np.set_printoptions(precision=3, suppress=True)

# --- a tiny instance -------------------------------------------------------
# Four suppliers, four consumers, equal mass everywhere. The cost matrix is
# random, so the optimal coupling is some permutation of the mass.
rng = np.random.default_rng(7)
cost = rng.uniform(0, 1, (4, 4))
marginal = np.full(4, 0.25)
print("cost matrix:")
print(cost)

plan = sinkhorn(cost, marginal, marginal, cfg=SinkhornConfig(lam=0.05))
print("\nentropic plan (lam=0.05):")
print(plan.plan)
print(f"converged={plan.converged} after {plan.iterations} iterations")
print("row sums:", plan.plan.sum(axis=1), " column sums:", plan.plan.sum(axis=0))

# --- the exact optimum for comparison --------------------------------------
# The flow solver computes the true minimum-cost coupling; the entropic
# objective approaches it from above as lam decreases.
exact = exact_ot_oracle(cost, marginal, marginal, mass_scale=4)
optimum = (exact.plan * cost).sum()
print(f"\nexact optimum: {optimum:.6f}")
print(f"{'lam':>8} {'objective':>12} {'excess':>12}")
for lam in (0.5, 0.1, 0.02, 0.005, 0.001):
    result = sinkhorn(cost, marginal, marginal,
                      cfg=SinkhornConfig(lam=lam, max_iter=20000, tol=1e-9))
    objective = (result.plan * cost).sum()
    print(f"{lam:>8} {objective:>12.6f} {objective - optimum:>12.2e}")

# --- masking ----------------------------------------------------------------
# Zeroing the diagonal of the mask forbids every cell (i, i): useful when
# the diagonal pairing is exactly what should NOT be reinforced.
mask = 1 - np.eye(4, dtype=int)
masked = sinkhorn(cost, marginal, marginal, mask,
                  SinkhornConfig(lam=0.02, max_iter=20000))
print("\nplan with the diagonal masked (masked cells are exactly zero):")
print(masked.plan)
assert np.all(masked.plan[np.eye(4, dtype=bool)] == 0.0)
