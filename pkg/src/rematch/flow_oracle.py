"""Exact small-instance transport solver used as an independent check.

Solves the masked transportation LP by integer min-cost flow on the bipartite
source/target graph (network simplex). Masses are rationalized by an integer
scale; costs are rationalized separately at fine resolution, so the returned
plan is an exact vertex of the transportation polytope and its objective is
the LP optimum up to the cost quantization (~1e-12 per unit mass).

Deliberately shares no code with the scaling solver in
:mod:`rematch.transport`.
"""

from __future__ import annotations

import numpy as np
import networkx as nx

from .transport import InfeasibleProblemError, TransportPlan, _as_cost, _as_mask, _as_measure

__all__ = ["exact_ot_oracle"]

_MAX_SIDE = 16
_COST_RESOLUTION = 10 ** 12


def exact_ot_oracle(cost, p, q, mask=None, mass_scale: int = 1) -> TransportPlan:
    """Exact minimum-cost transport on a small masked instance.

    Parameters
    ----------
    cost : (m, n) array_like
        Finite costs; may be negative.
    p, q : array_like
        Mass vectors that become integers after multiplication by
        ``mass_scale`` (verified by rounding and re-checking balance).
    mask : optional binary matrix; masked arcs are removed from the graph.
    mass_scale : int
        Denominator that rationalizes the masses.

    Returns
    -------
    TransportPlan
        ``converged`` is always True; ``iterations`` is 0. The objective
        ``(plan * cost).sum()`` is the LP optimum.

    Raises
    ------
    ValueError
        On oversized instances or when the rounded masses do not balance.
    InfeasibleProblemError
        When the masked bipartite graph admits no feasible flow.
    """
    cost = _as_cost(cost)
    p = _as_measure(p, "p")
    q = _as_measure(q, "q")
    m, n = cost.shape
    if m > _MAX_SIDE or n > _MAX_SIDE:
        raise ValueError(f"oracle is restricted to instances up to {_MAX_SIDE}x{_MAX_SIDE}")
    if p.shape[0] != m or q.shape[0] != n:
        raise ValueError("dimension mismatch between cost and measures")
    mask = _as_mask(mask, cost.shape)
    if not isinstance(mass_scale, (int, np.integer)) or mass_scale < 1:
        raise ValueError(f"mass_scale must be a positive integer, got {mass_scale!r}")

    int_p = np.rint(p * mass_scale).astype(np.int64)
    int_q = np.rint(q * mass_scale).astype(np.int64)
    if int_p.sum() != int_q.sum():
        raise ValueError(
            "rounding imbalance: scaled masses disagree "
            f"({int(int_p.sum())} vs {int(int_q.sum())})"
        )

    graph = nx.DiGraph()
    for i in range(m):
        graph.add_node(("s", i), demand=-int(int_p[i]))
    for j in range(n):
        graph.add_node(("t", j), demand=int(int_q[j]))
    for i in range(m):
        for j in range(n):
            if mask[i, j]:
                weight = int(round(cost[i, j] * _COST_RESOLUTION))
                graph.add_edge(("s", i), ("t", j), weight=weight)

    try:
        _, flow = nx.network_simplex(graph)
    except nx.NetworkXUnfeasible as exc:
        raise InfeasibleProblemError("masked flow problem is infeasible") from exc

    plan = np.zeros((m, n))
    for i in range(m):
        for (kind, j), units in flow.get(("s", i), {}).items():
            assert kind == "t"
            plan[i, j] = units / mass_scale
    return TransportPlan(plan=plan, converged=True, iterations=0)
