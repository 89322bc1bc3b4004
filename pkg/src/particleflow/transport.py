"""Entropy-regularised optimal transport between equal-size particle sets.

Both marginals are uniform (1/M). The solver runs in the log domain, so
small regularisers do not underflow during the iteration; the scaling
vectors u, v are exponentiated only when the plan is assembled, with the
usual gauge freedom used to balance their magnitudes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "TransportPlan",
    "exact_plan_bruteforce",
    "plan_entropy",
    "sinkhorn_plan",
]

_BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class TransportPlan:
    """Solved coupling between a current and a previous ensemble.

    plan[i, j] = u[i] * exp(-cost[i, j] / reg) * v[j], with row and column
    sums equal to 1/M up to `marginal_error`.
    """

    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    cost: np.ndarray
    reg: float
    marginal_error: float
    converged: bool
    iterations: int

    @property
    def size(self) -> int:
        return self.plan.shape[0]

    def objective(self) -> float:
        """Transport cost <plan, cost> of the solved coupling."""
        return float(np.sum(self.plan * self.cost))


def sinkhorn_plan(cost: np.ndarray, reg: float, max_iter: int = 10_000, tol: float = 1e-9) -> TransportPlan:
    """Solve the entropy-regularised coupling with uniform marginals.

    Alternates the two potential updates in the log domain until the worst
    marginal violation (L-infinity, both rows and columns) drops below
    `tol`. Hitting `max_iter` first is flagged on the result rather than
    raised, so callers can decide how to react.

    Args:
        cost: (M, M) finite cost matrix (squared distances in the samplers).
        reg: positive entropic regulariser.
        max_iter: iteration cap.
        tol: target on the worst marginal violation.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite values")
    if not reg > 0:
        raise ValueError(f"reg must be positive, got {reg}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    m = cost.shape[0]
    log_marginal = -np.log(m)

    f = np.zeros(m)
    g = np.zeros(m)
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        f = reg * (log_marginal - logsumexp((g[None, :] - cost) / reg, axis=1))
        g = reg * (log_marginal - logsumexp((f[:, None] - cost) / reg, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
        err = max(
            float(np.max(np.abs(plan.sum(axis=1) - 1.0 / m))),
            float(np.max(np.abs(plan.sum(axis=0) - 1.0 / m))),
        )
        if err <= tol:
            break

    # balance the gauge so neither scaling vector hogs the dynamic range
    shift = (np.max(f) - np.max(g)) / 2.0
    u = np.exp((f - shift) / reg)
    v = np.exp((g + shift) / reg)
    return TransportPlan(
        plan=plan,
        u=u,
        v=v,
        cost=cost,
        reg=float(reg),
        marginal_error=err,
        converged=bool(err <= tol),
        iterations=it,
    )


def exact_plan_bruteforce(cost: np.ndarray) -> TransportPlan:
    """Exact uniform-marginal optimal coupling by permutation enumeration.

    With equal uniform marginals the LP optimum sits on a permutation
    (Birkhoff), so for M <= 8 the search over all M! assignments is the
    ground truth the entropic solver is checked against. Ties resolve to
    the first minimiser in lexicographic permutation order.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    m = cost.shape[0]
    if m > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force is limited to M <= {_BRUTE_FORCE_LIMIT}, got {m}")
    rows = np.arange(m)
    best_perm = None
    best_cost = np.inf
    for perm in itertools.permutations(range(m)):
        c = float(cost[rows, perm].sum())
        if c < best_cost:
            best_cost = c
            best_perm = perm
    plan = np.zeros((m, m))
    plan[rows, best_perm] = 1.0 / m
    return TransportPlan(
        plan=plan,
        u=np.full(m, np.nan),
        v=np.full(m, np.nan),
        cost=cost,
        reg=0.0,
        marginal_error=0.0,
        converged=True,
        iterations=0,
    )


def plan_entropy(plan: np.ndarray) -> float:
    """sum_ij p_ij log p_ij with the 0 log 0 = 0 convention (<= 0)."""
    p = np.asarray(getattr(plan, "plan", plan), dtype=float)
    if np.any(p < 0):
        raise ValueError("plan entries must be non-negative")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask])))
