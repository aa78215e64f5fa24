"""Exact discrete optimal transport with squared-Euclidean ground cost.

The solver is a primal transportation simplex: the basis is a spanning tree
over the bipartite row/column graph with ``n + m - 1`` cells, potentials are
read off the tree, and pivots move flow around the cycle closed by the
entering cell. Pricing is Dantzig (most negative reduced cost, lowest flat
index on ties); after a run of degenerate pivots it falls back to Bland's rule,
which cannot cycle.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError, MarginalError, SolverError

ZERO_WEIGHT = 1e-12
MARGINAL_TOL = 1e-6
_DEGENERATE_RUN = 50


@dataclass
class WeightedPointCloud:
    """Tokens ``points`` (n x d) carrying a probability vector ``weights`` (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n = self.points.shape[0]
        if n < 1:
            raise ContractError("point cloud needs at least one point")
        if self.weights.shape[0] != n:
            raise DimensionError(f"{n} points but {self.weights.shape[0]} weights")
        if not np.all(np.isfinite(self.points)) or not np.all(np.isfinite(self.weights)):
            raise ContractError("point cloud contains non-finite values")
        if np.any(self.weights < 0):
            raise ContractError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractError(f"weights sum to {self.weights.sum():.12g}, expected 1")

    @classmethod
    def uniform(cls, points) -> "WeightedPointCloud":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))


@dataclass
class TransportPlan:
    coupling: np.ndarray
    total_cost: float
    # dual potentials; u[first active row] == 0
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.coupling))


def cost_matrix(x, y) -> np.ndarray:
    """D[i, j] = ||x_i - y_j||^2."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _northwest_corner(a, b):
    n, m = len(a), len(b)
    flow = np.zeros((n, m))
    cells = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        flow[i, j] = q
        cells.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return flow, cells


def _potentials(adj, C, n, m):
    u = np.zeros(n)
    v = np.zeros(m)
    seen = np.zeros(n + m, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        p = queue.popleft()
        for q in sorted(adj[p]):
            if seen[q]:
                continue
            seen[q] = True
            if p < n:
                v[q - n] = C[p, q - n] - u[p]
            else:
                u[q] = C[q, p - n] - v[p - n]
            queue.append(q)
    return u, v


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        p = queue.popleft()
        if p == goal:
            break
        for q in sorted(adj[p]):
            if q not in parent:
                parent[q] = p
                queue.append(q)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path


def _cell(p, q, n):
    return (p, q - n) if p < n else (q, p - n)


def _peel_flows(cells, a, b, n, m):
    """Recompute basic flows from the marginals alone (leaf elimination)."""
    adj = {k: set() for k in range(n + m)}
    for i, j in cells:
        adj[i].add(n + j)
        adj[n + j].add(i)
    resid = np.concatenate([a, b]).astype(np.float64)
    flow = np.zeros((n, m))
    leaves = deque(sorted(k for k in adj if len(adj[k]) == 1))
    remaining = len(cells)
    while remaining:
        p = leaves.popleft()
        if len(adj[p]) != 1:
            continue
        (q,) = adj[p]
        i, j = _cell(p, q, n)
        flow[i, j] = max(resid[p], 0.0)
        resid[q] -= resid[p]
        adj[p].discard(q)
        adj[q].discard(p)
        remaining -= 1
        if len(adj[q]) == 1:
            leaves.append(q)
    return flow


def _solve_active(a, b, C, max_iter):
    n, m = len(a), len(b)
    flow, cells = _northwest_corner(a, b)
    basic = np.zeros((n, m), dtype=bool)
    adj = {k: set() for k in range(n + m)}
    for i, j in cells:
        basic[i, j] = True
        adj[i].add(n + j)
        adj[n + j].add(i)

    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    degenerate_run = 0
    it = 0
    while True:
        u, v = _potentials(adj, C, n, m)
        reduced = C - u[:, None] - v[None, :]
        reduced[basic] = 0.0
        if degenerate_run >= _DEGENERATE_RUN:
            candidates = np.flatnonzero(reduced.ravel() < -tol)
            if candidates.size == 0:
                break
            flat = int(candidates[0])
        else:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -tol:
                break
        if it >= max_iter:
            raise SolverError(f"transport simplex did not converge after {it} pivots", iterations=it)
        it += 1
        ie, je = divmod(flat, m)
        path = _tree_path(adj, n + je, ie)
        minus = [_cell(path[k], path[k + 1], n) for k in range(0, len(path) - 1, 2)]
        plus = [_cell(path[k], path[k + 1], n) for k in range(1, len(path) - 1, 2)]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] <= theta)
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ie, je] = theta
        flow[leaving] = 0.0
        degenerate_run = degenerate_run + 1 if theta <= 0.0 else 0

        li, lj = leaving
        basic[li, lj] = False
        adj[li].discard(n + lj)
        adj[n + lj].discard(li)
        basic[ie, je] = True
        adj[ie].add(n + je)
        adj[n + je].add(ie)

    cells = [tuple(c) for c in np.argwhere(basic)]
    flow = _peel_flows(cells, a, b, n, m)
    return flow, u, v, it


def solve_transport(a, b, C, max_iter: int | None = None):
    """Exact OT between histograms ``a`` (n,) and ``b`` (m,) under cost ``C`` (n x m).

    Returns ``(coupling, u, v, iterations)``. Weights below 1e-12 are dropped
    before solving; their potentials are set to the tightest dual-feasible
    value, which is the one-sided derivative of the cost for adding mass there.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    C = np.asarray(C, dtype=np.float64)
    n, m = len(a), len(b)
    if C.shape != (n, m):
        raise DimensionError(f"cost matrix shape {C.shape} does not match marginals ({n}, {m})")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(C))):
        raise ContractError("non-finite input to transport solver")
    if np.any(a < 0) or np.any(b < 0):
        raise MarginalError("negative marginal weight")
    if abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise MarginalError(f"marginal masses differ: {a.sum():.12g} vs {b.sum():.12g}")

    # Solve in a canonical orientation so that swapping the two sides returns
    # the bitwise transpose of the same plan.
    if (m, b.tobytes(), C.T.tobytes()) < (n, a.tobytes(), C.tobytes()):
        G, v, u, it = _solve_oriented(b, a, np.ascontiguousarray(C.T), max_iter)
        G = G.T.copy()
        shift = u[np.flatnonzero(a >= ZERO_WEIGHT)[0]]
        return G, u - shift, v + shift, it
    return _solve_oriented(a, b, C, max_iter)


def _solve_oriented(a, b, C, max_iter):
    n, m = len(a), len(b)
    a = np.where(a < ZERO_WEIGHT, 0.0, a)
    b = np.where(b < ZERO_WEIGHT, 0.0, b)
    rows = np.flatnonzero(a)
    cols = np.flatnonzero(b)
    if rows.size == 0 or cols.size == 0:
        raise MarginalError("all marginal weights are zero")
    a_act = a[rows]
    b_act = b[cols] * (a_act.sum() / b[cols].sum())
    C_act = C[np.ix_(rows, cols)]
    if max_iter is None:
        max_iter = 50 * (len(rows) + len(cols)) ** 2 + 1000

    flow_act, u_act, v_act, it = _solve_active(a_act, b_act, C_act, max_iter)

    coupling = np.zeros((n, m))
    coupling[np.ix_(rows, cols)] = flow_act
    u = np.empty(n)
    v = np.empty(m)
    u[rows] = u_act
    v[cols] = v_act
    dropped_rows = np.setdiff1d(np.arange(n), rows)
    dropped_cols = np.setdiff1d(np.arange(m), cols)
    for i in dropped_rows:
        u[i] = np.min(C[i, cols] - v[cols])
    # columns last, against every row, so dropped x dropped cells stay feasible
    for j in dropped_cols:
        v[j] = np.min(C[:, j] - u)
    return coupling, u, v, it


def emd_exact(alpha: WeightedPointCloud, beta: WeightedPointCloud, max_iter: int | None = None) -> TransportPlan:
    """Optimal coupling between two weighted clouds under squared-L2 cost."""
    D = cost_matrix(alpha.points, beta.points)
    coupling, u, v, it = solve_transport(alpha.weights, beta.weights, D, max_iter=max_iter)
    # exactly rounded sum: the value does not depend on the orientation of the problem
    return TransportPlan(coupling, math.fsum((coupling * D).ravel()), u, v, it)


def emd_loss_grad(alpha: WeightedPointCloud, beta: WeightedPointCloud, plan: TransportPlan | None = None):
    """Envelope gradient of the EMD value w.r.t. the point positions.

    Holds the optimal coupling fixed: dL/dx_i = sum_j g_ij 2 (x_i - y_j).
    Returns ``(grad_x, grad_y)``.
    """
    if plan is None:
        plan = emd_exact(alpha, beta)
    G = plan.coupling
    x, y = alpha.points, beta.points
    gx = 2.0 * (G.sum(axis=1)[:, None] * x - G @ y)
    gy = 2.0 * (G.sum(axis=0)[:, None] * y - G.T @ x)
    return gx, gy


def emd_node(x, y, alpha=None, beta=None) -> ad.Node:
    """EMD value as a graph node, differentiable w.r.t. points and weights.

    ``alpha``/``beta`` may be 1xn / 1xm nodes, arrays, or ``None`` for uniform.
    Gradients w.r.t. the weights are the dual potentials.
    """
    x, y = ad.as_node(x), ad.as_node(y)
    n, m = x.shape[0], y.shape[0]
    alpha = ad.as_node(np.full((1, n), 1.0 / n) if alpha is None else alpha)
    beta = ad.as_node(np.full((1, m), 1.0 / m) if beta is None else beta)
    if alpha.value.size != n or beta.value.size != m:
        raise DimensionError("weight vector length does not match token count")
    D = cost_matrix(x.value, y.value)
    G, u, v, _ = solve_transport(alpha.value.ravel(), beta.value.ravel(), D)
    xv, yv = x.value, y.value

    def backward(g):
        s = g[0, 0]
        gx = 2.0 * s * (G.sum(axis=1)[:, None] * xv - G @ yv)
        gy = 2.0 * s * (G.sum(axis=0)[:, None] * yv - G.T @ xv)
        return gx, gy, s * u.reshape(alpha.shape), s * v.reshape(beta.shape)

    node = ad.custom(math.fsum((G * D).ravel()), (x, y, alpha, beta), backward, op="emd")
    return node
